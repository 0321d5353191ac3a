#include "mmstack/config.hpp"

#include <cstdio>
#include <set>

#include "mmstack/errors.hpp"
#include "mmstack/feature_io.hpp"
#include "mmstack/random.hpp"

namespace mmstack {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// A misspelled key would otherwise fall back to its default silently.
void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T read_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::vector<LearnerSpec> parse_learner_list(const json& j) {
  std::vector<LearnerSpec> out;
  if (j.is_array()) {
    for (const json& e : j) out.push_back(LearnerSpec::from_json(e));
  } else {
    out.push_back(LearnerSpec::from_json(j));
  }
  if (out.empty()) throw ValidationError("config: learner list must not be empty");
  return out;
}

ordered_json learner_list_json(const std::vector<LearnerSpec>& specs) {
  ordered_json out = ordered_json::array();
  for (const LearnerSpec& s : specs) out.push_back(s.to_json());
  return out;
}

void validate_learner_list(const std::vector<LearnerSpec>& specs, const std::string& where) {
  if (specs.empty()) throw ValidationError("config: " + where + " has no learners");
  std::set<std::string> labels;
  for (const LearnerSpec& s : specs) {
    s.validate();
    if (!labels.insert(s.label()).second) {
      throw ValidationError("config: " + where + " lists learner '" + s.label() + "' twice");
    }
  }
}

}  // namespace

std::vector<LearnerSpec> default_text_learner_specs() {
  LearnerSpec logistic;
  logistic.kind = LearnerKind::kLogistic;
  logistic.hidden.clear();
  logistic.dropout.clear();
  logistic.train.learning_rate = 1e-2;
  LearnerSpec hinge = logistic;
  hinge.kind = LearnerKind::kSquaredHinge;
  return {logistic, hinge};
}

void RunConfig::validate() const {
  if (manifest.has_value() == synth.has_value()) {
    throw ValidationError("config: set exactly one of dataset.manifest and dataset.synth");
  }
  if (synth) synth->validate();
  if (k_folds < 2) throw ValidationError("config: k_folds must be >= 2");
  if (synth && synth->num_samples < 2 * k_folds) {
    throw ValidationError("config: synth num_samples must be at least 2 * k_folds (" + std::to_string(2 * k_folds) + ")");
  }
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ValidationError("config: holdout_fraction must lie in (0, 1)");
  }
  if (threads < 1) throw ValidationError("config: threads must be >= 1");
  std::set<std::string> seen;
  for (const std::string& m : modalities) {
    if (m == kExtraToken) throw ValidationError("config: 'extra' is reserved and cannot name a modality");
    if (!seen.insert(m).second) throw ValidationError("config: modality '" + m + "' listed twice");
  }
  default_learner.validate();
  validate_learner_list(default_text_learners, "learners.text_default");
  for (const auto& [name, specs] : learners) validate_learner_list(specs, "learners." + name);
  stacking(use_extra).validate();
  for (const auto& rung : ladder) {
    if (rung.empty()) throw ValidationError("config: ladder entries must name at least one modality");
    std::set<std::string> names(rung.begin(), rung.end());
    if (names.size() != rung.size()) throw ValidationError("config: ladder entry repeats a modality");
    if (names.size() == 1 && names.count(kExtraToken)) {
      throw ValidationError("config: ladder entry needs at least one modality besides extra");
    }
  }
  std::set<FusionKind> kinds(fusion_strategies.begin(), fusion_strategies.end());
  if (kinds.size() != fusion_strategies.size()) throw ValidationError("config: fusion strategy listed twice");
  fusion.validate();
  metrics.gap.validate();
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["version"] = kRunConfigVersion;
  ordered_json dataset;
  if (manifest) dataset["manifest"] = manifest->generic_string();
  if (synth) dataset["synth"] = synth->to_json();
  j["dataset"] = std::move(dataset);
  j["seed"] = seed;
  j["k_folds"] = k_folds;
  j["holdout_fraction"] = holdout_fraction;
  j["modalities"] = modalities;
  ordered_json learner_json;
  learner_json["default"] = default_learner.to_json();
  learner_json["text_default"] = learner_list_json(default_text_learners);
  for (const auto& [name, specs] : learners) learner_json[name] = learner_list_json(specs);
  j["learners"] = std::move(learner_json);
  ordered_json meta;
  meta["hidden"] = meta_hidden;
  meta["dropout"] = meta_dropout;
  meta["train"] = meta_train.to_json();
  meta["use_extra"] = use_extra;
  meta["stratified"] = stratified;
  j["meta"] = std::move(meta);
  j["ladder"] = ladder;
  ordered_json fusion_json = fusion.to_json();
  ordered_json strategies = ordered_json::array();
  for (FusionKind k : fusion_strategies) strategies.push_back(to_string(k));
  fusion_json["strategies"] = std::move(strategies);
  j["fusion"] = std::move(fusion_json);
  j["metrics"] = metrics.to_json();
  j["output_dir"] = output_dir.generic_string();
  j["threads"] = threads;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    reject_unknown_keys(j,
                        {"version", "dataset", "seed", "k_folds", "holdout_fraction", "modalities", "learners", "meta",
                         "ladder", "fusion", "metrics", "output_dir", "threads"},
                        "config");
    const int version = read_or<int>(j, "version", kRunConfigVersion);
    if (version != kRunConfigVersion) {
      throw ValidationError("config version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kRunConfigVersion) + ")");
    }
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      reject_unknown_keys(d, {"manifest", "synth"}, "config dataset");
      if (d.contains("manifest")) c.manifest = d.at("manifest").get<std::string>();
      if (d.contains("synth")) {
        const json& s = d.at("synth");
        c.synth = s.is_string() && s.get<std::string>() == "default" ? default_synth_config()
                                                                        : SynthConfig::from_json(s);
      }
    } else {
      c.synth = default_synth_config();
    }
    c.seed = read_or<std::uint64_t>(j, "seed", c.seed);
    c.k_folds = read_or<std::size_t>(j, "k_folds", c.k_folds);
    c.holdout_fraction = read_or<double>(j, "holdout_fraction", c.holdout_fraction);
    c.modalities = read_or<std::vector<std::string>>(j, "modalities", c.modalities);
    if (j.contains("learners")) {
      for (const auto& [name, spec] : j.at("learners").items()) {
        if (name == "default") c.default_learner = LearnerSpec::from_json(spec);
        else if (name == "text_default") c.default_text_learners = parse_learner_list(spec);
        else c.learners.emplace(name, parse_learner_list(spec));
      }
    }
    if (j.contains("meta")) {
      const json& m = j.at("meta");
      reject_unknown_keys(m, {"hidden", "dropout", "train", "use_extra", "stratified"}, "config meta");
      c.meta_hidden = read_or(m, "hidden", c.meta_hidden);
      c.meta_dropout = m.contains("dropout") && m.at("dropout").is_number()
                           ? std::vector<double>(c.meta_hidden.size(), m.at("dropout").get<double>())
                           : read_or(m, "dropout", c.meta_dropout);
      if (m.contains("train")) c.meta_train = TrainConfig::from_json(m.at("train"));
      c.use_extra = read_or(m, "use_extra", c.use_extra);
      c.stratified = read_or(m, "stratified", c.stratified);
    }
    c.ladder = read_or(j, "ladder", c.ladder);
    if (j.contains("fusion")) {
      const json& f = j.at("fusion");
      c.fusion = FusionConfig::from_json(f);
      if (f.contains("strategies")) {
        c.fusion_strategies.clear();
        for (const json& s : f.at("strategies")) c.fusion_strategies.push_back(parse_fusion_kind(s.get<std::string>()));
      }
    }
    if (j.contains("metrics")) c.metrics = MetricConfig::from_json(j.at("metrics"));
    c.output_dir = read_or<std::string>(j, "output_dir", c.output_dir.generic_string());
    c.threads = read_or<std::size_t>(j, "threads", c.threads);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<LearnerSpec> RunConfig::learners_for(const std::string& modality, bool is_text) const {
  auto it = learners.find(modality);
  if (it != learners.end()) return it->second;
  if (is_text) return default_text_learners;
  return {default_learner};
}

StackingConfig RunConfig::stacking(bool with_extra) const {
  StackingConfig s;
  s.k = k_folds;
  s.seed = derive_seed(seed, "stacking");
  s.meta_hidden = meta_hidden;
  s.meta_dropout = meta_dropout;
  s.meta_train = meta_train;
  s.use_extra = with_extra;
  s.stratified = stratified;
  s.threads = threads;
  return s;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  RunConfig c = RunConfig::from_json(j);
  if (c.manifest && c.manifest->is_relative()) c.manifest = path.parent_path() / *c.manifest;
  return c;
}

std::string config_hash(const RunConfig& cfg) {
  // Where results go and how many threads compute them never change the numbers.
  ordered_json j = cfg.to_json();
  j.erase("output_dir");
  j.erase("threads");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace mmstack
