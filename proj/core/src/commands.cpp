#include "mmstack/commands.hpp"

#include <chrono>
#include <map>

#include <spdlog/spdlog.h>

#include "mmstack/errors.hpp"
#include "mmstack/fusion.hpp"
#include "mmstack/parallel.hpp"
#include "mmstack/random.hpp"
#include "mmstack/stacking.hpp"
#include "mmstack/synth.hpp"

namespace mmstack {
namespace {

using Clock = std::chrono::steady_clock;

EvalReport start_report(const RunConfig& cfg, const std::string& command) {
  EvalReport r;
  r.command = command;
  r.config_hash = config_hash(cfg);
  r.seed = cfg.seed;
  r.config = cfg.to_json();
  r.timestamp = utc_timestamp();
  return r;
}

void finish_report(EvalReport& r, const RunConfig& cfg, Clock::time_point started, const std::string& stem) {
  r.wall_clock_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  write_report(r, cfg.output_dir, stem);
  spdlog::info("wrote {}", (cfg.output_dir / (stem + ".json")).string());
}

nlohmann::ordered_json describe_split(const RunConfig& cfg, const HoldoutSplit& split) {
  nlohmann::ordered_json j;
  j["kind"] = "holdout";
  j["test_fraction"] = cfg.holdout_fraction;
  j["seed"] = derive_seed(cfg.seed, "holdout");
  j["train_size"] = split.train.size();
  j["test_size"] = split.test.size();
  return j;
}

bool is_text_modality(const Dataset& data, const std::string& modality) {
  return data.text_vocabularies.count(modality) > 0;
}

std::vector<BlockSpec> blocks_for(const RunConfig& cfg, const Dataset& data, const std::vector<std::string>& modalities) {
  std::vector<BlockSpec> blocks;
  for (const std::string& m : modalities) {
    for (const LearnerSpec& spec : cfg.learners_for(m, is_text_modality(data, m))) blocks.push_back({m, spec});
  }
  return blocks;
}

ReportRow stacked_row(const std::string& name, const Dataset& train, const Dataset& test,
                      const std::vector<BlockSpec>& blocks, const RunConfig& cfg, bool with_extra) {
  const StackedModel model = train_stacked(train, blocks, cfg.stacking(with_extra));
  const Matrix probs = predict_stacked_proba(model, test);
  const Scores s = evaluate(top_k_predictions(probs, cfg.metrics.gap.top_k), test.targets, cfg.metrics, test.vocabulary);
  spdlog::info("{}: accuracy {:.5f} gap {:.5f}", name, s.accuracy, s.gap);
  return {name, s.accuracy, s.gap};
}

}  // namespace

Dataset load_run_dataset(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.manifest) return assemble_dataset(load_manifest(*cfg.manifest));
  return synth_generate(*cfg.synth, derive_seed(cfg.seed, "synth"));
}

std::vector<std::string> run_modalities(const RunConfig& cfg, const Dataset& data) {
  if (cfg.modalities.empty()) return data.modality_names();
  for (const std::string& m : cfg.modalities) {
    if (!data.has_modality(m)) throw ValidationError("config names modality '" + m + "' which the dataset lacks");
  }
  return cfg.modalities;
}

HoldoutSplit run_holdout(const RunConfig& cfg, const Dataset& data) {
  return split_holdout(data.size(), cfg.holdout_fraction, derive_seed(cfg.seed, "holdout"));
}

std::vector<std::vector<std::string>> run_ladder(const RunConfig& cfg, const Dataset& data) {
  if (!cfg.ladder.empty()) {
    for (const auto& rung : cfg.ladder) {
      for (const std::string& m : rung) {
        if (m != kExtraToken && !data.has_modality(m)) {
          throw ValidationError("ladder names modality '" + m + "' which the dataset lacks");
        }
      }
    }
    return cfg.ladder;
  }
  const std::vector<std::string> mods = run_modalities(cfg, data);
  std::vector<std::vector<std::string>> ladder;
  for (std::size_t i = 1; i <= mods.size(); ++i) ladder.emplace_back(mods.begin(), mods.begin() + static_cast<std::ptrdiff_t>(i));
  if (data.extra.cols() > 0 && cfg.use_extra) {
    ladder.push_back(mods);
    ladder.back().push_back(kExtraToken);
  }
  return ladder;
}

std::string ladder_name(const std::vector<std::string>& rung) {
  std::string name;
  for (const std::string& m : rung) name += (name.empty() ? "" : "+") + m;
  return name;
}

std::filesystem::path cmd_synth(const RunConfig& cfg) {
  cfg.validate();
  if (!cfg.synth) throw ValidationError("synth needs a dataset.synth config");
  const SynthData data = synth_generate_raw(*cfg.synth, derive_seed(cfg.seed, "synth"));
  const auto path = write_synth_dataset(data, cfg.output_dir);
  spdlog::info("wrote {} samples to {}", data.sample_ids.size(), path.string());
  return path;
}

EvalReport cmd_compare_modalities(const RunConfig& cfg) {
  const auto started = Clock::now();
  const Dataset data = load_run_dataset(cfg);
  const HoldoutSplit split = run_holdout(cfg, data);
  EvalReport report = start_report(cfg, "compare-modalities");
  report.split = describe_split(cfg, split);

  const Dataset test = data.subset(split.test);
  std::vector<std::size_t> train_rows;
  for (std::size_t r : split.train) {
    if (!data.targets[r].empty()) train_rows.push_back(r);
  }
  if (train_rows.empty()) throw ValidationError("holdout training split has no labeled samples");
  const Matrix y = multi_hot(data.targets, train_rows, data.num_tags());
  const std::vector<std::string> mods = run_modalities(cfg, data);
  report.rows.resize(mods.size());
  parallel_for(mods.size(), cfg.threads, [&](std::size_t i) {
    // A modality with several stacked learners is represented by its first.
    const BlockSpec block{mods[i], cfg.learners_for(mods[i], is_text_modality(data, mods[i])).front()};
    const Matrix& x = data.modality(mods[i]).values;
    const AnyModel model = fit_learner(block.learner, gather_rows(x, train_rows), y,
                                       derive_seed(cfg.seed, "single:" + block.name()));
    const Matrix probs = predict_proba(model, test.modality(mods[i]).values);
    const Scores s =
        evaluate(top_k_predictions(probs, cfg.metrics.gap.top_k), test.targets, cfg.metrics, data.vocabulary);
    report.rows[i] = {mods[i], s.accuracy, s.gap};
  });
  for (const ReportRow& r : report.rows) spdlog::info("{}: accuracy {:.5f} gap {:.5f}", r.name, r.accuracy, r.gap);
  finish_report(report, cfg, started, "compare_modalities");
  return report;
}

EvalReport cmd_compare_combinations(const RunConfig& cfg) {
  const auto started = Clock::now();
  const Dataset data = load_run_dataset(cfg);
  const HoldoutSplit split = run_holdout(cfg, data);
  EvalReport report = start_report(cfg, "compare-combinations");
  report.split = describe_split(cfg, split);
  const Dataset train = data.subset(split.train);
  const Dataset test = data.subset(split.test);

  for (const auto& rung : run_ladder(cfg, data)) {
    std::vector<std::string> mods;
    bool with_extra = false;
    for (const std::string& m : rung) {
      if (m == kExtraToken) with_extra = true;
      else mods.push_back(m);
    }
    report.rows.push_back(stacked_row(ladder_name(rung), train, test, blocks_for(cfg, data, mods), cfg, with_extra));
  }
  finish_report(report, cfg, started, "compare_combinations");
  return report;
}

EvalReport cmd_compare_fusion(const RunConfig& cfg) {
  const auto started = Clock::now();
  const Dataset data = load_run_dataset(cfg);
  const HoldoutSplit split = run_holdout(cfg, data);
  EvalReport report = start_report(cfg, "compare-fusion");
  report.split = describe_split(cfg, split);
  const std::vector<std::string> mods = run_modalities(cfg, data);

  // Every strategy sees the same modalities and no extras, so the rows differ
  // only in how the modalities are combined.
  report.rows.push_back(
      stacked_row("stacked", data.subset(split.train), data.subset(split.test), blocks_for(cfg, data, mods), cfg, false));

  std::vector<ReportRow> fused(cfg.fusion_strategies.size());
  parallel_for(fused.size(), cfg.threads, [&](std::size_t i) {
    const FusionKind kind = cfg.fusion_strategies[i];
    const FusionResult r = run_fusion_experiment(data, mods, kind, cfg.fusion, split, cfg.metrics,
                                                 derive_seed(cfg.seed, "fusion:" + to_string(kind)));
    fused[i] = {r.name, r.scores.accuracy, r.scores.gap};
  });
  for (ReportRow& r : fused) {
    spdlog::info("{}: accuracy {:.5f} gap {:.5f}", r.name, r.accuracy, r.gap);
    report.rows.push_back(std::move(r));
  }
  finish_report(report, cfg, started, "compare_fusion");
  return report;
}

std::filesystem::path cmd_train(const RunConfig& cfg) {
  const Dataset data = load_run_dataset(cfg);
  const std::vector<std::string> mods = run_modalities(cfg, data);
  StackingArtifacts artifacts;
  StackedModel model = train_stacked(data, blocks_for(cfg, data, mods), cfg.stacking(cfg.use_extra), &artifacts);
  model.config_hash = config_hash(cfg);
  const auto dir = cfg.output_dir / "model";
  save_stacked(model, dir);
  spdlog::info("saved stacked model ({} blocks, {} meta columns) to {}", model.blocks.size(), model.columns.size(),
               dir.string());
  return dir;
}

std::filesystem::path cmd_predict(const RunConfig& cfg, const std::filesystem::path& model_dir,
                                  const std::filesystem::path& manifest,
                                  const std::optional<std::filesystem::path>& out) {
  const StackedModel model = load_stacked(model_dir);
  AssembleOptions options;
  options.text_vocabularies = model.text_vocabularies;
  const Dataset data = assemble_dataset(load_manifest(manifest), options);
  if (data.vocabulary.names != model.vocabulary.names) {
    throw ValidationError("manifest tag vocabulary differs from the model's");
  }
  const auto preds = top_k_predictions(predict_stacked_proba(model, data), cfg.metrics.gap.top_k);
  const auto path = out.value_or(cfg.output_dir / "predictions.jsonl");
  write_file_atomic(path, encode_prediction_lines(data.sample_ids, preds));
  spdlog::info("wrote {} predictions to {}", preds.size(), path.string());
  return path;
}

EvalReport cmd_score(const RunConfig& cfg, const std::filesystem::path& predictions,
                     const std::filesystem::path& manifest_path) {
  const auto started = Clock::now();
  const DatasetManifest manifest = load_manifest(manifest_path);
  if (manifest.labels.empty()) throw ValidationError("manifest has no labels to score against");
  const TagVocabulary vocab = load_vocabulary(manifest.resolve(manifest.vocabulary));
  const std::vector<MultiLabelTarget> targets = load_labels(manifest.resolve(manifest.labels), vocab.size());
  if (targets.size() != manifest.sample_ids.size()) throw AlignmentError("labels and sample ids differ in count");

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.sample_ids.size(); ++i) index.emplace(manifest.sample_ids[i], i);
  const PredictionFile file = parse_prediction_lines(read_file(predictions));
  std::vector<RankedPrediction> preds(targets.size());
  for (std::size_t i = 0; i < file.sample_ids.size(); ++i) {
    auto it = index.find(file.sample_ids[i]);
    if (it == index.end()) throw ValidationError("prediction for unknown sample_id '" + file.sample_ids[i] + "'");
    preds[it->second] = file.predictions[i];
  }
  const Scores s = evaluate(preds, targets, cfg.metrics, vocab);

  EvalReport report = start_report(cfg, "score");
  report.rows.push_back({predictions.filename().string(), s.accuracy, s.gap});
  finish_report(report, cfg, started, "score");
  return report;
}

}  // namespace mmstack
