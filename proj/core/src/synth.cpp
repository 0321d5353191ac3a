#include "mmstack/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "mmstack/errors.hpp"
#include "mmstack/random.hpp"

namespace mmstack {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

double modality_conflict(const SynthConfig& cfg, const SynthModality& m) {
  return m.conflict_rate.value_or(cfg.conflict_rate);
}

std::vector<int> informative_set(const SynthConfig& cfg, const SynthModality& m) {
  if (!m.informative_tags.empty()) return m.informative_tags;
  std::vector<int> all(cfg.num_tags);
  for (std::size_t t = 0; t < cfg.num_tags; ++t) all[t] = static_cast<int>(t);
  return all;
}

std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", i);
  return buf;
}

// Uniformly random tag outside the positive set (any tag if the set is full).
int wrong_tag(Rng& rng, const MultiLabelTarget& positives, std::size_t num_tags) {
  std::vector<int> pool;
  for (std::size_t t = 0; t < num_tags; ++t) {
    if (!std::binary_search(positives.begin(), positives.end(), static_cast<int>(t))) {
      pool.push_back(static_cast<int>(t));
    }
  }
  if (pool.empty()) return static_cast<int>(rng.below(num_tags));
  return pool[rng.below(pool.size())];
}

}  // namespace

void SynthConfig::validate() const {
  if (num_tags < 2) throw ValidationError("synth: num_tags must be >= 2");
  if (k_folds < 2) throw ValidationError("synth: k_folds must be >= 2");
  if (num_samples < 2 * k_folds) {
    throw ValidationError("synth: num_samples must be at least 2 * k_folds (" + std::to_string(2 * k_folds) + ")");
  }
  if (min_tags < 1 || min_tags > max_tags || max_tags > num_tags) {
    throw ValidationError("synth: need 1 <= min_tags <= max_tags <= num_tags");
  }
  if (!(conflict_rate >= 0.0 && conflict_rate <= 1.0)) throw ValidationError("synth: conflict_rate outside [0,1]");
  if (!(unlabeled_fraction >= 0.0 && unlabeled_fraction < 1.0)) {
    throw ValidationError("synth: unlabeled_fraction outside [0,1)");
  }
  if (modalities.empty()) throw ValidationError("synth: at least one modality is required");
  std::set<std::string> names;
  for (const SynthModality& m : modalities) {
    if (m.name.empty() || m.name == "extra") throw ValidationError("synth: invalid modality name '" + m.name + "'");
    if (!names.insert(m.name).second) throw ValidationError("synth: duplicate modality '" + m.name + "'");
    for (int t : m.informative_tags) {
      if (t < 0 || static_cast<std::size_t>(t) >= num_tags) {
        throw ValidationError("synth: informative tag " + std::to_string(t) + " outside 0..T-1");
      }
    }
    const double c = m.conflict_rate.value_or(conflict_rate);
    if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("synth: conflict_rate outside [0,1] for '" + m.name + "'");
    if (m.kind == SynthKind::kDense) {
      if (m.dim == 0) throw ValidationError("synth: modality '" + m.name + "' has d = 0");
      if (!(m.noise_sigma >= 0.0)) throw ValidationError("synth: negative noise_sigma for '" + m.name + "'");
    } else {
      if (m.doc_length == 0 || m.filler_vocab == 0 || m.keywords_per_tag == 0) {
        throw ValidationError("synth: text modality '" + m.name + "' needs positive doc_length/vocab/keywords");
      }
      if (!(m.signal_rate >= 0.0 && m.signal_rate <= 1.0)) throw ValidationError("synth: signal_rate outside [0,1]");
      if (m.min_df < 1) throw ValidationError("synth: min_df must be >= 1");
    }
  }
}

ordered_json SynthConfig::to_json() const {
  ordered_json mods = ordered_json::array();
  for (const SynthModality& m : modalities) {
    ordered_json j;
    j["name"] = m.name;
    j["kind"] = m.kind == SynthKind::kDense ? "dense" : "text";
    if (!m.informative_tags.empty()) j["informative_tags"] = m.informative_tags;
    if (m.conflict_rate) j["conflict_rate"] = *m.conflict_rate;
    if (m.kind == SynthKind::kDense) {
      j["dim"] = m.dim;
      j["noise_sigma"] = m.noise_sigma;
      if (m.frames > 0) j["frames"] = m.frames;
    } else {
      j["doc_length"] = m.doc_length;
      j["filler_vocab"] = m.filler_vocab;
      j["keywords_per_tag"] = m.keywords_per_tag;
      j["signal_rate"] = m.signal_rate;
      j["min_df"] = m.min_df;
      if (m.truncate > 0) j["truncate"] = m.truncate;
    }
    mods.push_back(std::move(j));
  }
  ordered_json out;
  out["num_samples"] = num_samples;
  out["num_tags"] = num_tags;
  out["min_tags"] = min_tags;
  out["max_tags"] = max_tags;
  out["conflict_rate"] = conflict_rate;
  out["unlabeled_fraction"] = unlabeled_fraction;
  out["extra_dim"] = extra_dim;
  out["k_folds"] = k_folds;
  out["pooling"] = to_string(pooling);
  out["modalities"] = std::move(mods);
  return out;
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  c.modalities.clear();
  try {
    c.num_samples = j.value("num_samples", c.num_samples);
    c.num_tags = j.value("num_tags", c.num_tags);
    c.min_tags = j.value("min_tags", c.min_tags);
    c.max_tags = j.value("max_tags", c.max_tags);
    c.conflict_rate = j.value("conflict_rate", c.conflict_rate);
    c.unlabeled_fraction = j.value("unlabeled_fraction", c.unlabeled_fraction);
    c.extra_dim = j.value("extra_dim", c.extra_dim);
    c.k_folds = j.value("k_folds", c.k_folds);
    if (j.contains("pooling")) c.pooling = parse_pool_mode(j.at("pooling").get<std::string>());
    for (const json& mj : j.at("modalities")) {
      SynthModality m;
      m.name = mj.at("name").get<std::string>();
      const std::string kind = mj.value("kind", std::string("dense"));
      if (kind == "dense") m.kind = SynthKind::kDense;
      else if (kind == "text") m.kind = SynthKind::kText;
      else throw ValidationError("synth: unknown modality kind '" + kind + "'");
      m.dim = mj.value("dim", m.dim);
      m.informative_tags = mj.value("informative_tags", m.informative_tags);
      m.noise_sigma = mj.value("noise_sigma", m.noise_sigma);
      if (mj.contains("conflict_rate")) m.conflict_rate = mj.at("conflict_rate").get<double>();
      m.frames = mj.value("frames", m.frames);
      m.doc_length = mj.value("doc_length", m.doc_length);
      m.filler_vocab = mj.value("filler_vocab", m.filler_vocab);
      m.keywords_per_tag = mj.value("keywords_per_tag", m.keywords_per_tag);
      m.signal_rate = mj.value("signal_rate", m.signal_rate);
      m.min_df = mj.value("min_df", m.min_df);
      m.truncate = mj.value("truncate", m.truncate);
      c.modalities.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed synth config: ") + e.what());
  }
  return c;
}

SynthConfig default_synth_config() {
  SynthConfig c;
  c.num_samples = 1000;
  c.num_tags = 20;
  c.extra_dim = 3;
  SynthModality visual;
  visual.name = "visual";
  visual.dim = 48;
  visual.noise_sigma = 2.2;
  SynthModality sound;
  sound.name = "sound";
  sound.dim = 128;
  sound.noise_sigma = 29.0;
  sound.frames = 62;
  SynthModality ocr;
  ocr.name = "ocr";
  ocr.noise_sigma = 1.8;
  SynthModality asr;
  asr.name = "asr";
  asr.kind = SynthKind::kText;
  asr.signal_rate = 0.11;
  asr.truncate = kDefaultTruncateWords;
  c.modalities = {visual, sound, ocr, asr};
  return c;
}

SynthData synth_generate_raw(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t n = config.num_samples;
  const std::size_t T = config.num_tags;

  SynthData out;
  out.config = config;
  out.vocabulary = TagVocabulary::numbered(T);

  // One signature per (dense modality, tag), drawn up front in declared order.
  std::vector<std::vector<RowVector>> signatures(config.modalities.size());
  for (std::size_t m = 0; m < config.modalities.size(); ++m) {
    const SynthModality& spec = config.modalities[m];
    if (spec.kind != SynthKind::kDense) continue;
    for (std::size_t t = 0; t < T; ++t) {
      RowVector sig(static_cast<Eigen::Index>(spec.dim));
      for (Eigen::Index j = 0; j < sig.size(); ++j) sig(j) = rng.normal();
      signatures[m].push_back(std::move(sig));
    }
  }

  // True tag sets: a uniform count in [min_tags, max_tags], then a partial
  // Fisher-Yates draw of that many distinct tags.
  std::vector<MultiLabelTarget> truth(n);
  std::vector<bool> unlabeled(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    out.sample_ids.push_back(sample_id(i));
    const std::size_t count = config.min_tags + rng.below(config.max_tags - config.min_tags + 1);
    std::vector<int> pool(T);
    for (std::size_t t = 0; t < T; ++t) pool[t] = static_cast<int>(t);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t j = k + rng.below(T - k);
      std::swap(pool[k], pool[j]);
    }
    truth[i].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(truth[i].begin(), truth[i].end());
    unlabeled[i] = rng.bernoulli(config.unlabeled_fraction);
  }

  for (std::size_t m = 0; m < config.modalities.size(); ++m) {
    const SynthModality& spec = config.modalities[m];
    const double conflict = modality_conflict(config, spec);
    const std::vector<int> informative = informative_set(config, spec);

    // Tags whose signal this sample carries in this modality.
    auto carried = [&](std::size_t i, bool conflicted) {
      if (conflicted) return std::vector<int>{wrong_tag(rng, truth[i], T)};
      std::vector<int> tags;
      for (int t : truth[i]) {
        if (std::find(informative.begin(), informative.end(), t) != informative.end()) tags.push_back(t);
      }
      return tags;
    };

    if (spec.kind == SynthKind::kText) {
      std::vector<TokenStream> docs(n);
      for (std::size_t i = 0; i < n; ++i) {
        const bool conflicted = rng.bernoulli(conflict);
        const std::vector<int> tags = carried(i, conflicted);
        TokenStream& doc = docs[i];
        for (std::size_t p = 0; p < spec.doc_length; ++p) {
          if (!tags.empty() && rng.bernoulli(spec.signal_rate)) {
            const int t = tags[rng.below(tags.size())];
            const auto k = rng.below(spec.keywords_per_tag);
            doc.push_back(spec.name + "_k" + std::to_string(t) + "_" + std::to_string(k));
          } else {
            doc.push_back("w" + std::to_string(rng.below(spec.filler_vocab)));
          }
        }
      }
      out.modalities.emplace_back(spec.name, std::move(docs));
      continue;
    }

    const auto d = static_cast<Eigen::Index>(spec.dim);
    auto noisy = [&](const RowVector& signal) {
      RowVector x = signal;
      for (Eigen::Index j = 0; j < d; ++j) x(j) += spec.noise_sigma * rng.normal();
      // Feature files hold float32; rounding here keeps memory and disk identical.
      return RowVector(x.cast<float>().cast<double>());
    };

    if (spec.frames == 0) {
      FeatureMatrix fm{spec.name, Matrix(static_cast<Eigen::Index>(n), d)};
      for (std::size_t i = 0; i < n; ++i) {
        const bool conflicted = rng.bernoulli(conflict);
        RowVector signal = RowVector::Zero(d);
        for (int t : carried(i, conflicted)) signal += signatures[m][static_cast<std::size_t>(t)];
        fm.values.row(static_cast<Eigen::Index>(i)) = noisy(signal);
      }
      out.modalities.emplace_back(spec.name, std::move(fm));
    } else {
      SequenceSet seq{spec.name, spec.dim, {}};
      for (std::size_t i = 0; i < n; ++i) {
        const bool conflicted = rng.bernoulli(conflict);
        RowVector signal = RowVector::Zero(d);
        for (int t : carried(i, conflicted)) signal += signatures[m][static_cast<std::size_t>(t)];
        Matrix frames(static_cast<Eigen::Index>(spec.frames), d);
        for (Eigen::Index f = 0; f < frames.rows(); ++f) frames.row(f) = noisy(signal);
        seq.frames.push_back(std::move(frames));
      }
      out.modalities.emplace_back(spec.name, std::move(seq));
    }
  }

  // Side features in the spirit of duration / height / width; carry no tag signal.
  out.extra = Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(config.extra_dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < config.extra_dim; ++j) {
      double v = 0.0;
      switch (j % 3) {
        case 0: v = rng.uniform(5.0, 60.0); break;
        case 1: v = rng.uniform(360.0, 1920.0); break;
        default: v = rng.uniform(360.0, 1920.0); break;
      }
      out.extra(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(v);
    }
  }

  out.targets = truth;
  for (std::size_t i = 0; i < n; ++i) {
    if (unlabeled[i]) out.targets[i].clear();
  }
  return out;
}

Dataset to_dataset(const SynthData& data) {
  Dataset ds;
  ds.sample_ids = data.sample_ids;
  ds.vocabulary = data.vocabulary;
  ds.targets = data.targets;
  ds.extra = data.extra;
  for (std::size_t m = 0; m < data.modalities.size(); ++m) {
    const auto& [name, raw] = data.modalities[m];
    const SynthModality& spec = data.config.modalities[m];
    if (const auto* fm = std::get_if<FeatureMatrix>(&raw)) {
      ds.modalities.push_back(*fm);
    } else if (const auto* seq = std::get_if<SequenceSet>(&raw)) {
      ds.modalities.push_back(pool_sequences(*seq, data.config.pooling));
    } else {
      std::vector<TokenStream> docs = std::get<std::vector<TokenStream>>(raw);
      if (spec.truncate > 0) {
        for (TokenStream& doc : docs) doc = truncate_first_last(doc, spec.truncate);
      }
      NgramVocabulary vocab = build_ngram_vocab(docs, spec.min_df);
      ds.modalities.push_back(tfidf_matrix(docs, vocab, name));
      ds.text_vocabularies.emplace(name, std::move(vocab));
    }
  }
  ds.validate();
  return ds;
}

Dataset synth_generate(const SynthConfig& config, std::uint64_t seed) {
  return to_dataset(synth_generate_raw(config, seed));
}

std::filesystem::path write_synth_dataset(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  manifest.base_dir = dir;
  manifest.sample_ids = data.sample_ids;
  manifest.pooling = data.config.pooling;
  for (std::size_t m = 0; m < data.modalities.size(); ++m) {
    const auto& [name, raw] = data.modalities[m];
    const SynthModality& spec = data.config.modalities[m];
    if (const auto* fm = std::get_if<FeatureMatrix>(&raw)) {
      write_feature_matrix(*fm, dir / (name + ".mmfb"));
      manifest.modalities.push_back({name, name + ".mmfb", std::nullopt});
    } else if (const auto* seq = std::get_if<SequenceSet>(&raw)) {
      write_sequence_set(*seq, dir / (name + ".mmfb"));
      manifest.modalities.push_back({name, name + ".mmfb", std::nullopt});
    } else {
      save_token_corpus(std::get<std::vector<TokenStream>>(raw), dir / (name + ".tokens.json"));
      manifest.text_modalities.push_back({name, name + ".tokens.json", spec.truncate, spec.min_df});
    }
  }
  save_labels(data.targets, dir / "labels.json");
  manifest.labels = "labels.json";
  save_vocabulary(data.vocabulary, dir / "vocabulary.json");
  manifest.vocabulary = "vocabulary.json";
  if (data.extra.cols() > 0) {
    write_feature_matrix(FeatureMatrix{"extra", data.extra}, dir / "extra.mmfb");
    manifest.extra = "extra.mmfb";
  }
  const auto path = dir / "manifest.json";
  save_manifest(manifest, path);
  return path;
}

}  // namespace mmstack
