#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmstack/dataset.hpp"

namespace mmstack {

enum class SynthKind { kDense, kText };

// One generated modality. Dense modalities emit a noisy sum of fixed random
// "tag signatures" over the sample's informative positive tags; text
// modalities emit filler tokens interleaved with per-tag keywords.
struct SynthModality {
  std::string name;
  SynthKind kind = SynthKind::kDense;
  std::size_t dim = 32;
  std::vector<int> informative_tags;     // empty means every tag
  double noise_sigma = 0.5;
  std::optional<double> conflict_rate;   // falls back to SynthConfig::conflict_rate
  std::size_t frames = 0;                // > 0 emits a sequence set of this many frames

  // text only
  std::size_t doc_length = 40;
  std::size_t filler_vocab = 400;
  std::size_t keywords_per_tag = 3;
  double signal_rate = 0.3;
  std::size_t min_df = kDefaultMinDf;
  std::size_t truncate = 0;
};

struct SynthConfig {
  std::size_t num_samples = 1000;
  std::size_t num_tags = 20;
  std::size_t min_tags = 1;
  std::size_t max_tags = 3;
  double conflict_rate = 0.0;
  double unlabeled_fraction = 0.0;
  std::size_t extra_dim = 3;
  std::size_t k_folds = 5;
  PoolMode pooling = PoolMode::kMean;
  std::vector<SynthModality> modalities;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

// Four-modality default mirroring the visual / sound / ocr / asr setup, with
// the visual stand-in carrying the least noise.
SynthConfig default_synth_config();

using RawModality = std::variant<FeatureMatrix, SequenceSet, std::vector<TokenStream>>;

struct SynthData {
  SynthConfig config;
  std::vector<std::string> sample_ids;
  TagVocabulary vocabulary;
  std::vector<MultiLabelTarget> targets;
  std::vector<std::pair<std::string, RawModality>> modalities;
  Matrix extra;
};

SynthData synth_generate_raw(const SynthConfig& config, std::uint64_t seed);

// Pools sequence modalities and turns text modalities into tf-idf blocks.
Dataset to_dataset(const SynthData& data);

Dataset synth_generate(const SynthConfig& config, std::uint64_t seed);

// Writes feature files, labels, vocabulary and manifest.json under `dir`;
// returns the manifest path.
std::filesystem::path write_synth_dataset(const SynthData& data, const std::filesystem::path& dir);

}  // namespace mmstack
