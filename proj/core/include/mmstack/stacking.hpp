#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmstack/dataset.hpp"
#include "mmstack/learners.hpp"
#include "mmstack/metrics.hpp"

namespace mmstack {

enum class LearnerKind { kLogistic, kSquaredHinge, kMlp };

// Base learner recipe for one modality.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::kMlp;
  std::vector<std::size_t> hidden{128};  // mlp only
  std::vector<double> dropout{0.3};      // mlp only, one per hidden layer
  TrainConfig train;

  std::string label() const;
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static LearnerSpec from_json(const nlohmann::json& j);
};

// Trains the learner; `seed` replaces train.seed.
AnyModel fit_learner(const LearnerSpec& spec, const Matrix& x, const Matrix& y, std::uint64_t seed);

// One column block of the meta matrix: a modality paired with a learner.
struct BlockSpec {
  std::string modality;
  LearnerSpec learner;

  std::string name() const { return modality + ":" + learner.label(); }
};

struct FoldAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> fold_of;
  std::uint64_t seed = 0;

  std::size_t size() const { return fold_of.size(); }
  std::vector<std::size_t> members(std::size_t fold) const;
  std::vector<std::size_t> complement(std::size_t fold) const;
};

// Seeded shuffle of 0..n-1 dealt round-robin into k folds. With `stratify`,
// the shuffled order is stably regrouped by each sample's smallest tag
// before dealing, which spreads every tag across folds.
FoldAssignment assign_folds(std::size_t n, std::size_t k, std::uint64_t seed,
                            const std::vector<MultiLabelTarget>* stratify = nullptr);

struct OofBlock {
  std::string modality;
  std::string name;
  LearnerSpec learner;
  Matrix probabilities;              // n x T, row i from the model that never saw i
  std::vector<AnyModel> fold_models;  // model f was trained without fold f
  std::vector<std::string> warnings;
};

// Trains one model per fold on the labeled samples outside that fold and
// predicts the fold's rows. Fold models are seeded by
// derive_seed(seed, block name, fold).
OofBlock oof_meta_features(const Dataset& dataset, const BlockSpec& spec, const FoldAssignment& folds,
                           std::uint64_t seed, std::size_t threads = 1);

// z-score statistics of the extra features, fit on training rows.
struct ExtraNormalizer {
  RowVector mean;
  RowVector scale;  // standard deviation, 1 where it vanishes

  static ExtraNormalizer fit(const Matrix& extra, const std::vector<std::size_t>& rows);
  Matrix apply(const Matrix& extra) const;
  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

struct ColumnRef {
  std::string source;  // block name, or "extra"
  std::size_t index = 0;

  friend bool operator==(const ColumnRef&, const ColumnRef&) = default;
};

struct MetaFeatureMatrix {
  Matrix values;
  std::vector<ColumnRef> columns;

  std::size_t width() const { return columns.size(); }
};

inline constexpr const char* kExtraSource = "extra";

// Horizontal concatenation of probability blocks in the given order, then the
// normalized extras (skipped when the normalizer has dimension 0).
MetaFeatureMatrix build_meta_matrix(const std::vector<std::string>& names, const std::vector<const Matrix*>& blocks,
                                    const Matrix& extra, const ExtraNormalizer& normalizer);
MetaFeatureMatrix build_meta_matrix(const std::vector<OofBlock>& blocks, const Matrix& extra,
                                    const ExtraNormalizer& normalizer);

struct StackingConfig {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::vector<std::size_t> meta_hidden{512, 256};
  std::vector<double> meta_dropout{0.3, 0.3};
  TrainConfig meta_train;
  bool use_extra = true;
  bool stratified = false;
  std::size_t threads = 1;

  void validate() const;
};

struct StackedModel {
  TagVocabulary vocabulary;
  FoldAssignment folds;
  std::vector<BlockSpec> blocks;
  std::vector<std::vector<AnyModel>> fold_models;  // [block][fold]
  MlpModel meta;
  ExtraNormalizer extra_normalizer;  // dim 0 when extras are unused
  std::vector<ColumnRef> columns;
  std::map<std::string, NgramVocabulary> text_vocabularies;
  std::string config_hash;

  std::vector<std::string> modalities() const;
};

// Intermediate results of train_stacked, for inspection and tests.
struct StackingArtifacts {
  std::vector<OofBlock> blocks;
  MetaFeatureMatrix meta_features;
  std::vector<std::string> warnings;
};

StackedModel train_stacked(const Dataset& dataset, const std::vector<BlockSpec>& blocks, const StackingConfig& cfg,
                           StackingArtifacts* artifacts = nullptr);

// Per block, averages the k fold models' probabilities, appends normalized
// extras and runs the meta network in eval mode. Returns n x T confidences.
Matrix predict_stacked_proba(const StackedModel& model, const Dataset& data);

// Ranked confidences over every tag, descending, ties by ascending tag id.
std::vector<RankedPrediction> predict_stacked(const StackedModel& model, const Dataset& data);

// Directory bundle: manifest.json plus one model file per (block, fold) and
// meta.model, all in the model file format.
void save_stacked(const StackedModel& model, const std::filesystem::path& dir);
StackedModel load_stacked(const std::filesystem::path& dir);

}  // namespace mmstack
