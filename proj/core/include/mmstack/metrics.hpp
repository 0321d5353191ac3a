#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmstack/dataset.hpp"
#include "mmstack/types.hpp"

namespace mmstack {

struct TagScore {
  int tag = 0;
  double confidence = 0.0;

  friend bool operator==(const TagScore&, const TagScore&) = default;
};

// One sample's retained predictions, descending confidence, ties by
// ascending tag id.
using RankedPrediction = std::vector<TagScore>;

enum class CategoryMode { kPooled, kPerCategorySum };
enum class AccuracyKind { kHamming, kSubset };

struct GapConfig {
  std::size_t top_k = 20;
  CategoryMode category_mode = CategoryMode::kPooled;

  void validate() const;
};

// One point of the pooled precision/recall curve.
struct PrPoint {
  std::size_t rank = 0;     // 1-based global rank j
  double precision = 0.0;   // p(j)
  double delta_recall = 0.0;  // 1/P on a hit, 0 otherwise
};

// Sorts one score row into a ranked list of at most top_k entries.
RankedPrediction rank_scores(std::span<const double> scores, std::size_t top_k);

std::vector<RankedPrediction> top_k_predictions(const Matrix& probs, std::size_t top_k);

// Pooled precision/recall points over every retained (sample, tag) pair;
// `tag_filter`, when non-empty, restricts both pairs and positives to the
// tags it marks true. The positive count P is stored in `positives` if given.
std::vector<PrPoint> pr_curve(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                              std::size_t top_k, const std::vector<bool>& tag_filter = {},
                              std::size_t* positives = nullptr);

// Global Average Precision: sum over the pooled curve of p(j) * delta_r(j).
// In per-category mode the pooled value is computed per tag category and the
// results are summed; categories without positives are skipped. Throws
// UndefinedMetricError when there are no positives in scope.
double gap(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
           const GapConfig& cfg, const TagVocabulary* vocabulary = nullptr);

// Independent recomputation that materializes every cut of the curve with
// explicit hit counters. Shares no code with gap().
double gap_bruteforce_oracle(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                             const GapConfig& cfg, const TagVocabulary* vocabulary = nullptr);

// Fraction of (sample, tag) cells where (prob >= threshold) agrees with
// membership in the target set.
double hamming_accuracy(const Matrix& probs, const std::vector<MultiLabelTarget>& targets, double threshold = 0.5);

// Fraction of samples whose thresholded tag set equals the target set.
double subset_accuracy(const Matrix& probs, const std::vector<MultiLabelTarget>& targets, double threshold = 0.5);

// Dense n x T scores from ranked lists; tags not retained score 0.
Matrix densify(const std::vector<RankedPrediction>& preds, std::size_t num_tags);

struct MetricConfig {
  GapConfig gap;
  AccuracyKind accuracy = AccuracyKind::kHamming;
  double threshold = 0.5;

  nlohmann::ordered_json to_json() const;
  static MetricConfig from_json(const nlohmann::json& j);
};

struct Scores {
  double accuracy = 0.0;
  double gap = 0.0;
};

// Scores retained predictions against targets. Both the in-process
// evaluation and offline scoring of prediction files go through here, so
// the two agree exactly.
Scores evaluate(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                const MetricConfig& cfg, const TagVocabulary& vocabulary);

}  // namespace mmstack
