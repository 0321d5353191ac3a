#include "mmstack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mmstack/errors.hpp"

namespace mmstack {
namespace {

bool ranks_before(const TagScore& a, const TagScore& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.tag < b.tag;
}

RankedPrediction retained(const RankedPrediction& pred, std::size_t top_k) {
  RankedPrediction out = pred;
  std::set<int> seen;
  for (const TagScore& s : out) {
    if (!std::isfinite(s.confidence)) throw ValidationError("prediction confidences must be finite");
    if (s.tag < 0) throw ValidationError("negative tag id in prediction");
    if (!seen.insert(s.tag).second) throw ValidationError("duplicate tag id within one prediction list");
  }
  std::sort(out.begin(), out.end(), ranks_before);
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

struct PooledPair {
  double confidence;
  std::size_t sample;
  int tag;
  bool hit;
};

double pooled_gap(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                  std::size_t top_k, const std::vector<bool>& filter) {
  // Every hit carries the same recall step 1/P, so the area is the summed hit
  // precision over P; dividing once keeps a perfect ranking at exactly 1.
  double hit_precision = 0.0;
  std::size_t positives = 0;
  const std::vector<PrPoint> curve = pr_curve(preds, targets, top_k, filter, &positives);
  for (const PrPoint& p : curve) {
    if (p.delta_recall > 0.0) hit_precision += p.precision;
  }
  return hit_precision / static_cast<double>(positives);
}

void check_alignment(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets) {
  if (preds.size() != targets.size()) {
    throw AlignmentError("predictions cover " + std::to_string(preds.size()) + " samples, targets " +
                         std::to_string(targets.size()));
  }
}

}  // namespace

void GapConfig::validate() const {
  if (top_k < 1) throw ValidationError("top_k must be >= 1");
}

RankedPrediction rank_scores(std::span<const double> scores, std::size_t top_k) {
  RankedPrediction out;
  out.reserve(scores.size());
  for (std::size_t t = 0; t < scores.size(); ++t) out.push_back({static_cast<int>(t), scores[t]});
  const std::size_t keep = std::min(top_k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(), ranks_before);
  out.resize(keep);
  return out;
}

std::vector<RankedPrediction> top_k_predictions(const Matrix& probs, std::size_t top_k) {
  if (top_k < 1) throw ValidationError("top_k must be >= 1");
  std::vector<RankedPrediction> out;
  out.reserve(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    out.push_back(rank_scores({probs.row(i).data(), static_cast<std::size_t>(probs.cols())}, top_k));
  }
  return out;
}

std::vector<PrPoint> pr_curve(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                              std::size_t top_k, const std::vector<bool>& tag_filter, std::size_t* positives_out) {
  check_alignment(preds, targets);
  auto in_scope = [&](int tag) {
    return tag_filter.empty() || (static_cast<std::size_t>(tag) < tag_filter.size() && tag_filter[static_cast<std::size_t>(tag)]);
  };

  std::size_t positives = 0;
  std::vector<PooledPair> pairs;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const MultiLabelTarget& truth = targets[i];
    positives += static_cast<std::size_t>(std::count_if(truth.begin(), truth.end(), in_scope));
    for (const TagScore& s : retained(preds[i], top_k)) {
      if (!in_scope(s.tag)) continue;
      const bool hit = std::binary_search(truth.begin(), truth.end(), s.tag);
      pairs.push_back({s.confidence, i, s.tag, hit});
    }
  }
  if (positives == 0) throw UndefinedMetricError("GAP is undefined: no positive labels in scope");
  if (positives_out) *positives_out = positives;

  std::sort(pairs.begin(), pairs.end(), [](const PooledPair& a, const PooledPair& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.sample != b.sample) return a.sample < b.sample;
    return a.tag < b.tag;
  });

  const double step = 1.0 / static_cast<double>(positives);
  std::vector<PrPoint> curve;
  curve.reserve(pairs.size());
  std::size_t hits = 0;
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    if (pairs[j].hit) ++hits;
    curve.push_back({j + 1, static_cast<double>(hits) / static_cast<double>(j + 1), pairs[j].hit ? step : 0.0});
  }
  return curve;
}

double gap(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
           const GapConfig& cfg, const TagVocabulary* vocabulary) {
  cfg.validate();
  if (cfg.category_mode == CategoryMode::kPooled) return pooled_gap(preds, targets, cfg.top_k, {});

  if (!vocabulary || !vocabulary->has_categories()) {
    throw ValidationError("per-category GAP requires a vocabulary with tag categories");
  }
  double total = 0.0;
  bool any = false;
  for (int c = 0; c < vocabulary->num_categories(); ++c) {
    std::vector<bool> filter(vocabulary->size());
    for (std::size_t t = 0; t < filter.size(); ++t) filter[t] = vocabulary->category_of[t] == c;
    try {
      total += pooled_gap(preds, targets, cfg.top_k, filter);
      any = true;
    } catch (const UndefinedMetricError&) {
      // category without positives contributes nothing
    }
  }
  if (!any) throw UndefinedMetricError("GAP is undefined: no positive labels in any category");
  return total;
}

double hamming_accuracy(const Matrix& probs, const std::vector<MultiLabelTarget>& targets, double threshold) {
  if (static_cast<std::size_t>(probs.rows()) != targets.size()) throw AlignmentError("accuracy: row count mismatch");
  if (probs.size() == 0) return 0.0;
  std::size_t agree = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const MultiLabelTarget& truth = targets[static_cast<std::size_t>(i)];
    for (Eigen::Index t = 0; t < probs.cols(); ++t) {
      const bool predicted = probs(i, t) >= threshold;
      const bool actual = std::binary_search(truth.begin(), truth.end(), static_cast<int>(t));
      if (predicted == actual) ++agree;
    }
  }
  return static_cast<double>(agree) / static_cast<double>(probs.size());
}

double subset_accuracy(const Matrix& probs, const std::vector<MultiLabelTarget>& targets, double threshold) {
  if (static_cast<std::size_t>(probs.rows()) != targets.size()) throw AlignmentError("accuracy: row count mismatch");
  if (probs.rows() == 0) return 0.0;
  std::size_t exact = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    MultiLabelTarget predicted;
    for (Eigen::Index t = 0; t < probs.cols(); ++t) {
      if (probs(i, t) >= threshold) predicted.push_back(static_cast<int>(t));
    }
    if (predicted == targets[static_cast<std::size_t>(i)]) ++exact;
  }
  return static_cast<double>(exact) / static_cast<double>(probs.rows());
}

Matrix densify(const std::vector<RankedPrediction>& preds, std::size_t num_tags) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(preds.size()), static_cast<Eigen::Index>(num_tags));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (const TagScore& s : preds[i]) {
      if (s.tag < 0 || static_cast<std::size_t>(s.tag) >= num_tags) {
        throw ValidationError("prediction tag id " + std::to_string(s.tag) + " outside vocabulary");
      }
      out(static_cast<Eigen::Index>(i), s.tag) = s.confidence;
    }
  }
  return out;
}

nlohmann::ordered_json MetricConfig::to_json() const {
  nlohmann::ordered_json j;
  j["top_k"] = gap.top_k;
  j["category_mode"] = gap.category_mode == CategoryMode::kPooled ? "pooled" : "per_category_sum";
  j["accuracy"] = accuracy == AccuracyKind::kHamming ? "hamming" : "subset";
  j["threshold"] = threshold;
  return j;
}

MetricConfig MetricConfig::from_json(const nlohmann::json& j) {
  MetricConfig c;
  try {
    c.gap.top_k = j.value("top_k", c.gap.top_k);
    const auto mode = j.value("category_mode", std::string("pooled"));
    if (mode == "pooled") c.gap.category_mode = CategoryMode::kPooled;
    else if (mode == "per_category_sum") c.gap.category_mode = CategoryMode::kPerCategorySum;
    else throw ValidationError("unknown category_mode '" + mode + "'");
    const auto acc = j.value("accuracy", std::string("hamming"));
    if (acc == "hamming") c.accuracy = AccuracyKind::kHamming;
    else if (acc == "subset") c.accuracy = AccuracyKind::kSubset;
    else throw ValidationError("unknown accuracy '" + acc + "'");
    c.threshold = j.value("threshold", c.threshold);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed metric config: ") + e.what());
  }
  c.gap.validate();
  return c;
}

Scores evaluate(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                const MetricConfig& cfg, const TagVocabulary& vocabulary) {
  check_alignment(preds, targets);
  // Unlabeled samples carry no ground truth and are left out.
  std::vector<RankedPrediction> kept_preds;
  std::vector<MultiLabelTarget> kept_targets;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (targets[i].empty()) continue;
    kept_preds.push_back(retained(preds[i], cfg.gap.top_k));
    kept_targets.push_back(targets[i]);
  }
  Scores s;
  s.gap = gap(kept_preds, kept_targets, cfg.gap, &vocabulary);
  const Matrix dense = densify(kept_preds, vocabulary.size());
  s.accuracy = cfg.accuracy == AccuracyKind::kHamming ? hamming_accuracy(dense, kept_targets, cfg.threshold)
                                                      : subset_accuracy(dense, kept_targets, cfg.threshold);
  return s;
}

}  // namespace mmstack
