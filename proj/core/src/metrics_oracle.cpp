// Brute-force GAP. Deliberately written without any helper from metrics.cpp:
// selection instead of sorting, and every cut of the curve recounted.

#include <cmath>
#include <limits>

#include "mmstack/errors.hpp"
#include "mmstack/metrics.hpp"

namespace mmstack {
namespace {

struct Candidate {
  double confidence;
  std::size_t sample;
  int tag;
  bool correct;
  bool taken = false;
};

bool contains(const MultiLabelTarget& truth, int tag) {
  for (int t : truth) {
    if (t == tag) return true;
  }
  return false;
}

double oracle_single_scope(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                           std::size_t top_k, int category, const TagVocabulary* vocabulary) {
  auto in_scope = [&](int tag) {
    return category < 0 || vocabulary->category_of[static_cast<std::size_t>(tag)] == category;
  };

  double positives = 0.0;
  for (const MultiLabelTarget& truth : targets) {
    for (int t : truth) {
      if (in_scope(t)) positives += 1.0;
    }
  }
  if (positives == 0.0) throw UndefinedMetricError("oracle: no positives in scope");

  // Per sample: pick up to top_k entries by repeated selection of the best
  // remaining (highest confidence, then lowest tag id).
  std::vector<Candidate> pooled;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const RankedPrediction& row = preds[i];
    for (std::size_t a = 0; a < row.size(); ++a) {
      if (!std::isfinite(row[a].confidence)) throw ValidationError("oracle: non-finite confidence");
      for (std::size_t b = a + 1; b < row.size(); ++b) {
        if (row[a].tag == row[b].tag) throw ValidationError("oracle: duplicate tag in prediction list");
      }
    }
    std::vector<bool> used(row.size(), false);
    for (std::size_t pick = 0; pick < top_k && pick < row.size(); ++pick) {
      std::size_t best = row.size();
      for (std::size_t a = 0; a < row.size(); ++a) {
        if (used[a]) continue;
        if (best == row.size() || row[a].confidence > row[best].confidence ||
            (row[a].confidence == row[best].confidence && row[a].tag < row[best].tag)) {
          best = a;
        }
      }
      used[best] = true;
      if (in_scope(row[best].tag)) {
        pooled.push_back({row[best].confidence, i, row[best].tag, contains(targets[i], row[best].tag)});
      }
    }
  }

  // Global order by selection: confidence desc, then sample, then tag.
  std::vector<bool> order_correct;
  for (std::size_t step = 0; step < pooled.size(); ++step) {
    std::size_t best = pooled.size();
    for (std::size_t a = 0; a < pooled.size(); ++a) {
      if (pooled[a].taken) continue;
      if (best == pooled.size()) {
        best = a;
        continue;
      }
      const Candidate& x = pooled[a];
      const Candidate& y = pooled[best];
      if (x.confidence > y.confidence ||
          (x.confidence == y.confidence && (x.sample < y.sample || (x.sample == y.sample && x.tag < y.tag)))) {
        best = a;
      }
    }
    pooled[best].taken = true;
    order_correct.push_back(pooled[best].correct);
  }

  double area = 0.0;
  double previous_recall = 0.0;
  for (std::size_t cut = 1; cut <= order_correct.size(); ++cut) {
    double hits = 0.0;
    for (std::size_t r = 0; r < cut; ++r) {
      if (order_correct[r]) hits += 1.0;
    }
    const double precision = hits / static_cast<double>(cut);
    const double recall = hits / positives;
    area += precision * (recall - previous_recall);
    previous_recall = recall;
  }
  return area;
}

}  // namespace

double gap_bruteforce_oracle(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                             const GapConfig& cfg, const TagVocabulary* vocabulary) {
  if (cfg.top_k < 1) throw ValidationError("oracle: top_k must be >= 1");
  if (preds.size() != targets.size()) throw AlignmentError("oracle: predictions and targets differ in length");
  if (cfg.category_mode == CategoryMode::kPooled) return oracle_single_scope(preds, targets, cfg.top_k, -1, nullptr);

  if (!vocabulary || vocabulary->category_of.empty()) {
    throw ValidationError("oracle: per-category mode requires tag categories");
  }
  int categories = 0;
  for (int c : vocabulary->category_of) categories = c + 1 > categories ? c + 1 : categories;
  double total = 0.0;
  bool any = false;
  for (int c = 0; c < categories; ++c) {
    try {
      total += oracle_single_scope(preds, targets, cfg.top_k, c, vocabulary);
      any = true;
    } catch (const UndefinedMetricError&) {
    }
  }
  if (!any) throw UndefinedMetricError("oracle: no positives in any category");
  return total;
}

}  // namespace mmstack
