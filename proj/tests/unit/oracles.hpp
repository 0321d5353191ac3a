#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "mmstack/metrics.hpp"
#include "mmstack/text_features.hpp"

namespace mmstack::fixtures {

// Dense tf-idf recomputation: enumerate n-grams per document, count document
// frequencies with a set, weight with ln((1+N)/(1+df))+1, L2-normalize.
inline std::map<Ngram, double> oracle_tfidf(const std::vector<TokenStream>& corpus, const TokenStream& doc,
                                            std::size_t min_df) {
  auto grams_of = [](const TokenStream& d) {
    std::vector<Ngram> out;
    for (std::size_t i = 0; i < d.size(); ++i) {
      out.push_back({d[i]});
      if (i + 1 < d.size()) out.push_back({d[i], d[i + 1]});
    }
    return out;
  };
  std::map<Ngram, std::size_t> df;
  for (const TokenStream& d : corpus) {
    std::set<Ngram> seen;
    for (const Ngram& g : grams_of(d)) seen.insert(g);
    for (const Ngram& g : seen) ++df[g];
  }
  std::map<Ngram, double> weights;
  const double n = static_cast<double>(corpus.size());
  for (const Ngram& g : grams_of(doc)) {
    auto it = df.find(g);
    if (it == df.end() || it->second < min_df) continue;
    weights[g] += std::log((1.0 + n) / (1.0 + static_cast<double>(it->second))) + 1.0;
  }
  double norm = 0.0;
  for (const auto& [g, w] : weights) norm += w * w;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& [g, w] : weights) w /= norm;
  }
  return weights;
}

inline double sparse_weight(const SparseVector& v, const NgramVocabulary& vocab, const Ngram& g) {
  const std::size_t col = vocab.index_of(g);
  for (std::size_t i = 0; i < v.nnz(); ++i) {
    if (v.indices[i] == col) return v.weights[i];
  }
  return 0.0;
}

// Pooled GAP from an explicit (confidence, sample, tag, hit) list with a full
// sort and a running hit count.
inline double reference_gap(const std::vector<RankedPrediction>& preds, const std::vector<MultiLabelTarget>& targets,
                            std::size_t top_k) {
  std::vector<std::tuple<double, std::size_t, int, bool>> pairs;
  double positives = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    positives += static_cast<double>(targets[i].size());
    for (std::size_t r = 0; r < std::min(top_k, preds[i].size()); ++r) {
      const TagScore& s = preds[i][r];
      const bool hit = std::find(targets[i].begin(), targets[i].end(), s.tag) != targets[i].end();
      pairs.emplace_back(s.confidence, i, s.tag, hit);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  double hits = 0.0, total = 0.0;
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    if (std::get<3>(pairs[j])) {
      hits += 1.0;
      total += hits / static_cast<double>(j + 1);
    }
  }
  return total / positives;
}

}  // namespace mmstack::fixtures
