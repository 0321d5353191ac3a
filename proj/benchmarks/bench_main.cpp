#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "mmstack/learners.hpp"
#include "mmstack/metrics.hpp"
#include "mmstack/random.hpp"
#include "mmstack/stacking.hpp"
#include "mmstack/text_features.hpp"

namespace {

using namespace mmstack;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

std::vector<MultiLabelTarget> random_targets(std::size_t n, int tags, Rng& rng) {
  std::vector<MultiLabelTarget> targets(n);
  for (auto& t : targets) {
    for (int j = 0; j < tags; ++j) {
      if (rng.bernoulli(0.05)) t.push_back(j);
    }
    if (t.empty()) t.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(tags))));
  }
  return targets;
}

std::vector<TokenStream> random_corpus(std::size_t docs, std::size_t words, Rng& rng) {
  std::vector<TokenStream> corpus(docs);
  for (auto& doc : corpus) {
    for (std::size_t w = 0; w < words; ++w) doc.push_back("w" + std::to_string(rng.below(2000)));
  }
  return corpus;
}

void BM_Gap(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix probs = random_matrix(static_cast<Eigen::Index>(n), 100, rng);
  const auto targets = random_targets(n, 100, rng);
  const auto preds = top_k_predictions(probs, 20);
  GapConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(gap(preds, targets, cfg));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * 20));
}
BENCHMARK(BM_Gap)->Arg(1000)->Arg(10000);

void BM_TopK(benchmark::State& state) {
  Rng rng(2);
  const Matrix probs = random_matrix(state.range(0), 100, rng);
  for (auto _ : state) benchmark::DoNotOptimize(top_k_predictions(probs, 20));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TopK)->Arg(1000)->Arg(10000);

void BM_BuildVocab(benchmark::State& state) {
  Rng rng(3);
  const auto corpus = random_corpus(static_cast<std::size_t>(state.range(0)), 200, rng);
  for (auto _ : state) benchmark::DoNotOptimize(build_ngram_vocab(corpus, 2).size());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BuildVocab)->Arg(500)->Arg(2000);

void BM_TfidfTransform(benchmark::State& state) {
  Rng rng(4);
  const auto corpus = random_corpus(1000, 200, rng);
  const NgramVocabulary vocab = build_ngram_vocab(corpus, 2);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tfidf_transform(corpus[i], vocab).nnz());
    i = (i + 1) % corpus.size();
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TfidfTransform);

void BM_MlpGradient(benchmark::State& state) {
  Rng rng(5);
  const auto d = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(64, static_cast<Eigen::Index>(d), rng);
  const Matrix y = (random_matrix(64, 100, rng).array() < 0.05).cast<double>();
  const MlpModel model = MlpModel::glorot(d, {512, 256}, 100, {0.3, 0.3}, rng);
  Rng dropout(6);
  for (auto _ : state) benchmark::DoNotOptimize(mlp_loss_and_gradient(model, x, y, 0.0, &dropout).loss);
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_MlpGradient)->Arg(128)->Arg(1024);

void BM_SparseInputMlpGradient(benchmark::State& state) {
  Rng rng(7);
  const Eigen::Index d = state.range(0);
  Matrix x = Matrix::Zero(64, d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int k = 0; k < 40; ++k) x(i, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(d)))) = rng.uniform();
  }
  const Matrix y = (random_matrix(64, 100, rng).array() < 0.05).cast<double>();
  const MlpModel model = MlpModel::glorot(static_cast<std::size_t>(d), {512, 256}, 100, {0.3, 0.3}, rng);
  Rng dropout(8);
  for (auto _ : state) benchmark::DoNotOptimize(mlp_loss_and_gradient(model, x, y, 0.0, &dropout).loss);
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_SparseInputMlpGradient)->Arg(4096)->Arg(12000);

void BM_AssignFolds(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(assign_folds(n, 5, 9));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AssignFolds)->Arg(10000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
