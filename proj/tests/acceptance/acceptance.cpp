// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion ids as
// arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "mmstack/commands.hpp"
#include "mmstack/config.hpp"
#include "mmstack/errors.hpp"
#include "mmstack/feature_io.hpp"
#include "mmstack/learners.hpp"
#include "mmstack/metrics.hpp"
#include "mmstack/model_io.hpp"
#include "mmstack/stacking.hpp"
#include "mmstack/synth.hpp"
#include "mmstack/text_features.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mmstack;

namespace {

// Pinned tolerances.
constexpr double kGapTolerance = 1e-9;
constexpr double kHandCaseGap = 5.0 / 6.0;
constexpr double kGradientTolerance = 1e-4;
constexpr double kFiniteDiffEps = 1e-5;
constexpr double kTfidfExampleTolerance = 1e-3;
constexpr double kTfidfOracleTolerance = 1e-9;
constexpr double kStackingGain = 0.02;
constexpr double kLadderSlack = -0.005;
constexpr double kDropoutSigmas = 3.0;
constexpr int kDropoutMasks = 10000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;  // 0: no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

Matrix random_labels(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return m;
}

std::map<std::string, std::string> read_tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return files;
}

// Small fast run config shared by the determinism and round-trip checks.
RunConfig small_run(const std::filesystem::path& out) {
  RunConfig c;
  c.synth = fixtures::small_config(160);
  c.seed = 11;
  c.k_folds = 3;
  c.default_learner.hidden = {32};
  c.default_learner.train = fixtures::quick_train(8);
  for (LearnerSpec& s : c.default_text_learners) s.train = fixtures::quick_train(8);
  c.meta_hidden = {32, 16};
  c.meta_train = fixtures::quick_train(15);
  c.fusion.hidden = {16};
  c.fusion.dropout = {0.3};
  c.fusion.train = fixtures::quick_train(5);
  c.output_dir = out;
  return c;
}

// --- 1 -------------------------------------------------------------------

Outcome gap_correctness() {
  const std::vector<RankedPrediction> hand{{{0, 0.9}, {1, 0.8}}, {{2, 0.7}, {3, 0.6}}};
  const std::vector<MultiLabelTarget> hand_targets{{0}, {2}};
  const double hand_gap = gap(hand, hand_targets, GapConfig{});
  const double hand_oracle = gap_bruteforce_oracle(hand, hand_targets, GapConfig{});

  Rng rng(20240601);
  double worst = 0.0;
  int ties = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(10), tags = 1 + rng.below(8);
    const bool all_ties = trial % 8 == 0;
    ties += all_ties;
    Matrix probs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tags));
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      probs.data()[i] = all_ties ? 0.5 : static_cast<double>(rng.below(6)) / 5.0;
    }
    GapConfig cfg;
    cfg.top_k = 1 + rng.below(3);
    std::vector<MultiLabelTarget> targets(n);
    for (auto& t : targets) {
      for (std::size_t tag = 0; tag < tags; ++tag) {
        if (rng.bernoulli(0.3)) t.push_back(static_cast<int>(tag));
      }
    }
    targets[rng.below(n)] = {static_cast<int>(rng.below(tags))};
    const auto preds = top_k_predictions(probs, cfg.top_k);
    const double g = gap(preds, targets, cfg);
    worst = std::max(worst, std::abs(g - gap_bruteforce_oracle(preds, targets, cfg)));
    worst = std::max(worst, std::abs(g - fixtures::reference_gap(preds, targets, cfg.top_k)));
  }
  const bool pass = worst <= kGapTolerance && std::abs(hand_gap - kHandCaseGap) <= kGapTolerance &&
                    std::abs(hand_oracle - kHandCaseGap) <= kGapTolerance;
  return {pass, fmt("hand case %.12f, max |gap - oracle| %.2e over 200 instances (%.0f all-tie)", hand_gap, worst,
                    ties)};
}

// --- 2 -------------------------------------------------------------------

Outcome no_leakage() {
  const Dataset ds = synth_generate(fixtures::small_config(200), 77);
  RunConfig defaults;
  const std::size_t i = 123;
  int checked = 0, failures = 0;
  for (std::size_t k : {2u, 5u}) {
    const FoldAssignment folds = assign_folds(ds.size(), k, 5);
    const std::size_t own = folds.fold_of[i];
    for (const std::string& modality : ds.modality_names()) {
      for (const LearnerSpec& spec : defaults.learners_for(modality, ds.text_vocabularies.count(modality) > 0)) {
        const BlockSpec block{modality, spec};
        const OofBlock base = oof_meta_features(ds, block, folds, 9);

        Dataset mutated = ds;
        mutated.modality(modality).values.row(static_cast<Eigen::Index>(i)).array() += 3.0;
        mutated.targets[i] = ds.targets[i] == MultiLabelTarget{0} ? MultiLabelTarget{1, 2} : MultiLabelTarget{0};
        const OofBlock after = oof_meta_features(mutated, block, folds, 9);

        Dataset relabeled = ds;
        relabeled.targets[i] = mutated.targets[i];
        const OofBlock label_only = oof_meta_features(relabeled, block, folds, 9);

        // Row i of the mutated run, recomputed from the original features. The
        // whole matrix is predicted because a one-row product takes a different
        // kernel and can differ in the last bit.
        const auto row = static_cast<Eigen::Index>(i);
        const Matrix replay = predict_proba(after.fold_models[own], ds.modality(modality).values);
        bool ok = encode_model(after.fold_models[own]) == encode_model(base.fold_models[own]);
        ok = ok && replay.row(row) == base.probabilities.row(row);
        ok = ok && label_only.probabilities.row(row) == base.probabilities.row(row);
        for (std::size_t r : folds.members(own)) {
          if (r == i) continue;
          ok = ok && after.probabilities.row(static_cast<Eigen::Index>(r)) ==
                         base.probabilities.row(static_cast<Eigen::Index>(r));
        }
        ++checked;
        if (!ok) {
          ++failures;
          spdlog::error("leakage: k={} block {}", k, block.name());
        }
      }
    }
  }
  return {failures == 0 && checked > 0,
          fmt("%.0f block/fold configurations, %.0f with a changed row", checked, failures) +
              "; sample 123 mutated in features and labels"};
}

// --- 3 -------------------------------------------------------------------

Outcome gradient_fidelity() {
  Rng rng(31);
  const Matrix x = random_matrix(16, 6, rng);
  const Matrix y = random_labels(16, 4, rng);

  LinearModel logistic = LinearModel::zeros(6, 4, LossKind::kLogistic);
  logistic.weights = random_matrix(4, 6, rng, 0.5);
  logistic.bias = random_matrix(4, 1, rng, 0.5);
  const double e_logistic = finite_diff_check(logistic, x, y, kFiniteDiffEps, 0.01).max_relative_error;

  // Redraw until every margin is at least 1e-3 away from the hinge.
  LinearModel hinge = LinearModel::zeros(6, 4, LossKind::kSquaredHinge);
  for (;;) {
    hinge.weights = random_matrix(4, 6, rng, 0.5);
    hinge.bias = random_matrix(4, 1, rng, 0.5);
    const Matrix s = (x * hinge.weights.transpose()).rowwise() + hinge.bias.transpose();
    const Matrix sign = 2.0 * y.array() - 1.0;
    if ((1.0 - sign.array() * s.array()).abs().minCoeff() > 1e-3) break;
  }
  const double e_hinge = finite_diff_check(hinge, x, y, kFiniteDiffEps, 0.01).max_relative_error;

  const MlpModel mlp = MlpModel::glorot(6, {8, 5}, 4, {0.3, 0.3}, rng);
  const double e_mlp = finite_diff_check(mlp, x, y, kFiniteDiffEps, 0.01).max_relative_error;

  const bool pass = e_logistic < kGradientTolerance && e_hinge < kGradientTolerance && e_mlp < kGradientTolerance &&
                    mlp.layers.size() == 3;
  return {pass, fmt("max relative error logistic %.2e, squared hinge %.2e, 3-layer mlp %.2e", e_logistic, e_hinge,
                    e_mlp)};
}

// --- 4 -------------------------------------------------------------------

Outcome tfidf_correctness() {
  const NgramVocabulary v = build_ngram_vocab({{"a", "b"}, {"a", "c"}}, 1);
  const SparseVector s = tfidf_transform({"a", "b"}, v);
  const double wa = fixtures::sparse_weight(s, v, {"a"});
  const double wb = fixtures::sparse_weight(s, v, {"b"});
  const double wab = fixtures::sparse_weight(s, v, {"a", "b"});
  bool pass = std::abs(wa - 0.4494) <= kTfidfExampleTolerance && std::abs(wb - 0.6317) <= kTfidfExampleTolerance &&
              std::abs(wab - 0.6317) <= kTfidfExampleTolerance && s.nnz() == 3;

  Rng rng(4242);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "e", "f"};
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenStream> corpus(1 + rng.below(6));
    for (TokenStream& d : corpus) {
      d.resize(rng.below(10));
      for (std::string& t : d) t = alphabet[rng.below(alphabet.size())];
    }
    const std::size_t min_df = 1 + rng.below(2);
    const NgramVocabulary vocab = build_ngram_vocab(corpus, min_df);
    for (const TokenStream& doc : corpus) {
      const SparseVector got = tfidf_transform(doc, vocab);
      const auto want = fixtures::oracle_tfidf(corpus, doc, min_df);
      if (got.nnz() != want.size()) pass = false;
      for (const auto& [g, w] : want) worst = std::max(worst, std::abs(fixtures::sparse_weight(got, vocab, g) - w));
    }
  }
  pass = pass && worst <= kTfidfOracleTolerance;
  return {pass, fmt("example a %.4f b %.4f (a,b) %.4f; max |tfidf - oracle| %.2e over 100 corpora", wa, wb, wab,
                    worst)};
}

// --- 5 -------------------------------------------------------------------

SynthConfig complementary_config() {
  SynthConfig c;
  c.num_samples = 2000;
  c.num_tags = 20;
  c.min_tags = 1;
  c.max_tags = 3;
  c.extra_dim = 0;
  SynthModality left = fixtures::dense_modality("left", 32, 1.0);
  SynthModality right = fixtures::dense_modality("right", 32, 1.0);
  for (int t = 0; t < 10; ++t) {
    left.informative_tags.push_back(t);
    right.informative_tags.push_back(t + 10);
  }
  c.modalities = {left, right};
  return c;
}

Outcome stacking_gain() {
  fixtures::TempDir dir("acc5");
  RunConfig cfg;
  cfg.synth = complementary_config();
  cfg.seed = 5;
  cfg.output_dir = dir.path();
  const EvalReport singles = cmd_compare_modalities(cfg);
  const EvalReport ladder = cmd_compare_combinations(cfg);
  double best_single = 0.0;
  for (const ReportRow& r : singles.rows) best_single = std::max(best_single, r.gap);
  const double stacked = ladder.rows.back().gap;
  double worst_step = 1.0;
  for (std::size_t i = 1; i < ladder.rows.size(); ++i) {
    worst_step = std::min(worst_step, ladder.rows[i].gap - ladder.rows[i - 1].gap);
  }
  const bool pass = stacked >= best_single + kStackingGain && worst_step >= kLadderSlack && ladder.rows.size() >= 2;
  return {pass, fmt("best single %.4f, stacked %.4f (gain %.4f), smallest ladder step %.4f", best_single, stacked,
                    stacked - best_single, worst_step)};
}

// --- 6 -------------------------------------------------------------------

// The default four-modality generator at n=2000 with half of the sound
// samples carrying a wrong tag's signature.
SynthConfig conflict_config() {
  SynthConfig c = default_synth_config();
  c.num_samples = 2000;
  c.num_tags = 20;
  for (SynthModality& m : c.modalities) {
    if (m.name == "sound") m.conflict_rate = 0.5;
  }
  return c;
}

Outcome fusion_direction() {
  fixtures::TempDir dir("acc6");
  RunConfig cfg;
  cfg.synth = conflict_config();
  cfg.seed = 6;
  cfg.output_dir = dir.path();
  const EvalReport r = cmd_compare_fusion(cfg);
  std::vector<std::string> names;
  for (const ReportRow& row : r.rows) names.push_back(row.name);
  const std::vector<std::string> want{"stacked", "concat", "sum_pool", "max_pool", "attention"};
  const double stacked = r.row("stacked").gap, concat = r.row("concat").gap;
  std::string detail = fmt("stacked %.4f, concat %.4f, sum_pool %.4f, max_pool %.4f", stacked, concat,
                           r.row("sum_pool").gap, r.row("max_pool").gap) +
                       fmt(", attention %.4f", r.row("attention").gap);
  return {names == want && stacked >= concat, detail};
}

// --- 7 -------------------------------------------------------------------

Outcome determinism() {
  fixtures::TempDir dir("acc7");
  std::vector<std::string> diffs;
  auto run = [&](const std::string& tag) {
    RunConfig c = small_run(dir / tag);
    cmd_compare_modalities(c);
    cmd_compare_combinations(c);
    cmd_compare_fusion(c);
    const auto manifest = cmd_synth(c);
    RunConfig m = c;
    m.synth.reset();
    m.manifest = manifest;
    const auto model = cmd_train(m);
    const auto preds = cmd_predict(m, model, manifest);
    cmd_score(m, preds, manifest);
  };
  // Both runs use the same directory: the manifest path is part of the config.
  run("run");
  const auto a = read_tree(dir / "run");
  std::filesystem::remove_all(dir / "run");
  run("run");
  const auto b = read_tree(dir / "run");
  std::size_t compared = 0;
  for (const auto& [name, bytes] : a) {
    auto it = b.find(name);
    if (it == b.end()) {
      diffs.push_back(name + " missing");
      continue;
    }
    ++compared;
    if (name.ends_with(".json") && name.find('/') == std::string::npos) {
      // Reports: compare the numbers and config blocks; meta holds timestamps.
      const auto ja = nlohmann::ordered_json::parse(bytes), jb = nlohmann::ordered_json::parse(it->second);
      if (ja.is_object() && ja.contains("numbers")) {
        if (ja.at("numbers").dump() != jb.at("numbers").dump() || ja.at("config").dump() != jb.at("config").dump()) {
          diffs.push_back(name);
        }
        continue;
      }
    }
    if (bytes != it->second) diffs.push_back(name);
  }
  std::string detail = fmt("%.0f files compared across two full runs", static_cast<double>(compared));
  for (const std::string& d : diffs) detail += "; differs: " + d;
  return {diffs.empty() && compared == b.size() && compared > 0, detail};
}

// --- 8 -------------------------------------------------------------------

Outcome dropout_contract() {
  Rng rng(8);
  const MlpModel m = MlpModel::glorot(5, {12, 6}, 3, {0.5, 0.3}, rng);
  const Matrix x = random_matrix(10, 5, rng);
  const bool eval_deterministic = predict_proba(m, x) == predict_proba(m, x);

  const double p = 0.3;
  const Matrix base = random_matrix(1, 16, rng).cwiseAbs();
  Matrix sum = Matrix::Zero(1, 16), sumsq = Matrix::Zero(1, 16);
  for (int t = 0; t < kDropoutMasks; ++t) {
    Matrix a = base;
    apply_inverted_dropout(a, p, rng);
    sum += a;
    sumsq += a.cwiseProduct(a);
  }
  double worst = 0.0;
  for (Eigen::Index c = 0; c < base.cols(); ++c) {
    const double mean = sum(0, c) / kDropoutMasks;
    const double se = std::sqrt((sumsq(0, c) / kDropoutMasks - mean * mean) / kDropoutMasks);
    worst = std::max(worst, std::abs(mean - base(0, c)) / se);
  }
  return {eval_deterministic && worst <= kDropoutSigmas,
          std::string("repeated eval outputs identical: ") + (eval_deterministic ? "yes" : "no") +
              fmt("; worst unit deviation %.2f standard errors over %.0f masks", worst, kDropoutMasks)};
}

// --- 9 -------------------------------------------------------------------

Outcome round_trips() {
  fixtures::TempDir dir("acc9");
  RunConfig c = small_run(dir / "run");
  const auto manifest = cmd_synth(c);
  std::vector<std::string> failures;

  std::size_t feature_files = 0;
  for (const auto& e : std::filesystem::directory_iterator(c.output_dir)) {
    if (e.path().extension() != ".mmfb") continue;
    ++feature_files;
    const std::string bytes = read_file(e.path());
    const FeatureFile f = read_feature_file(e.path());
    const auto copy = dir / ("copy_" + e.path().filename().string());
    if (std::holds_alternative<FeatureMatrix>(f)) write_feature_matrix(std::get<FeatureMatrix>(f), copy);
    else write_sequence_set(std::get<SequenceSet>(f), copy);
    if (read_file(copy) != bytes) failures.push_back(e.path().filename().string());
  }

  RunConfig m = c;
  m.synth.reset();
  m.manifest = manifest;
  const auto model_dir = cmd_train(m);
  save_stacked(load_stacked(model_dir), dir / "bundle_copy");
  if (read_tree(model_dir) != read_tree(dir / "bundle_copy")) failures.push_back("model bundle");

  const auto pred_path = cmd_predict(m, model_dir, manifest);
  const std::string pred_bytes = read_file(pred_path);
  const PredictionFile pf = parse_prediction_lines(pred_bytes);
  if (encode_prediction_lines(pf.sample_ids, pf.predictions) != pred_bytes) failures.push_back("prediction file");

  const EvalReport scored = cmd_score(m, pred_path, manifest);
  const Dataset ds = load_run_dataset(m);
  const Scores direct = evaluate(top_k_predictions(predict_stacked_proba(load_stacked(model_dir), ds), m.metrics.gap.top_k),
                                 ds.targets, m.metrics, ds.vocabulary);
  const bool same = scored.rows[0].gap == direct.gap && scored.rows[0].accuracy == direct.accuracy;
  if (!same) failures.push_back("score vs in-process");

  std::string detail = fmt("%.0f feature files, bundle, predictions; scored gap %.6f = in-process %.6f",
                           static_cast<double>(feature_files), scored.rows[0].gap, direct.gap);
  for (const std::string& f : failures) detail += "; mismatch: " + f;
  return {failures.empty() && feature_files > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> criteria{
      {1, "gap-correctness", 5.0, gap_correctness},
      {2, "no-leakage", 30.0, no_leakage},
      {3, "gradient-fidelity", 0.0, gradient_fidelity},
      {4, "tfidf-correctness", 0.0, tfidf_correctness},
      {5, "stacking-gain", 300.0, stacking_gain},
      {6, "fusion-direction", 600.0, fusion_direction},
      {7, "determinism", 0.0, determinism},
      {8, "dropout-contract", 0.0, dropout_contract},
      {9, "file-round-trips", 0.0, round_trips},
  };
  std::set<int> selected;
  for (int a = 1; a < argc; ++a) selected.insert(std::atoi(argv[a]));

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.time_limit_s <= 0.0 || secs <= c.time_limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    char timing[96];
    if (c.time_limit_s > 0.0) std::snprintf(timing, sizeof timing, "%.1f s, limit %.0f s", secs, c.time_limit_s);
    else std::snprintf(timing, sizeof timing, "%.1f s", secs);
    std::printf("[%s] %d %s: %s (%s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), timing);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
