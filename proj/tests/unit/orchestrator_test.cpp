#include <gtest/gtest.h>

#include <fstream>

#include "mmstack/commands.hpp"
#include "mmstack/config.hpp"
#include "mmstack/errors.hpp"
#include "mmstack/feature_io.hpp"
#include "mmstack/stacking.hpp"
#include "test_support.hpp"

using namespace mmstack;

namespace {

RunConfig quick_config(const std::filesystem::path& out) {
  RunConfig c;
  c.synth = fixtures::small_config(120);
  c.seed = 3;
  c.k_folds = 2;
  c.default_learner.hidden = {16};
  c.default_learner.dropout = {0.2};
  c.default_learner.train = fixtures::quick_train(5);
  for (LearnerSpec& s : c.default_text_learners) s.train = fixtures::quick_train(5);
  c.meta_hidden = {16, 8};
  c.meta_dropout = {0.1, 0.1};
  c.meta_train = fixtures::quick_train(10);
  c.fusion.hidden = {8};
  c.fusion.dropout = {0.1};
  c.fusion.train = fixtures::quick_train(3);
  c.output_dir = out;
  return c;
}

std::map<std::string, std::string> read_tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return files;
}

// Labeled manifest of two samples with four tags, written next to `preds`.
std::filesystem::path hand_manifest(const fixtures::TempDir& dir) {
  FeatureMatrix f{"v", Matrix::Zero(2, 1)};
  write_feature_matrix(f, dir / "v.mmfb");
  save_labels({{0}, {2}}, dir / "labels.json");
  save_vocabulary(TagVocabulary::numbered(4), dir / "vocab.json");
  write_file_atomic(dir / "manifest.json",
                    R"({"sample_ids": ["s0", "s1"], "modalities": {"v": "v.mmfb"}, "labels": "labels.json",)"
                    R"( "vocabulary": "vocab.json"})");
  return dir / "manifest.json";
}

}  // namespace

TEST(RunConfig, JsonRoundTripAndHash) {
  fixtures::TempDir dir("cfg");
  RunConfig c = quick_config(dir.path());
  c.learners["asr"] = {default_text_learner_specs()[0]};
  c.ladder = {{"visual"}, {"visual", "extra"}};
  const RunConfig back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);

  RunConfig moved = c;
  moved.output_dir = "/elsewhere";
  moved.threads = 8;
  EXPECT_EQ(config_hash(moved), config_hash(c));
  RunConfig reseeded = c;
  reseeded.seed = 4;
  EXPECT_NE(config_hash(reseeded), config_hash(c));
}

TEST(RunConfig, ValidationErrors) {
  EXPECT_THROW(RunConfig::from_json({{"version", 2}}), ValidationError);
  EXPECT_THROW(RunConfig::from_json({{"k_folds", 1}}), ValidationError);
  EXPECT_THROW(RunConfig::from_json({{"modalities", {"extra"}}}), ValidationError);
  EXPECT_THROW(RunConfig::from_json({{"fusion", {{"strategies", {"bogus"}}}}}), ValidationError);
  EXPECT_THROW(RunConfig::from_json(nlohmann::json::array()), ValidationError);
  EXPECT_THROW(RunConfig::from_json({{"meta_hidden", {64}}}), ValidationError);
  EXPECT_THROW(RunConfig::from_json({{"meta", {{"hiden", {64}}}}}), ValidationError);
  EXPECT_THROW(RunConfig::from_json({{"dataset", {{"manfest", "m.json"}}}}), ValidationError);
  const RunConfig d = RunConfig::from_json(nlohmann::json::object());
  ASSERT_TRUE(d.synth.has_value());
  EXPECT_EQ(d.synth->modalities.size(), 4u);
  EXPECT_EQ(d.k_folds, 5u);
  EXPECT_EQ(d.meta_hidden, (std::vector<std::size_t>{512, 256}));
}

TEST(RunConfig, LoadResolvesManifestRelativeToFile) {
  fixtures::TempDir dir("cfgload");
  std::filesystem::create_directories(dir / "sub");
  write_file_atomic(dir / "sub" / "run.json", R"({"dataset": {"manifest": "data/manifest.json"}})");
  const RunConfig c = load_run_config(dir / "sub" / "run.json");
  EXPECT_EQ(*c.manifest, dir / "sub" / "data" / "manifest.json");
  EXPECT_THROW(load_run_config(dir / "missing.json"), IoError);
}

TEST(Commands, SynthIsByteIdenticalAndLoadable) {
  fixtures::TempDir a("syna"), b("synb");
  const auto manifest = cmd_synth(quick_config(a.path()));
  cmd_synth(quick_config(b.path()));
  EXPECT_EQ(read_tree(a.path()), read_tree(b.path()));
  const Dataset ds = assemble_dataset(load_manifest(manifest));
  EXPECT_EQ(ds.size(), 120u);
}

TEST(Commands, SynthRejectsTooFewSamplesBeforeWriting) {
  fixtures::TempDir dir("synsmall");
  RunConfig c = quick_config(dir / "out");
  c.k_folds = 5;
  c.synth->num_samples = 9;
  EXPECT_THROW(cmd_synth(c), ValidationError);
  EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Commands, CompareModalitiesHasRowPerModality) {
  fixtures::TempDir dir("cm");
  const EvalReport r = cmd_compare_modalities(quick_config(dir.path()));
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].name, "visual");
  EXPECT_EQ(r.config_hash, config_hash(quick_config(dir.path())));
  EXPECT_EQ(r.seed, 3u);
  EXPECT_TRUE(std::filesystem::exists(dir / "compare_modalities.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "compare_modalities.csv"));
  const EvalReport back = EvalReport::from_json(nlohmann::ordered_json::parse(read_file(dir / "compare_modalities.json")));
  EXPECT_EQ(back.numbers_json(), r.numbers_json());
}

TEST(Commands, CompareCombinationsFollowsLadder) {
  fixtures::TempDir dir("cc");
  RunConfig c = quick_config(dir.path());
  const EvalReport r = cmd_compare_combinations(c);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows[1].name, "visual+sound");
  EXPECT_EQ(r.rows[3].name, "visual+sound+asr+extra");
  c.ladder = {{"sound"}, {"sound", "asr"}};
  EXPECT_EQ(cmd_compare_combinations(c).rows.size(), 2u);
  c.ladder = {{"smell"}};
  EXPECT_THROW(cmd_compare_combinations(c), ValidationError);
}

TEST(Commands, CompareFusionHasFiveRowsAndIsReproducible) {
  fixtures::TempDir dir("cf");
  const RunConfig c = quick_config(dir.path());
  const EvalReport a = cmd_compare_fusion(c);
  std::vector<std::string> names;
  for (const ReportRow& row : a.rows) names.push_back(row.name);
  EXPECT_EQ(names, (std::vector<std::string>{"stacked", "concat", "sum_pool", "max_pool", "attention"}));
  EXPECT_EQ(a.split.at("seed"), derive_seed(3, "holdout"));
  RunConfig threaded = c;
  threaded.threads = 3;
  EXPECT_EQ(cmd_compare_fusion(threaded).numbers_json(), a.numbers_json());
}

TEST(Commands, TrainPredictScoreMatchesInProcessEvaluation) {
  fixtures::TempDir dir("tps");
  RunConfig c = quick_config(dir.path());
  const auto manifest = cmd_synth(c);
  c.synth.reset();
  c.manifest = manifest;
  const auto model_dir = cmd_train(c);
  const auto pred_path = cmd_predict(c, model_dir, manifest);
  const PredictionFile file = parse_prediction_lines(read_file(pred_path));
  ASSERT_EQ(file.sample_ids.size(), 120u);
  for (const RankedPrediction& p : file.predictions) {
    for (std::size_t r = 1; r < p.size(); ++r) EXPECT_GE(p[r - 1].confidence, p[r].confidence);
  }
  const EvalReport scored = cmd_score(c, pred_path, manifest);

  const Dataset ds = load_run_dataset(c);
  const StackedModel model = load_stacked(model_dir);
  const Scores direct = evaluate(top_k_predictions(predict_stacked_proba(model, ds), c.metrics.gap.top_k), ds.targets,
                                 c.metrics, ds.vocabulary);
  EXPECT_EQ(scored.rows[0].gap, direct.gap);
  EXPECT_EQ(scored.rows[0].accuracy, direct.accuracy);
  EXPECT_EQ(scored.rows[0].name, "predictions.jsonl");
}

TEST(Commands, PredictRejectsWrongDimensions) {
  fixtures::TempDir dir("pdim");
  RunConfig c = quick_config(dir / "a");
  const auto model_dir = cmd_train(c);
  RunConfig other = quick_config(dir / "b");
  other.synth->modalities[0].dim = 5;
  const auto manifest = cmd_synth(other);
  try {
    cmd_predict(c, model_dir, manifest);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("visual"), std::string::npos);
  }
}

TEST(Score, HandCasePerfectAndEmpty) {
  fixtures::TempDir dir("score");
  const auto manifest = hand_manifest(dir);
  const RunConfig c = quick_config(dir / "out");

  write_file_atomic(dir / "hand.jsonl", encode_prediction_lines({"s0", "s1"}, {{{0, 0.9}, {1, 0.8}}, {{2, 0.7}, {3, 0.6}}}));
  EXPECT_NEAR(cmd_score(c, dir / "hand.jsonl", manifest).rows[0].gap, 5.0 / 6.0, 1e-9);

  write_file_atomic(dir / "perfect.jsonl", encode_prediction_lines({"s0", "s1"}, {{{0, 0.9}}, {{2, 0.8}}}));
  EXPECT_EQ(cmd_score(c, dir / "perfect.jsonl", manifest).rows[0].gap, 1.0);

  write_file_atomic(dir / "empty.jsonl", encode_prediction_lines({"s0", "s1"}, {{}, {}}));
  EXPECT_EQ(cmd_score(c, dir / "empty.jsonl", manifest).rows[0].gap, 0.0);

  // Samples absent from the file count as empty lists.
  write_file_atomic(dir / "partial.jsonl", encode_prediction_lines({"s1"}, {{{2, 0.8}}}));
  EXPECT_DOUBLE_EQ(cmd_score(c, dir / "partial.jsonl", manifest).rows[0].gap, 0.5);

  write_file_atomic(dir / "unknown.jsonl", encode_prediction_lines({"s9"}, {{{0, 0.5}}}));
  EXPECT_THROW(cmd_score(c, dir / "unknown.jsonl", manifest), ValidationError);
}

TEST(PredictionLines, RoundTripAndErrors) {
  const std::vector<RankedPrediction> preds{{{3, 0.125}, {1, 1e-20}}, {}};
  const std::string text = encode_prediction_lines({"a", "b"}, preds);
  const PredictionFile f = parse_prediction_lines(text);
  EXPECT_EQ(f.sample_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(f.predictions, preds);
  EXPECT_EQ(encode_prediction_lines(f.sample_ids, f.predictions), text);
  EXPECT_THROW(parse_prediction_lines(text + text), ValidationError);
  EXPECT_THROW(parse_prediction_lines("{not json}\n"), FormatError);
  EXPECT_THROW(parse_prediction_lines(R"({"sample_id": "x", "predictions": [[1]]})"), FormatError);
}

TEST(Report, CsvAndJsonCarrySameNumbers) {
  EvalReport r;
  r.command = "score";
  r.config_hash = "00000000000000ff";
  r.seed = 9;
  r.rows = {{"a,b", 0.1, 1.0 / 3.0}};
  const std::string csv = r.to_csv();
  EXPECT_NE(csv.find("\"a,b\""), std::string::npos);
  EXPECT_NE(csv.find("0.33333333333333331"), std::string::npos);
  const EvalReport back = EvalReport::from_json(nlohmann::ordered_json::parse(r.to_json().dump()));
  EXPECT_EQ(back.rows[0].gap, 1.0 / 3.0);
  r.rows.push_back(r.rows[0]);
  fixtures::TempDir dir("rep");
  EXPECT_THROW(write_report(r, dir.path(), "bad"), ValidationError);
  EXPECT_FALSE(std::filesystem::exists(dir / "bad.json"));
}
