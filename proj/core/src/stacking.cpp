#include "mmstack/stacking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "mmstack/errors.hpp"
#include "mmstack/model_io.hpp"
#include "mmstack/parallel.hpp"
#include "mmstack/random.hpp"

namespace mmstack {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kBundleFormat = "mmstack-stacked";
constexpr int kBundleVersion = 1;

LearnerKind parse_learner_kind(const std::string& name) {
  if (name == "mlp") return LearnerKind::kMlp;
  if (name == "logistic") return LearnerKind::kLogistic;
  if (name == "squared_hinge" || name == "hinge") return LearnerKind::kSquaredHinge;
  throw ValidationError("unknown learner '" + name + "' (expected mlp, logistic or squared_hinge)");
}

std::string model_file_name(std::size_t block, const BlockSpec& spec, std::size_t fold) {
  std::string safe;
  for (char c : spec.modality) safe.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return "base_" + std::to_string(block) + "_" + safe + "_" + spec.learner.label() + "_fold" + std::to_string(fold) +
         ".model";
}

const Matrix& modality_values(const Dataset& data, const std::string& name) {
  if (!data.has_modality(name)) throw ValidationError("input is missing modality '" + name + "'");
  return data.modality(name).values;
}

}  // namespace

std::string LearnerSpec::label() const {
  switch (kind) {
    case LearnerKind::kLogistic: return "logistic";
    case LearnerKind::kSquaredHinge: return "squared_hinge";
    case LearnerKind::kMlp: return "mlp";
  }
  return "unknown";
}

void LearnerSpec::validate() const {
  train.validate();
  if (kind == LearnerKind::kMlp) {
    if (dropout.size() != hidden.size()) throw ValidationError("learner: one dropout rate per hidden layer required");
    for (std::size_t h : hidden) {
      if (h == 0) throw ValidationError("learner: hidden sizes must be positive");
    }
    for (double p : dropout) {
      if (!(p >= 0.0 && p < 1.0)) throw ValidationError("learner: dropout rates must lie in [0, 1)");
    }
  }
}

ordered_json LearnerSpec::to_json() const {
  ordered_json j;
  j["kind"] = label();
  if (kind == LearnerKind::kMlp) {
    j["hidden"] = hidden;
    j["dropout"] = dropout;
  }
  j["train"] = train.to_json();
  return j;
}

LearnerSpec LearnerSpec::from_json(const json& j) {
  LearnerSpec s;
  try {
    s.kind = parse_learner_kind(j.value("kind", std::string("mlp")));
    s.hidden = j.value("hidden", s.hidden);
    if (j.contains("dropout")) {
      const json& d = j.at("dropout");
      s.dropout = d.is_number() ? std::vector<double>(s.hidden.size(), d.get<double>()) : d.get<std::vector<double>>();
    } else {
      s.dropout.assign(s.hidden.size(), 0.3);
    }
    if (j.contains("train")) s.train = TrainConfig::from_json(j.at("train"));
    if (s.kind != LearnerKind::kMlp) {
      s.hidden.clear();
      s.dropout.clear();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed learner spec: ") + e.what());
  }
  s.validate();
  return s;
}

AnyModel fit_learner(const LearnerSpec& spec, const Matrix& x, const Matrix& y, std::uint64_t seed) {
  TrainConfig cfg = spec.train;
  cfg.seed = seed;
  switch (spec.kind) {
    case LearnerKind::kLogistic: return train_linear(x, y, LossKind::kLogistic, cfg);
    case LearnerKind::kSquaredHinge: return train_linear(x, y, LossKind::kSquaredHinge, cfg);
    case LearnerKind::kMlp: return train_mlp(x, y, spec.hidden, spec.dropout, cfg);
  }
  throw ValidationError("unknown learner kind");
}

std::vector<std::size_t> FoldAssignment::members(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::complement(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != fold) out.push_back(i);
  }
  return out;
}

FoldAssignment assign_folds(std::size_t n, std::size_t k, std::uint64_t seed,
                            const std::vector<MultiLabelTarget>* stratify) {
  if (k < 2) throw ValidationError("assign_folds: k must be >= 2");
  if (n < k) {
    throw ValidationError("assign_folds: " + std::to_string(n) + " samples cannot fill " + std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  if (stratify) {
    if (stratify->size() != n) throw AlignmentError("assign_folds: stratification targets misaligned");
    auto key = [&](std::size_t i) {
      const MultiLabelTarget& t = (*stratify)[i];
      return t.empty() ? std::numeric_limits<int>::max() : t.front();
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  }
  FoldAssignment out{k, std::vector<std::size_t>(n), seed};
  for (std::size_t r = 0; r < n; ++r) out.fold_of[order[r]] = r % k;
  return out;
}

OofBlock oof_meta_features(const Dataset& dataset, const BlockSpec& spec, const FoldAssignment& folds,
                           std::uint64_t seed, std::size_t threads) {
  spec.learner.validate();
  const Matrix& x = modality_values(dataset, spec.modality);
  if (folds.size() != dataset.size()) throw AlignmentError("fold assignment does not cover the dataset");
  const std::size_t tags = dataset.num_tags();

  OofBlock block;
  block.modality = spec.modality;
  block.name = spec.name();
  block.learner = spec.learner;
  block.probabilities = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(tags));
  block.fold_models.resize(folds.k);
  std::vector<std::vector<std::string>> fold_warnings(folds.k);

  parallel_for(folds.k, threads, [&](std::size_t f) {
    std::vector<std::size_t> train_rows;
    for (std::size_t i : folds.complement(f)) {
      if (!dataset.targets[i].empty()) train_rows.push_back(i);
    }
    if (train_rows.empty()) {
      throw ValidationError("fold " + std::to_string(f) + " of '" + block.name + "' has no labeled training samples");
    }
    const Matrix y = multi_hot(dataset.targets, train_rows, tags);
    for (Eigen::Index t = 0; t < y.cols(); ++t) {
      if (y.col(t).sum() == 0.0) {
        fold_warnings[f].push_back(block.name + ": fold " + std::to_string(f) + " training split has no positives for tag " +
                                   std::to_string(t));
      }
    }
    AnyModel model = fit_learner(spec.learner, gather_rows(x, train_rows), y, derive_seed(seed, block.name, f));
    const std::vector<std::size_t> held_out = folds.members(f);
    const Matrix probs = predict_proba(model, gather_rows(x, held_out));
    for (std::size_t r = 0; r < held_out.size(); ++r) {
      block.probabilities.row(static_cast<Eigen::Index>(held_out[r])) = probs.row(static_cast<Eigen::Index>(r));
    }
    block.fold_models[f] = std::move(model);
  });

  for (auto& w : fold_warnings) {
    for (auto& msg : w) {
      spdlog::debug("{}", msg);
      block.warnings.push_back(std::move(msg));
    }
  }
  return block;
}

ExtraNormalizer ExtraNormalizer::fit(const Matrix& extra, const std::vector<std::size_t>& rows) {
  ExtraNormalizer norm;
  const Eigen::Index e = extra.cols();
  norm.mean = RowVector::Zero(e);
  norm.scale = RowVector::Ones(e);
  if (e == 0 || rows.empty()) return norm;
  const Matrix sub = gather_rows(extra, rows);
  norm.mean = sub.colwise().mean();
  for (Eigen::Index c = 0; c < e; ++c) {
    const double var = (sub.col(c).array() - norm.mean(c)).square().mean();
    const double sd = std::sqrt(var);
    norm.scale(c) = sd > 1e-12 ? sd : 1.0;
  }
  return norm;
}

Matrix ExtraNormalizer::apply(const Matrix& extra) const {
  if (extra.cols() != mean.size()) {
    throw ValidationError("extra features have dimension " + std::to_string(extra.cols()) + ", expected " +
                          std::to_string(mean.size()));
  }
  Matrix out = extra;
  out.rowwise() -= mean;
  out.array().rowwise() /= scale.array();
  return out;
}

MetaFeatureMatrix build_meta_matrix(const std::vector<std::string>& names, const std::vector<const Matrix*>& blocks,
                                    const Matrix& extra, const ExtraNormalizer& normalizer) {
  if (names.size() != blocks.size()) throw ValidationError("build_meta_matrix: names and blocks differ in count");
  if (blocks.empty() && normalizer.dim() == 0) throw ValidationError("build_meta_matrix: nothing to concatenate");
  const Eigen::Index n = blocks.empty() ? extra.rows() : blocks.front()->rows();
  Eigen::Index width = 0;
  for (const Matrix* b : blocks) {
    if (b->rows() != n) throw ValidationError("build_meta_matrix: blocks differ in sample count");
    if (b->cols() != blocks.front()->cols()) throw ValidationError("build_meta_matrix: blocks differ in tag count");
    width += b->cols();
  }
  const bool with_extra = normalizer.dim() > 0;
  if (with_extra && extra.rows() != n) throw ValidationError("build_meta_matrix: extra features misaligned");
  width += with_extra ? static_cast<Eigen::Index>(normalizer.dim()) : 0;

  MetaFeatureMatrix out;
  out.values.resize(n, width);
  Eigen::Index col = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    out.values.middleCols(col, blocks[b]->cols()) = *blocks[b];
    for (Eigen::Index t = 0; t < blocks[b]->cols(); ++t) out.columns.push_back({names[b], static_cast<std::size_t>(t)});
    col += blocks[b]->cols();
  }
  if (with_extra) {
    out.values.middleCols(col, extra.cols()) = normalizer.apply(extra);
    for (Eigen::Index e = 0; e < extra.cols(); ++e) out.columns.push_back({kExtraSource, static_cast<std::size_t>(e)});
  }
  return out;
}

MetaFeatureMatrix build_meta_matrix(const std::vector<OofBlock>& blocks, const Matrix& extra,
                                    const ExtraNormalizer& normalizer) {
  std::vector<std::string> names;
  std::vector<const Matrix*> mats;
  for (const OofBlock& b : blocks) {
    names.push_back(b.name);
    mats.push_back(&b.probabilities);
  }
  return build_meta_matrix(names, mats, extra, normalizer);
}

void StackingConfig::validate() const {
  if (k < 2) throw ValidationError("stacking: k must be >= 2");
  if (meta_hidden.size() != meta_dropout.size()) throw ValidationError("stacking: one meta dropout rate per hidden layer");
  meta_train.validate();
}

std::vector<std::string> StackedModel::modalities() const {
  std::vector<std::string> out;
  for (const BlockSpec& b : blocks) {
    if (std::find(out.begin(), out.end(), b.modality) == out.end()) out.push_back(b.modality);
  }
  return out;
}

StackedModel train_stacked(const Dataset& dataset, const std::vector<BlockSpec>& blocks, const StackingConfig& cfg,
                           StackingArtifacts* artifacts) {
  cfg.validate();
  dataset.validate();
  if (blocks.empty()) throw ValidationError("train_stacked: at least one modality block is required");
  std::set<std::string> names;
  for (const BlockSpec& b : blocks) {
    if (!names.insert(b.name()).second) throw ValidationError("train_stacked: duplicate block '" + b.name() + "'");
    modality_values(dataset, b.modality);
  }
  const std::vector<std::size_t> labeled = dataset.labeled_indices();
  if (labeled.empty()) throw ValidationError("train_stacked: dataset has no labeled samples");

  StackedModel model;
  model.vocabulary = dataset.vocabulary;
  model.blocks = blocks;
  model.folds = assign_folds(dataset.size(), cfg.k, derive_seed(cfg.seed, "folds"),
                             cfg.stratified ? &dataset.targets : nullptr);

  std::vector<OofBlock> oof;
  std::vector<std::string> warnings;
  for (const BlockSpec& b : blocks) {
    oof.push_back(oof_meta_features(dataset, b, model.folds, cfg.seed, cfg.threads));
    warnings.insert(warnings.end(), oof.back().warnings.begin(), oof.back().warnings.end());
  }
  if (!warnings.empty()) {
    spdlog::warn("{} fold/tag training splits have no positives; details at debug level", warnings.size());
  }

  model.extra_normalizer = cfg.use_extra ? ExtraNormalizer::fit(dataset.extra, labeled)
                                         : ExtraNormalizer::fit(Matrix(dataset.extra.rows(), 0), labeled);
  MetaFeatureMatrix meta = build_meta_matrix(oof, dataset.extra, model.extra_normalizer);
  model.columns = meta.columns;

  TrainConfig meta_cfg = cfg.meta_train;
  meta_cfg.seed = derive_seed(cfg.seed, "meta");
  model.meta = train_mlp(gather_rows(meta.values, labeled), multi_hot(dataset.targets, labeled, dataset.num_tags()),
                         cfg.meta_hidden, cfg.meta_dropout, meta_cfg);

  for (const BlockSpec& b : blocks) {
    auto it = dataset.text_vocabularies.find(b.modality);
    if (it != dataset.text_vocabularies.end()) model.text_vocabularies.emplace(it->first, it->second);
  }
  for (OofBlock& b : oof) model.fold_models.push_back(b.fold_models);

  if (artifacts) {
    artifacts->blocks = std::move(oof);
    artifacts->meta_features = std::move(meta);
    artifacts->warnings = std::move(warnings);
  }
  return model;
}

Matrix predict_stacked_proba(const StackedModel& model, const Dataset& data) {
  std::vector<std::string> names;
  std::vector<Matrix> averaged;
  averaged.reserve(model.blocks.size());
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const BlockSpec& spec = model.blocks[b];
    const Matrix& x = modality_values(data, spec.modality);
    const std::size_t expected = input_dim(model.fold_models[b].front());
    if (static_cast<std::size_t>(x.cols()) != expected) {
      throw ValidationError("modality '" + spec.modality + "' has dimension " + std::to_string(x.cols()) +
                            ", model expects " + std::to_string(expected));
    }
    Matrix sum = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(model.vocabulary.size()));
    for (const AnyModel& m : model.fold_models[b]) sum += predict_proba(m, x);
    averaged.push_back(sum / static_cast<double>(model.fold_models[b].size()));
    names.push_back(spec.name());
  }
  std::vector<const Matrix*> ptrs;
  for (const Matrix& m : averaged) ptrs.push_back(&m);
  const Matrix extra = model.extra_normalizer.dim() > 0 ? data.extra : Matrix(static_cast<Eigen::Index>(data.size()), 0);
  const MetaFeatureMatrix meta = build_meta_matrix(names, ptrs, extra, model.extra_normalizer);
  return predict_proba(model.meta, meta.values);
}

std::vector<RankedPrediction> predict_stacked(const StackedModel& model, const Dataset& data) {
  return top_k_predictions(predict_stacked_proba(model, data), model.vocabulary.size());
}

void save_stacked(const StackedModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json manifest;
  manifest["format"] = kBundleFormat;
  manifest["version"] = kBundleVersion;
  manifest["config_hash"] = model.config_hash;
  manifest["vocabulary"] = model.vocabulary.to_json();
  ordered_json folds;
  folds["k"] = model.folds.k;
  folds["seed"] = model.folds.seed;
  folds["fold_of"] = model.folds.fold_of;
  manifest["folds"] = std::move(folds);

  ordered_json blocks = ordered_json::array();
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    ordered_json entry;
    entry["modality"] = model.blocks[b].modality;
    entry["learner"] = model.blocks[b].learner.to_json();
    ordered_json files = ordered_json::array();
    for (std::size_t f = 0; f < model.fold_models[b].size(); ++f) {
      const std::string file = model_file_name(b, model.blocks[b], f);
      save_model(model.fold_models[b][f], dir / file, model.config_hash);
      files.push_back(file);
    }
    entry["fold_models"] = std::move(files);
    blocks.push_back(std::move(entry));
  }
  manifest["blocks"] = std::move(blocks);

  save_model(model.meta, dir / "meta.model", model.config_hash);
  manifest["meta_model"] = "meta.model";

  ordered_json extra;
  extra["mean"] = std::vector<double>(model.extra_normalizer.mean.data(),
                                      model.extra_normalizer.mean.data() + model.extra_normalizer.mean.size());
  extra["scale"] = std::vector<double>(model.extra_normalizer.scale.data(),
                                       model.extra_normalizer.scale.data() + model.extra_normalizer.scale.size());
  manifest["extra_normalizer"] = std::move(extra);

  ordered_json columns = ordered_json::array();
  for (const ColumnRef& c : model.columns) columns.push_back({c.source, c.index});
  manifest["columns"] = std::move(columns);

  ordered_json text = ordered_json::object();
  for (const auto& [name, vocab] : model.text_vocabularies) {
    const std::string file = "text_vocab_" + name + ".json";
    write_file_atomic(dir / file, vocab.to_json().dump() + "\n");
    text[name] = file;
  }
  manifest["text_vocabularies"] = std::move(text);

  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

StackedModel load_stacked(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw ValidationError((dir / "manifest.json").string() + ": " + e.what());
  }
  StackedModel model;
  try {
    if (manifest.value("format", std::string()) != kBundleFormat) throw FormatError("not a stacked model bundle");
    if (manifest.at("version").get<int>() != kBundleVersion) throw FormatError("unsupported bundle version");
    model.config_hash = manifest.at("config_hash").get<std::string>();
    model.vocabulary = TagVocabulary::from_json(manifest.at("vocabulary"));
    const json& folds = manifest.at("folds");
    model.folds.k = folds.at("k").get<std::size_t>();
    model.folds.seed = folds.at("seed").get<std::uint64_t>();
    model.folds.fold_of = folds.at("fold_of").get<std::vector<std::size_t>>();
    for (const json& entry : manifest.at("blocks")) {
      BlockSpec spec{entry.at("modality").get<std::string>(), LearnerSpec::from_json(entry.at("learner"))};
      std::vector<AnyModel> models;
      for (const json& file : entry.at("fold_models")) {
        models.push_back(load_model(dir / file.get<std::string>()).model);
      }
      if (models.size() != model.folds.k) throw CorruptionError("block '" + spec.name() + "' has the wrong fold model count");
      model.blocks.push_back(std::move(spec));
      model.fold_models.push_back(std::move(models));
    }
    ModelFile meta = load_model(dir / manifest.at("meta_model").get<std::string>());
    if (!std::holds_alternative<MlpModel>(meta.model)) throw FormatError("meta model must be an MLP");
    model.meta = std::get<MlpModel>(std::move(meta.model));

    const auto mean = manifest.at("extra_normalizer").at("mean").get<std::vector<double>>();
    const auto scale = manifest.at("extra_normalizer").at("scale").get<std::vector<double>>();
    if (mean.size() != scale.size()) throw CorruptionError("extra normalizer mean/scale sizes differ");
    model.extra_normalizer.mean = Eigen::Map<const RowVector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    model.extra_normalizer.scale = Eigen::Map<const RowVector>(scale.data(), static_cast<Eigen::Index>(scale.size()));

    for (const json& c : manifest.at("columns")) {
      model.columns.push_back({c.at(0).get<std::string>(), c.at(1).get<std::size_t>()});
    }
    for (const auto& [name, file] : manifest.at("text_vocabularies").items()) {
      model.text_vocabularies.emplace(
          name, NgramVocabulary::from_json(json::parse(read_file(dir / file.get<std::string>()))));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed stacked model manifest: ") + e.what());
  }
  if (model.meta.input_dim() != model.columns.size()) {
    throw CorruptionError("meta model input dimension does not match the column map");
  }
  return model;
}

}  // namespace mmstack
