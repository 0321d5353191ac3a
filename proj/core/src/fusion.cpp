#include "mmstack/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "mmstack/errors.hpp"
#include "mmstack/random.hpp"
#include "mmstack/training_loop.hpp"

namespace mmstack {
namespace {

DenseLayer glorot_layer(std::size_t out, std::size_t in, Rng& rng) {
  DenseLayer layer;
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  layer.weights.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = rng.uniform(-limit, limit);
  layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
  return layer;
}

Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix z = x * layer.weights.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

std::vector<Eigen::Index> column_offsets(const std::vector<std::size_t>& dims) {
  std::vector<Eigen::Index> offsets{0};
  for (std::size_t d : dims) offsets.push_back(offsets.back() + static_cast<Eigen::Index>(d));
  return offsets;
}

void push_layer(std::vector<ParamBlock>& out, const std::string& w, const std::string& b, DenseLayer& layer) {
  out.push_back({w, {layer.weights.data(), static_cast<std::size_t>(layer.weights.size())}});
  out.push_back({b, {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
}

}  // namespace

FusionKind parse_fusion_kind(const std::string& name) {
  if (name == "concat") return FusionKind::kConcat;
  if (name == "sum_pool") return FusionKind::kSumPool;
  if (name == "max_pool") return FusionKind::kMaxPool;
  if (name == "attention") return FusionKind::kAttention;
  throw ValidationError("unknown fusion strategy '" + name + "' (expected concat, sum_pool, max_pool or attention)");
}

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::kConcat: return "concat";
    case FusionKind::kSumPool: return "sum_pool";
    case FusionKind::kMaxPool: return "max_pool";
    case FusionKind::kAttention: return "attention";
  }
  return "unknown";
}

std::size_t default_projection_dim(const std::vector<std::size_t>& dims) {
  if (dims.empty()) throw ValidationError("fusion needs at least one modality");
  return std::min(*std::min_element(dims.begin(), dims.end()), kMaxProjectionDim);
}

std::size_t FusionModel::input_width() const {
  std::size_t w = 0;
  for (std::size_t d : dims) w += d;
  return w;
}

std::size_t FusionModel::fused_width() const { return kind == FusionKind::kConcat ? input_width() : projection_dim; }

void FusionModel::validate() const {
  if (dims.empty() || dims.size() != modalities.size()) throw ValidationError("fusion model: modality list mismatch");
  if (kind != FusionKind::kConcat) {
    if (projection_dim == 0 || projections.size() != dims.size()) {
      throw ValidationError("fusion model: one projection per modality required");
    }
    for (std::size_t m = 0; m < dims.size(); ++m) {
      if (projections[m].in() != dims[m] || projections[m].out() != projection_dim) {
        throw ValidationError("fusion model: projection shape mismatch for '" + modalities[m] + "'");
      }
    }
  }
  if (kind == FusionKind::kAttention) {
    if (gates.size() != dims.size() || static_cast<std::size_t>(gate_vector.size()) != projection_dim) {
      throw ValidationError("fusion model: attention gates incomplete");
    }
  }
  classifier.validate();
  if (classifier.input_dim() != fused_width()) throw ValidationError("fusion model: classifier width mismatch");
}

FusionModel FusionModel::init(FusionKind kind, const std::vector<std::string>& modalities,
                              const std::vector<std::size_t>& dims, std::size_t projection_dim,
                              const std::vector<std::size_t>& hidden, const std::vector<double>& dropout,
                              std::size_t num_tags, Rng& rng) {
  FusionModel model;
  model.kind = kind;
  model.modalities = modalities;
  model.dims = dims;
  if (kind != FusionKind::kConcat) {
    model.projection_dim = projection_dim == 0 ? default_projection_dim(dims) : projection_dim;
    for (std::size_t d : dims) model.projections.push_back(glorot_layer(model.projection_dim, d, rng));
  }
  if (kind == FusionKind::kAttention) {
    const std::size_t p = model.projection_dim;
    for (std::size_t m = 0; m < dims.size(); ++m) model.gates.push_back(glorot_layer(p, p, rng));
    const double limit = std::sqrt(6.0 / static_cast<double>(p + 1));
    model.gate_vector.resize(static_cast<Eigen::Index>(p));
    for (Eigen::Index i = 0; i < model.gate_vector.size(); ++i) model.gate_vector(i) = rng.uniform(-limit, limit);
  }
  model.classifier = MlpModel::glorot(model.fused_width(), hidden, num_tags, dropout, rng);
  model.validate();
  return model;
}

Matrix fuse(const FusionModel& model, const Matrix& x, FusionCache* cache) {
  if (static_cast<std::size_t>(x.cols()) != model.input_width()) {
    throw ValidationError("fuse: input width " + std::to_string(x.cols()) + " does not match modality widths " +
                          std::to_string(model.input_width()));
  }
  FusionCache local;
  FusionCache& c = cache ? *cache : local;
  c = FusionCache{};
  if (model.kind == FusionKind::kConcat) {
    c.fused = x;
    return c.fused;
  }

  const std::vector<Eigen::Index> offsets = column_offsets(model.dims);
  const std::size_t count = model.dims.size();
  for (std::size_t m = 0; m < count; ++m) {
    c.projected.push_back(affine(x.middleCols(offsets[m], static_cast<Eigen::Index>(model.dims[m])),
                                 model.projections[m]));
  }
  const Eigen::Index n = x.rows();
  const auto p = static_cast<Eigen::Index>(model.projection_dim);

  switch (model.kind) {
    case FusionKind::kSumPool: {
      c.fused = Matrix::Zero(n, p);
      for (const Matrix& z : c.projected) c.fused += z;
      break;
    }
    case FusionKind::kMaxPool: {
      c.fused = c.projected.front();
      c.argmax.assign(static_cast<std::size_t>(n), std::vector<std::size_t>(static_cast<std::size_t>(p), 0));
      for (std::size_t m = 1; m < count; ++m) {
        for (Eigen::Index i = 0; i < n; ++i) {
          for (Eigen::Index j = 0; j < p; ++j) {
            if (c.projected[m](i, j) > c.fused(i, j)) {
              c.fused(i, j) = c.projected[m](i, j);
              c.argmax[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m;
            }
          }
        }
      }
      break;
    }
    case FusionKind::kAttention: {
      Matrix scores(n, static_cast<Eigen::Index>(count));
      for (std::size_t m = 0; m < count; ++m) {
        Matrix h = affine(c.projected[m], model.gates[m]).array().tanh().matrix();
        scores.col(static_cast<Eigen::Index>(m)) = h * model.gate_vector;
        c.gate_hidden.push_back(std::move(h));
      }
      c.alpha.resize(n, static_cast<Eigen::Index>(count));
      for (Eigen::Index i = 0; i < n; ++i) {
        const double top = scores.row(i).maxCoeff();
        const RowVector e = (scores.row(i).array() - top).exp().matrix();
        c.alpha.row(i) = e / e.sum();
      }
      c.fused = Matrix::Zero(n, p);
      for (std::size_t m = 0; m < count; ++m) {
        c.fused.array() += c.projected[m].array().colwise() * c.alpha.col(static_cast<Eigen::Index>(m)).array();
      }
      break;
    }
    case FusionKind::kConcat: break;
  }
  return c.fused;
}

Matrix attention_weights(const FusionModel& model, const Matrix& x) {
  if (model.kind != FusionKind::kAttention) throw ValidationError("attention_weights: model is not attention fusion");
  FusionCache cache;
  fuse(model, x, &cache);
  return cache.alpha;
}

Matrix fusion_forward(const FusionModel& model, const Matrix& x, Rng* dropout_rng, FusionCache* cache) {
  FusionCache local;
  FusionCache& c = cache ? *cache : local;
  fuse(model, x, &c);
  return mlp_forward(model.classifier, c.fused, dropout_rng, &c.classifier);
}

std::vector<ParamBlock> parameter_blocks(FusionModel& model) {
  std::vector<ParamBlock> out;
  for (std::size_t m = 0; m < model.projections.size(); ++m) {
    push_layer(out, "P" + std::to_string(m), "p" + std::to_string(m), model.projections[m]);
  }
  for (std::size_t m = 0; m < model.gates.size(); ++m) {
    push_layer(out, "V" + std::to_string(m), "c" + std::to_string(m), model.gates[m]);
  }
  if (model.gate_vector.size() > 0) {
    out.push_back({"u", {model.gate_vector.data(), static_cast<std::size_t>(model.gate_vector.size())}});
  }
  for (ParamBlock& b : parameter_blocks(model.classifier)) out.push_back({"mlp." + b.name, b.values});
  return out;
}

std::vector<ParamBlock> gradient_blocks(FusionGradient& g) {
  std::vector<ParamBlock> out;
  for (std::size_t m = 0; m < g.projections.size(); ++m) {
    push_layer(out, "P" + std::to_string(m), "p" + std::to_string(m), g.projections[m]);
  }
  for (std::size_t m = 0; m < g.gates.size(); ++m) {
    push_layer(out, "V" + std::to_string(m), "c" + std::to_string(m), g.gates[m]);
  }
  if (g.gate_vector.size() > 0) out.push_back({"u", {g.gate_vector.data(), static_cast<std::size_t>(g.gate_vector.size())}});
  for (std::size_t l = 0; l < g.classifier.size(); ++l) {
    push_layer(out, "mlp.W" + std::to_string(l), "mlp.b" + std::to_string(l), g.classifier[l]);
  }
  return out;
}

FusionGradient fusion_loss_and_gradient(const FusionModel& model, const Matrix& x, const Matrix& y, double l2,
                                        Rng* dropout_rng) {
  FusionCache cache;
  const Matrix logits = fusion_forward(model, x, dropout_rng, &cache);
  FusionGradient g;
  Matrix dlogits;
  g.loss = output_loss(logits, y, LossKind::kLogistic, &dlogits);
  const bool projected = model.kind != FusionKind::kConcat;
  const Matrix dfused = mlp_backward(model.classifier, cache.classifier, dlogits, g.classifier, projected);

  auto add_l2 = [&](const Matrix& w, Matrix& grad) {
    if (l2 == 0.0) return;
    g.loss += l2 * w.squaredNorm();
    grad += 2.0 * l2 * w;
  };
  for (std::size_t l = 0; l < model.classifier.layers.size(); ++l) {
    add_l2(model.classifier.layers[l].weights, g.classifier[l].weights);
  }
  if (model.kind == FusionKind::kConcat) return g;

  const std::size_t count = model.dims.size();
  const Eigen::Index n = x.rows();
  const auto p = static_cast<Eigen::Index>(model.projection_dim);
  std::vector<Matrix> dproj(count);

  switch (model.kind) {
    case FusionKind::kSumPool:
      for (std::size_t m = 0; m < count; ++m) dproj[m] = dfused;
      break;
    case FusionKind::kMaxPool:
      for (std::size_t m = 0; m < count; ++m) dproj[m] = Matrix::Zero(n, p);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
          dproj[cache.argmax[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]](i, j) = dfused(i, j);
        }
      }
      break;
    case FusionKind::kAttention: {
      // fused = sum_m alpha_m z_m, alpha = softmax(s), s_m = u . tanh(V_m z_m + c_m)
      Matrix dalpha(n, static_cast<Eigen::Index>(count));
      for (std::size_t m = 0; m < count; ++m) {
        dalpha.col(static_cast<Eigen::Index>(m)) = (dfused.array() * cache.projected[m].array()).rowwise().sum();
      }
      const Vector weighted = (dalpha.array() * cache.alpha.array()).rowwise().sum();
      const Matrix dscore = cache.alpha.array() * (dalpha.colwise() - weighted).array();
      g.gates.resize(count);
      g.gate_vector = Vector::Zero(p);
      for (std::size_t m = 0; m < count; ++m) {
        const auto col = static_cast<Eigen::Index>(m);
        const Matrix& h = cache.gate_hidden[m];
        g.gate_vector += h.transpose() * dscore.col(col);
        Matrix dpre = dscore.col(col) * model.gate_vector.transpose();
        dpre.array() *= 1.0 - h.array().square();
        g.gates[m].weights = dpre.transpose() * cache.projected[m];
        g.gates[m].bias = dpre.colwise().sum().transpose();
        add_l2(model.gates[m].weights, g.gates[m].weights);
        dproj[m] = dfused.array().colwise() * cache.alpha.col(col).array();
        dproj[m] += dpre * model.gates[m].weights;
      }
      break;
    }
    case FusionKind::kConcat: break;
  }

  const std::vector<Eigen::Index> offsets = column_offsets(model.dims);
  g.projections.resize(count);
  for (std::size_t m = 0; m < count; ++m) {
    g.projections[m].weights = dproj[m].transpose() * x.middleCols(offsets[m], static_cast<Eigen::Index>(model.dims[m]));
    g.projections[m].bias = dproj[m].colwise().sum().transpose();
    add_l2(model.projections[m].weights, g.projections[m].weights);
  }
  return g;
}

GradientReport fusion_finite_diff_check(const FusionModel& model, const Matrix& x, const Matrix& y, double eps,
                                        double l2) {
  FusionModel probe = model;
  FusionGradient g = fusion_loss_and_gradient(probe, x, y, l2, nullptr);
  std::vector<ParamBlock> params = parameter_blocks(probe);
  std::vector<ParamBlock> grads = gradient_blocks(g);
  return compare_gradients(params, grads, [&] { return fusion_loss_and_gradient(probe, x, y, l2, nullptr).loss; },
                           eps);
}

Matrix fusion_predict_proba(const FusionModel& model, const Matrix& x) {
  return probabilities_from_logits(fusion_forward(model, x, nullptr, nullptr));
}

void FusionConfig::validate() const {
  train.validate();
  if (hidden.size() != dropout.size()) throw ValidationError("fusion: one dropout rate per hidden layer required");
  for (double r : dropout) {
    if (!(r >= 0.0 && r < 1.0)) throw ValidationError("fusion: dropout rates must lie in [0, 1)");
  }
}

nlohmann::ordered_json FusionConfig::to_json() const {
  nlohmann::ordered_json j;
  j["hidden"] = hidden;
  j["dropout"] = dropout;
  j["projection_dim"] = projection_dim;
  j["train"] = train.to_json();
  return j;
}

FusionConfig FusionConfig::from_json(const nlohmann::json& j) {
  FusionConfig c;
  try {
    c.hidden = j.value("hidden", c.hidden);
    c.dropout = j.value("dropout", c.dropout);
    c.projection_dim = j.value("projection_dim", c.projection_dim);
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed fusion config: ") + e.what());
  }
  c.validate();
  return c;
}

Matrix stack_modalities(const Dataset& data, const std::vector<std::string>& modalities) {
  if (modalities.empty()) throw ValidationError("fusion needs at least one modality");
  Eigen::Index width = 0;
  for (const std::string& name : modalities) {
    if (!data.has_modality(name)) throw ValidationError("input is missing modality '" + name + "'");
    const Matrix& v = data.modality(name).values;
    if (static_cast<std::size_t>(v.rows()) != data.size()) throw AlignmentError("modality '" + name + "' is misaligned");
    width += v.cols();
  }
  Matrix out(static_cast<Eigen::Index>(data.size()), width);
  Eigen::Index col = 0;
  for (const std::string& name : modalities) {
    const Matrix& v = data.modality(name).values;
    out.middleCols(col, v.cols()) = v;
    col += v.cols();
  }
  return out;
}

FusionModel train_fusion(const Dataset& data, const std::vector<std::size_t>& rows,
                         const std::vector<std::string>& modalities, FusionKind kind, const FusionConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  std::vector<std::size_t> labeled;
  for (std::size_t r : rows) {
    if (!data.targets.at(r).empty()) labeled.push_back(r);
  }
  if (labeled.empty()) throw ValidationError("fusion training split has no labeled samples");
  std::vector<std::size_t> dims;
  for (const std::string& name : modalities) {
    if (!data.has_modality(name)) throw ValidationError("input is missing modality '" + name + "'");
    dims.push_back(data.modality(name).dim());
  }
  const Matrix x = gather_rows(stack_modalities(data, modalities), labeled);
  const Matrix y = multi_hot(data.targets, labeled, data.num_tags());

  TrainConfig train = cfg.train;
  train.seed = seed;
  Rng rng(seed);
  FusionModel model =
      FusionModel::init(kind, modalities, dims, cfg.projection_dim, cfg.hidden, cfg.dropout, data.num_tags(), rng);
  detail::run_training(
      model, x, y, train, rng,
      [&](const FusionModel& m, const Matrix& xb, const Matrix& yb) {
        return fusion_loss_and_gradient(m, xb, yb, train.l2_penalty, &rng);
      },
      [&](const FusionModel& m) { return fusion_loss_and_gradient(m, x, y, train.l2_penalty).loss; }, nullptr);
  return model;
}

FusionResult run_fusion_experiment(const Dataset& data, const std::vector<std::string>& modalities, FusionKind kind,
                                   const FusionConfig& cfg, const HoldoutSplit& split, const MetricConfig& metrics,
                                   std::uint64_t seed) {
  const FusionModel model = train_fusion(data, split.train, modalities, kind, cfg, seed);
  const Matrix x = gather_rows(stack_modalities(data, modalities), split.test);
  const Matrix probs = fusion_predict_proba(model, x);
  std::vector<MultiLabelTarget> targets;
  for (std::size_t r : split.test) targets.push_back(data.targets[r]);
  FusionResult result;
  result.name = to_string(kind);
  result.scores = evaluate(top_k_predictions(probs, metrics.gap.top_k), targets, metrics, data.vocabulary);
  return result;
}

}  // namespace mmstack
