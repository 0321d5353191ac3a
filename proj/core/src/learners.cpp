#include "mmstack/learners.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>

#include <Eigen/SparseCore>

#include "mmstack/errors.hpp"
#include "mmstack/training_loop.hpp"

namespace mmstack {
namespace {

using nlohmann::json;

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Wide inputs that are mostly zero (tf-idf blocks) go through a sparse product.
bool mostly_zero(const Matrix& x) {
  if (x.cols() < 256 || x.size() == 0) return false;
  const auto nonzero = (x.array() != 0.0).count();
  return static_cast<double>(nonzero) < 0.1 * static_cast<double>(x.size());
}

// x * w^T
Matrix times_transpose(const Matrix& x, const Matrix& w) {
  if (!mostly_zero(x)) return x * w.transpose();
  const SparseRows s = x.sparseView();
  return s * w.transpose();
}

// d^T * x
Matrix transpose_times(const Matrix& d, const Matrix& x) {
  if (!mostly_zero(x)) return d.transpose() * x;
  const SparseRows s = x.sparseView();
  return (s.transpose() * d).transpose();
}

void add_l2(const Matrix& w, double l2, double& loss, Matrix& grad) {
  if (l2 == 0.0) return;
  loss += l2 * w.squaredNorm();
  grad += 2.0 * l2 * w;
}

// Clamps a probability into the open interval (0, 1).
double open_unit(double p) { return std::clamp(p, DBL_MIN, std::nextafter(1.0, 0.0)); }

// NaN logits come from weights that overflowed during training.
Matrix sigmoid_matrix(const Matrix& logits) {
  if (logits.hasNaN()) throw DivergenceError("model produced NaN logits; its weights overflowed", 0);
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.size(); ++i) out.data()[i] = open_unit(sigmoid(logits.data()[i]));
  return out;
}

void check_dims(std::size_t expected, const Matrix& x, const char* what) {
  if (static_cast<std::size_t>(x.cols()) != expected) {
    throw ValidationError(std::string(what) + ": feature dimension " + std::to_string(x.cols()) +
                          " does not match model input " + std::to_string(expected));
  }
}

void check_xy(const Matrix& x, const Matrix& y) {
  if (x.rows() == 0) throw ValidationError("training requires at least one sample");
  if (x.rows() != y.rows()) throw ValidationError("feature and target row counts differ");
  if (y.cols() == 0) throw ValidationError("targets have zero tags");
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
  if (name == "logistic") return LossKind::kLogistic;
  if (name == "squared_hinge" || name == "hinge") return LossKind::kSquaredHinge;
  throw ValidationError("unknown loss '" + name + "' (expected logistic or squared_hinge)");
}

std::string to_string(LossKind kind) { return kind == LossKind::kLogistic ? "logistic" : "squared_hinge"; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be > 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(l2_penalty >= 0.0)) throw ValidationError("l2_penalty must be >= 0");
  if (optimizer == OptimizerKind::kAdam) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
      throw ValidationError("adam parameters must satisfy 0 <= beta < 1, epsilon > 0");
    }
  }
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["learning_rate"] = learning_rate;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["l2_penalty"] = l2_penalty;
  j["seed"] = seed;
  j["optimizer"] = optimizer == OptimizerKind::kAdam ? "adam" : "sgd";
  if (optimizer == OptimizerKind::kAdam) {
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["epsilon"] = epsilon;
  }
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.l2_penalty = j.value("l2_penalty", c.l2_penalty);
    c.seed = j.value("seed", c.seed);
    if (j.contains("optimizer")) {
      const auto name = j.at("optimizer").get<std::string>();
      if (name == "adam") c.optimizer = OptimizerKind::kAdam;
      else if (name == "sgd") c.optimizer = OptimizerKind::kSgd;
      else throw ValidationError("unknown optimizer '" + name + "'");
    }
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

LinearModel LinearModel::zeros(std::size_t input_dim, std::size_t num_tags, LossKind loss) {
  LinearModel m;
  m.weights = Matrix::Zero(static_cast<Eigen::Index>(num_tags), static_cast<Eigen::Index>(input_dim));
  m.bias = Vector::Zero(static_cast<Eigen::Index>(num_tags));
  m.loss = loss;
  return m;
}

std::vector<std::size_t> MlpModel::hidden_sizes() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) out.push_back(layers[l].out());
  return out;
}

void MlpModel::validate() const {
  if (layers.empty()) throw ValidationError("MLP has no layers");
  if (dropout_rates.size() != layers.size() - 1) {
    throw ValidationError("MLP needs one dropout rate per hidden layer");
  }
  for (double p : dropout_rates) {
    if (!(p >= 0.0 && p < 1.0)) throw ValidationError("dropout rates must lie in [0, 1)");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (static_cast<std::size_t>(layers[l].bias.size()) != layers[l].out()) {
      throw ValidationError("MLP layer " + std::to_string(l) + " bias size mismatch");
    }
    if (l > 0 && layers[l].in() != layers[l - 1].out()) {
      throw ValidationError("MLP layer " + std::to_string(l) + " does not compose with its predecessor");
    }
  }
}

MlpModel MlpModel::glorot(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t num_tags,
                          std::vector<double> dropout_rates, Rng& rng) {
  if (input_dim == 0 || num_tags == 0) throw ValidationError("MLP input and output sizes must be positive");
  MlpModel m;
  std::vector<std::size_t> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(num_tags);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (sizes[l + 1] == 0) throw ValidationError("MLP hidden sizes must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(sizes[l] + sizes[l + 1]));
    DenseLayer layer{Matrix(static_cast<Eigen::Index>(sizes[l + 1]), static_cast<Eigen::Index>(sizes[l])),
                     Vector::Zero(static_cast<Eigen::Index>(sizes[l + 1]))};
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = rng.uniform(-limit, limit);
    m.layers.push_back(std::move(layer));
  }
  m.dropout_rates = std::move(dropout_rates);
  m.validate();
  return m;
}

std::vector<ParamBlock> parameter_blocks(LinearModel& model) {
  return {{"weights", {model.weights.data(), static_cast<std::size_t>(model.weights.size())}},
          {"bias", {model.bias.data(), static_cast<std::size_t>(model.bias.size())}}};
}

std::vector<ParamBlock> parameter_blocks(MlpModel& model) {
  std::vector<ParamBlock> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    DenseLayer& layer = model.layers[l];
    out.push_back({"W" + std::to_string(l), {layer.weights.data(), static_cast<std::size_t>(layer.weights.size())}});
    out.push_back({"b" + std::to_string(l), {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
  }
  return out;
}

std::vector<ParamBlock> gradient_blocks(LinearGradient& g) {
  return {{"weights", {g.weights.data(), static_cast<std::size_t>(g.weights.size())}},
          {"bias", {g.bias.data(), static_cast<std::size_t>(g.bias.size())}}};
}

std::vector<ParamBlock> gradient_blocks(MlpGradient& g) {
  std::vector<ParamBlock> out;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    DenseLayer& layer = g.layers[l];
    out.push_back({"W" + std::to_string(l), {layer.weights.data(), static_cast<std::size_t>(layer.weights.size())}});
    out.push_back({"b" + std::to_string(l), {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
  }
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double output_loss(const Matrix& logits, const Matrix& targets, LossKind kind, Matrix* dlogits) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ValidationError("logit and target shapes differ");
  }
  const double scale = 1.0 / static_cast<double>(logits.size());
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i];
    const double y = targets.data()[i];
    double grad = 0.0;
    if (kind == LossKind::kLogistic) {
      total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
      grad = sigmoid(z) - y;
    } else {
      const double sign = y > 0.5 ? 1.0 : -1.0;
      const double slack = std::max(0.0, 1.0 - sign * z);
      total += slack * slack;
      grad = -2.0 * sign * slack;
    }
    if (dlogits) dlogits->data()[i] = grad * scale;
  }
  return total * scale;
}

Matrix apply_inverted_dropout(Matrix& activations, double p, Rng& rng) {
  Matrix mask(activations.rows(), activations.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? 0.0 : keep_scale;
  }
  activations.array() *= mask.array();
  return mask;
}

Matrix mlp_forward(const MlpModel& model, const Matrix& x, Rng* dropout_rng, MlpCache* cache) {
  check_dims(model.input_dim(), x, "mlp_forward");
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
    cache->masks.clear();
  }
  Matrix a = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const DenseLayer& layer = model.layers[l];
    Matrix z = l == 0 ? times_transpose(a, layer.weights) : Matrix(a * layer.weights.transpose());
    z.rowwise() += layer.bias.transpose();
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->preacts.push_back(z);
    }
    if (l + 1 == model.layers.size()) return z;
    a = z.cwiseMax(0.0);
    Matrix mask;
    if (dropout_rng && model.dropout_rates[l] > 0.0) {
      mask = apply_inverted_dropout(a, model.dropout_rates[l], *dropout_rng);
    }
    if (cache) cache->masks.push_back(std::move(mask));
  }
  return a;  // unreachable: layers is non-empty
}

Matrix mlp_backward(const MlpModel& model, const MlpCache& cache, const Matrix& dlogits,
                    std::vector<DenseLayer>& grads, bool input_gradient) {
  grads.resize(model.layers.size());
  Matrix delta = dlogits;  // d(loss)/d(preact) of the current layer
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const DenseLayer& layer = model.layers[l];
    grads[l].weights = l == 0 ? transpose_times(delta, cache.inputs[l]) : Matrix(delta.transpose() * cache.inputs[l]);
    grads[l].bias = delta.colwise().sum().transpose();
    if (l == 0 && !input_gradient) return Matrix();
    Matrix dinput = delta * layer.weights;
    if (l == 0) return dinput;
    const Matrix& mask = cache.masks[l - 1];
    if (mask.size() > 0) dinput.array() *= mask.array();
    dinput.array() *= (cache.preacts[l - 1].array() > 0.0).cast<double>();
    delta = std::move(dinput);
  }
  return delta;
}

LinearGradient linear_loss_and_gradient(const LinearModel& model, const Matrix& x, const Matrix& y, double l2) {
  check_dims(model.input_dim(), x, "linear model");
  Matrix logits = x * model.weights.transpose();
  logits.rowwise() += model.bias.transpose();
  Matrix dlogits;
  LinearGradient g;
  g.loss = output_loss(logits, y, model.loss, &dlogits);
  g.weights = dlogits.transpose() * x;
  g.bias = dlogits.colwise().sum().transpose();
  add_l2(model.weights, l2, g.loss, g.weights);
  return g;
}

MlpGradient mlp_loss_and_gradient(const MlpModel& model, const Matrix& x, const Matrix& y, double l2,
                                  Rng* dropout_rng) {
  MlpCache cache;
  const Matrix logits = mlp_forward(model, x, dropout_rng, &cache);
  Matrix dlogits;
  MlpGradient g;
  g.loss = output_loss(logits, y, LossKind::kLogistic, &dlogits);
  mlp_backward(model, cache, dlogits, g.layers, false);
  for (std::size_t l = 0; l < model.layers.size(); ++l) add_l2(model.layers[l].weights, l2, g.loss, g.layers[l].weights);
  return g;
}

void Optimizer::step(std::span<ParamBlock> params, std::span<const ParamBlock> grads) {
  if (params.size() != grads.size()) throw ValidationError("optimizer: parameter/gradient block count differs");
  ++step_;
  if (cfg_.optimizer == OptimizerKind::kSgd) {
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (std::size_t i = 0; i < params[b].values.size(); ++i) {
        params[b].values[i] -= cfg_.learning_rate * grads[b].values[i];
      }
    }
    return;
  }
  if (m_.empty()) {
    for (const ParamBlock& p : params) {
      m_.emplace_back(p.values.size(), 0.0);
      v_.emplace_back(p.values.size(), 0.0);
    }
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    std::vector<double>& m = m_[b];
    std::vector<double>& v = v_[b];
    for (std::size_t i = 0; i < params[b].values.size(); ++i) {
      const double g = grads[b].values[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      params[b].values[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
    }
  }
}

LinearModel train_linear(const Matrix& x, const Matrix& y, LossKind loss, const TrainConfig& cfg,
                         TrainTrace* trace) {
  cfg.validate();
  check_xy(x, y);
  LinearModel model = LinearModel::zeros(static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(y.cols()), loss);
  model.seed = cfg.seed;
  Rng rng(cfg.seed);
  detail::run_training(
      model, x, y, cfg, rng,
      [&](const LinearModel& m, const Matrix& xb, const Matrix& yb) {
        return linear_loss_and_gradient(m, xb, yb, cfg.l2_penalty);
      },
      [&](const LinearModel& m) { return linear_loss_and_gradient(m, x, y, cfg.l2_penalty).loss; }, trace);
  round_to_float(model);
  return model;
}

MlpModel train_mlp(const Matrix& x, const Matrix& y, const std::vector<std::size_t>& hidden,
                   const std::vector<double>& dropout_rates, const TrainConfig& cfg, TrainTrace* trace) {
  cfg.validate();
  check_xy(x, y);
  if (dropout_rates.size() != hidden.size()) {
    throw ValidationError("train_mlp: need one dropout rate per hidden layer");
  }
  Rng rng(cfg.seed);
  MlpModel model = MlpModel::glorot(static_cast<std::size_t>(x.cols()), hidden, static_cast<std::size_t>(y.cols()),
                                    dropout_rates, rng);
  model.seed = cfg.seed;
  model.mode = Mode::kTrain;
  detail::run_training(
      model, x, y, cfg, rng,
      [&](const MlpModel& m, const Matrix& xb, const Matrix& yb) {
        return mlp_loss_and_gradient(m, xb, yb, cfg.l2_penalty, &rng);
      },
      [&](const MlpModel& m) { return mlp_loss_and_gradient(m, x, y, cfg.l2_penalty).loss; }, trace);
  model.mode = Mode::kEval;
  round_to_float(model);
  return model;
}

Matrix probabilities_from_logits(const Matrix& logits) { return sigmoid_matrix(logits); }

Matrix predict_proba(const LinearModel& model, const Matrix& x) {
  check_dims(model.input_dim(), x, "predict_proba");
  Matrix logits = x * model.weights.transpose();
  logits.rowwise() += model.bias.transpose();
  return sigmoid_matrix(logits);
}

Matrix predict_proba(const MlpModel& model, const Matrix& x) {
  return sigmoid_matrix(mlp_forward(model, x, nullptr, nullptr));
}

Matrix predict_proba(const AnyModel& model, const Matrix& x) {
  return std::visit([&](const auto& m) { return predict_proba(m, x); }, model);
}

std::size_t input_dim(const AnyModel& model) {
  return std::visit([](const auto& m) { return m.input_dim(); }, model);
}

GradientReport compare_gradients(std::span<ParamBlock> params, std::span<const ParamBlock> analytic,
                                 const std::function<double()>& loss, double eps) {
  GradientReport report;
  for (std::size_t b = 0; b < params.size(); ++b) {
    double block_max = 0.0;
    for (std::size_t i = 0; i < params[b].values.size(); ++i) {
      double& theta = params[b].values[i];
      const double saved = theta;
      theta = saved + eps;
      const double up = loss();
      theta = saved - eps;
      const double down = loss();
      theta = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[b].values[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      block_max = std::max(block_max, std::abs(a - numeric) / denom);
      report.max_abs_analytic = std::max(report.max_abs_analytic, std::abs(a));
      report.max_abs_numeric = std::max(report.max_abs_numeric, std::abs(numeric));
      ++report.parameters_checked;
    }
    report.blocks.emplace_back(params[b].name, block_max);
    report.max_relative_error = std::max(report.max_relative_error, block_max);
  }
  return report;
}

GradientReport finite_diff_check(const LinearModel& model, const Matrix& x, const Matrix& y, double eps, double l2) {
  LinearModel probe = model;
  LinearGradient g = linear_loss_and_gradient(probe, x, y, l2);
  std::vector<ParamBlock> params = parameter_blocks(probe);
  std::vector<ParamBlock> grads = gradient_blocks(g);
  return compare_gradients(params, grads, [&] { return linear_loss_and_gradient(probe, x, y, l2).loss; }, eps);
}

GradientReport finite_diff_check(const MlpModel& model, const Matrix& x, const Matrix& y, double eps, double l2) {
  MlpModel probe = model;
  MlpGradient g = mlp_loss_and_gradient(probe, x, y, l2, nullptr);
  std::vector<ParamBlock> params = parameter_blocks(probe);
  std::vector<ParamBlock> grads = gradient_blocks(g);
  return compare_gradients(params, grads, [&] { return mlp_loss_and_gradient(probe, x, y, l2, nullptr).loss; }, eps);
}

void round_to_float(LinearModel& model) {
  for (ParamBlock& b : parameter_blocks(model)) {
    for (double& v : b.values) v = static_cast<double>(static_cast<float>(v));
  }
}

void round_to_float(MlpModel& model) {
  for (ParamBlock& b : parameter_blocks(model)) {
    for (double& v : b.values) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace mmstack
