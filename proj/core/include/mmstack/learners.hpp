#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmstack/random.hpp"
#include "mmstack/types.hpp"

namespace mmstack {

enum class LossKind { kLogistic, kSquaredHinge };
enum class OptimizerKind { kSgd, kAdam };
enum class Mode { kTrain, kEval };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 30;
  std::size_t batch_size = 64;
  double l2_penalty = 0.0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& defaults);
};

// One-vs-rest linear model: score = W x + b, one row of W per tag.
struct LinearModel {
  Matrix weights;  // T x d
  Vector bias;     // T
  LossKind loss = LossKind::kLogistic;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t num_tags() const { return static_cast<std::size_t>(weights.rows()); }

  static LinearModel zeros(std::size_t input_dim, std::size_t num_tags, LossKind loss);
};

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out

  std::size_t in() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(weights.rows()); }
};

// ReLU hidden layers with inverted dropout, sigmoid outputs (one per tag).
struct MlpModel {
  std::vector<DenseLayer> layers;
  std::vector<double> dropout_rates;  // one per hidden layer
  Mode mode = Mode::kEval;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return layers.front().in(); }
  std::size_t num_tags() const { return layers.back().out(); }
  std::vector<std::size_t> hidden_sizes() const;

  void validate() const;

  // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static MlpModel glorot(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t num_tags, std::vector<double> dropout_rates, Rng& rng);
};

// Mutable view over a contiguous parameter block.
struct ParamBlock {
  std::string name;
  std::span<double> values;
};

std::vector<ParamBlock> parameter_blocks(LinearModel& model);
std::vector<ParamBlock> parameter_blocks(MlpModel& model);

double sigmoid(double z);

// Elementwise sigmoid clamped into the open interval (0, 1).
Matrix probabilities_from_logits(const Matrix& logits);

// Mean per-cell loss over an n x T logit matrix; fills d(loss)/d(logits)
// when `dlogits` is given.
double output_loss(const Matrix& logits, const Matrix& targets, LossKind kind, Matrix* dlogits);

// Inverted dropout in place: each unit is zeroed with probability p and the
// survivors are scaled by 1 / (1 - p). Returns the scaled mask.
Matrix apply_inverted_dropout(Matrix& activations, double p, Rng& rng);

struct MlpCache {
  std::vector<Matrix> inputs;       // input of each layer
  std::vector<Matrix> preacts;      // pre-activation of each layer
  std::vector<Matrix> masks;        // scaled dropout masks per hidden layer (empty = none)
};

// Forward pass returning output logits. Dropout is applied only when
// `dropout_rng` is non-null.
Matrix mlp_forward(const MlpModel& model, const Matrix& x, Rng* dropout_rng, MlpCache* cache);

// Backward pass from d(loss)/d(logits). Writes parameter gradients (same
// shapes as model.layers) and returns d(loss)/d(input), or an empty matrix
// when `input_gradient` is false.
Matrix mlp_backward(const MlpModel& model, const MlpCache& cache, const Matrix& dlogits,
                    std::vector<DenseLayer>& grads, bool input_gradient = true);

struct LinearGradient {
  double loss = 0.0;
  Matrix weights;
  Vector bias;
};

struct MlpGradient {
  double loss = 0.0;
  std::vector<DenseLayer> layers;
};

// Loss = mean per-cell loss + l2 * sum of squared weights (biases excluded).
LinearGradient linear_loss_and_gradient(const LinearModel& model, const Matrix& x, const Matrix& y, double l2);
MlpGradient mlp_loss_and_gradient(const MlpModel& model, const Matrix& x, const Matrix& y, double l2,
                                  Rng* dropout_rng = nullptr);

std::vector<ParamBlock> gradient_blocks(LinearGradient& g);
std::vector<ParamBlock> gradient_blocks(MlpGradient& g);

// Adam or plain SGD over a fixed list of parameter blocks.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(std::span<ParamBlock> params, std::span<const ParamBlock> grads);

 private:
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long step_ = 0;
};

// Per-epoch full-data training loss, recorded when requested.
struct TrainTrace {
  std::vector<double> epoch_loss;
};

LinearModel train_linear(const Matrix& x, const Matrix& y, LossKind loss, const TrainConfig& cfg,
                         TrainTrace* trace = nullptr);

MlpModel train_mlp(const Matrix& x, const Matrix& y, const std::vector<std::size_t>& hidden,
                   const std::vector<double>& dropout_rates, const TrainConfig& cfg,
                   TrainTrace* trace = nullptr);

// n x T probabilities in (0, 1); dropout is never applied.
Matrix predict_proba(const LinearModel& model, const Matrix& x);
Matrix predict_proba(const MlpModel& model, const Matrix& x);

struct GradientReport {
  double max_relative_error = 0.0;
  std::vector<std::pair<std::string, double>> blocks;  // per-block max relative error
  std::size_t parameters_checked = 0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
};

// Central differences (L(theta + eps) - L(theta - eps)) / (2 eps) for every
// parameter; relative error uses max(|a|, |n|, 1e-12) as denominator.
// Dropout is disabled for the check.
GradientReport finite_diff_check(const LinearModel& model, const Matrix& x, const Matrix& y, double eps,
                                 double l2 = 0.0);
GradientReport finite_diff_check(const MlpModel& model, const Matrix& x, const Matrix& y, double eps,
                                 double l2 = 0.0);

// Shared by every differentiable model in the project.
GradientReport compare_gradients(std::span<ParamBlock> params, std::span<const ParamBlock> analytic,
                                 const std::function<double()>& loss, double eps);

// Rounds every parameter to float32 precision, the precision of model files.
void round_to_float(LinearModel& model);
void round_to_float(MlpModel& model);

using AnyModel = std::variant<LinearModel, MlpModel>;

Matrix predict_proba(const AnyModel& model, const Matrix& x);
std::size_t input_dim(const AnyModel& model);

}  // namespace mmstack
