#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmstack/dataset.hpp"
#include "mmstack/learners.hpp"
#include "mmstack/metrics.hpp"

namespace mmstack {

enum class FusionKind { kConcat, kSumPool, kMaxPool, kAttention };

FusionKind parse_fusion_kind(const std::string& name);
std::string to_string(FusionKind kind);

inline constexpr std::size_t kMaxProjectionDim = 256;

// Common projected width: min over modality widths, capped.
std::size_t default_projection_dim(const std::vector<std::size_t>& dims);

// Feature-level fusion followed by one MLP classifier, trained end to end.
// Inputs arrive as one row-major matrix whose column ranges are the
// modalities in `modalities` order, widths `dims`.
struct FusionModel {
  FusionKind kind = FusionKind::kConcat;
  std::vector<std::string> modalities;
  std::vector<std::size_t> dims;
  std::size_t projection_dim = 0;       // 0 for concat
  std::vector<DenseLayer> projections;  // p x d_m, empty for concat
  std::vector<DenseLayer> gates;        // attention only: V_m (p x p) and its bias
  Vector gate_vector;                   // attention only: u (p)
  MlpModel classifier;

  std::size_t input_width() const;
  std::size_t fused_width() const;
  void validate() const;

  static FusionModel init(FusionKind kind, const std::vector<std::string>& modalities,
                          const std::vector<std::size_t>& dims, std::size_t projection_dim,
                          const std::vector<std::size_t>& hidden, const std::vector<double>& dropout,
                          std::size_t num_tags, Rng& rng);
};

struct FusionCache {
  std::vector<Matrix> projected;  // per modality, n x p
  std::vector<Matrix> gate_hidden;  // attention: tanh(V z + c), n x p
  Matrix alpha;                   // attention: n x M
  std::vector<std::vector<std::size_t>> argmax;  // max_pool: winning modality per row and column
  Matrix fused;
  MlpCache classifier;
};

// Projection and fusion only: n x fused_width().
Matrix fuse(const FusionModel& model, const Matrix& x, FusionCache* cache = nullptr);

// Attention weights, n x M; every row sums to 1.
Matrix attention_weights(const FusionModel& model, const Matrix& x);

// Logits of the full model; classifier dropout applies when rng is given.
Matrix fusion_forward(const FusionModel& model, const Matrix& x, Rng* dropout_rng, FusionCache* cache);

struct FusionGradient {
  double loss = 0.0;
  std::vector<DenseLayer> projections;
  std::vector<DenseLayer> gates;
  Vector gate_vector;
  std::vector<DenseLayer> classifier;
};

std::vector<ParamBlock> parameter_blocks(FusionModel& model);
std::vector<ParamBlock> gradient_blocks(FusionGradient& g);

// Mean per-cell logistic loss plus l2 times the squared norm of every weight
// matrix (biases and u excluded).
FusionGradient fusion_loss_and_gradient(const FusionModel& model, const Matrix& x, const Matrix& y, double l2,
                                        Rng* dropout_rng = nullptr);

GradientReport fusion_finite_diff_check(const FusionModel& model, const Matrix& x, const Matrix& y, double eps,
                                        double l2 = 0.0);

Matrix fusion_predict_proba(const FusionModel& model, const Matrix& x);

struct FusionConfig {
  std::vector<std::size_t> hidden{512, 256};
  std::vector<double> dropout{0.3, 0.3};
  std::size_t projection_dim = 0;  // 0 selects default_projection_dim
  TrainConfig train;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static FusionConfig from_json(const nlohmann::json& j);
};

// Columns of the named modalities side by side, in the given order.
Matrix stack_modalities(const Dataset& data, const std::vector<std::string>& modalities);

FusionModel train_fusion(const Dataset& data, const std::vector<std::size_t>& rows,
                         const std::vector<std::string>& modalities, FusionKind kind, const FusionConfig& cfg,
                         std::uint64_t seed);

struct FusionResult {
  std::string name;
  Scores scores;
};

// Trains on split.train and evaluates on split.test.
FusionResult run_fusion_experiment(const Dataset& data, const std::vector<std::string>& modalities, FusionKind kind,
                                   const FusionConfig& cfg, const HoldoutSplit& split, const MetricConfig& metrics,
                                   std::uint64_t seed);

}  // namespace mmstack
