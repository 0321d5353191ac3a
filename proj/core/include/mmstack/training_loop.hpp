#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mmstack/errors.hpp"
#include "mmstack/learners.hpp"
#include "mmstack/random.hpp"
#include "mmstack/types.hpp"

namespace mmstack::detail {

inline void require_finite_model(std::span<const ParamBlock> params, int epoch) {
  for (const ParamBlock& p : params) {
    for (double v : p.values) {
      if (!std::isfinite(v)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                  " (non-finite parameter in " + p.name + ")",
                              epoch);
      }
    }
  }
}

// Mini-batch loop shared by every trainer. `grad_fn(model, xb, yb)` returns a
// gradient object with a `loss` member and gradient_blocks() support;
// `full_loss(model)` is only evaluated when a trace is requested.
template <typename Model, typename GradFn, typename LossFn>
void run_training(Model& model, const Matrix& x, const Matrix& y, const TrainConfig& cfg, Rng& rng,
                  GradFn&& grad_fn, LossFn&& full_loss, TrainTrace* trace) {
  const std::size_t n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Optimizer opt(cfg);
  std::vector<ParamBlock> params = parameter_blocks(model);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      auto grad = grad_fn(model, gather_rows(x, batch), gather_rows(y, batch));
      if (!std::isfinite(grad.loss)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)", epoch);
      }
      std::vector<ParamBlock> grads = gradient_blocks(grad);
      opt.step(params, grads);
    }
    require_finite_model(params, epoch);
    if (trace) {
      const double loss = full_loss(model);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)", epoch);
      }
      trace->epoch_loss.push_back(loss);
    }
  }
}

}  // namespace mmstack::detail
