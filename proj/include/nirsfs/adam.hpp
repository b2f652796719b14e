#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nirsfs/tensor.hpp"

namespace nirsfs {

/// Moment buffers and hyperparameters for one group of parameters.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 2e-4;

  AdamState() = default;

  /// Zeroed buffers shaped like `params`.
  explicit AdamState(const std::vector<Tensor<T>>& params) {
    for (const auto& p : params) {
      first_moment.emplace_back(p.numel(), T(0));
      second_moment.emplace_back(p.numel(), T(0));
    }
  }
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Nothing is modified if any gradient is non-finite.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state has " + std::to_string(state.first_moment.size()) +
                     " buffers for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.first_moment[k].size() != params[k].numel() ||
        state.second_moment[k].size() != params[k].numel()) {
      throw ShapeError("adam_step: moment buffer size mismatch for parameter " + std::to_string(k));
    }
    if (!params[k].has_grad()) continue;
    for (T g : params[k].grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw DivergedTraining("adam_step: non-finite gradient in parameter " + std::to_string(k));
      }
    }
  }

  const std::uint64_t t = state.step_count + 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t));
  const double c2 = 1.0 - std::pow(b2, double(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].has_grad()) continue;
    auto g = params[k].grad();
    auto w = params[k].data();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = T(mi);
      v[i] = T(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      w[i] = T(double(w[i]) - state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
  state.step_count = t;
}

}  // namespace nirsfs
