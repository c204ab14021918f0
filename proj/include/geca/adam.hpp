#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "geca/tensor.hpp"

namespace geca {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> first_moment;
  std::vector<Tensor<Scalar>> second_moment;
  long step = 0;
};

/// One bias-corrected Adam update applied in place to `params`.
/// Throws TrainingError, leaving params and state untouched, when any
/// gradient entry is non-finite.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>* const> params, std::span<const Tensor<Scalar>> grads,
               AdamState<Scalar>& state, const AdamConfig& config) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i].shape(), params[i]->shape(), "adam_step gradient");
    if (!grads[i].all_finite()) throw TrainingError("non-finite gradient in parameter " + std::to_string(i));
  }
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.push_back(Tensor<Scalar>::zeros(p->shape()));
      state.second_moment.push_back(Tensor<Scalar>::zeros(p->shape()));
    }
  }
  if (state.first_moment.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");

  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(config.beta1), b2 = static_cast<Scalar>(config.beta2);
  const auto step_size = static_cast<Scalar>(config.lr / c1);
  const auto inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const auto eps = static_cast<Scalar>(config.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i].array();
    auto& v = state.second_moment[i].array();
    const auto& g = grads[i].array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    params[i]->array() -= step_size * m / ((v.sqrt() * inv_sqrt_c2) + eps);
  }
}

}  // namespace geca
