#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "geca/rule.hpp"

namespace geca::testing {

using TensorD = Tensor<double>;
using VarD = Var<double>;
using Builder = std::function<VarD(Tape<double>&, const std::vector<VarD>&)>;

struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
};

/// Compares reverse-mode gradients of L = sum(W * f(inputs)) against central
/// differences, W a fixed random weighting of f's output.
inline GradCheck check_gradients(const std::vector<TensorD>& inputs, const Builder& f, std::uint64_t seed,
                                 double h = 1e-3) {
  auto leaves = [](Tape<double>& tape, const std::vector<TensorD>& xs) {
    std::vector<VarD> vs;
    for (const auto& x : xs) vs.push_back(tape.leaf(x, true));
    return vs;
  };
  TensorD weights;
  {
    Tape<double> tape;
    const auto out = f(tape, leaves(tape, inputs));
    Rng rng(seed ^ 0xabcdefULL);
    weights = TensorD::normal(out.shape(), rng);
  }
  auto objective = [&](const std::vector<TensorD>& xs) {
    Tape<double> tape;
    const auto out = f(tape, leaves(tape, xs));
    return (out.value().array() * weights.array()).sum();
  };

  Tape<double> tape;
  const auto vars = leaves(tape, inputs);
  const auto out = f(tape, vars);
  tape.backward(sum(out * tape.constant(weights)));

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  std::vector<TensorD> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const TensorD& g = vars[k].grad();
    for (Index i = 0; i < xs[k].size(); ++i) {
      const double keep = xs[k][i];
      xs[k][i] = keep + h;
      const double up = objective(xs);
      xs[k][i] = keep - h;
      const double down = objective(xs);
      xs[k][i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (g[i] - numeric) * (g[i] - numeric);
      a2 += g[i] * g[i];
      n2 += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return {std::sqrt(diff2) / scale, std::sqrt(a2)};
}

/// Small rule config that keeps finite-difference sweeps cheap.
inline ThetaConfig small_theta_config(Index num_labels = 2) {
  ThetaConfig c;
  c.layout = ChannelLayout::make(1, 4, 4);
  c.heads = 3;
  c.cond_dim = 12;
  c.freq_dim = 8;
  c.num_labels = num_labels;
  return c;
}

/// Parameters with every tensor redrawn from N(0, stddev^2), so adaLN gates
/// are active and every path carries gradient.
template <typename Scalar>
ThetaParams<Scalar> random_theta(const ThetaConfig& config, std::uint64_t seed, double stddev = 0.3) {
  Rng rng(seed);
  auto p = ThetaParams<Scalar>::init(config, rng);
  for (auto* t : p.tensors()) *t = Tensor<Scalar>::normal(t->shape(), rng, static_cast<Scalar>(stddev));
  return p;
}

template <typename Scalar>
double max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return static_cast<double>((a.array() - b.array()).abs().maxCoeff());
}

}  // namespace geca::testing
