#pragma once

// The update rule: a single adaLN-conditioned transformer block whose
// attention is restricted to each cell's 3x3 neighbourhood, applied
// stochastically per cell and unrolled for M shared-weight steps.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "geca/grid.hpp"
#include "geca/label.hpp"
#include "geca/ops.hpp"

namespace geca {

struct ThetaConfig {
  ChannelLayout layout;
  Index heads = 4;
  Index cond_dim = 128;
  /// Width of the sinusoidal timestep features fed to the timestep MLP.
  Index freq_dim = 64;
  Index num_labels = 1;

  void validate() const {
    layout.validate();
    head_ranges(layout.total(), heads);
    if (cond_dim < 1 || freq_dim < 2 || freq_dim % 2) throw ConfigError("invalid conditioning widths");
    if (num_labels < 1) throw ConfigError("at least one label is required");
  }
};

/// Parameters of the rule. Shapes depend only on the config.
template <typename Scalar = float>
struct ThetaParams {
  ThetaConfig config;

  Tensor<Scalar> t_fc1_w, t_fc1_b, t_fc2_w, t_fc2_b;
  /// [num_labels + 1, cond_dim]; the last row is the null label.
  Tensor<Scalar> label_table;
  /// adaLN projection to shift/scale/gate for both sub-blocks, zero at init.
  Tensor<Scalar> mod_w, mod_b;
  Tensor<Scalar> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<Scalar> ff1_w, ff1_b, ff2_w, ff2_b;

  static ThetaParams init(const ThetaConfig& config, Rng& rng) {
    config.validate();
    const Index d = config.layout.total(), c = config.cond_dim, f = config.freq_dim;
    auto xavier = [&rng](Index fan_in, Index fan_out) {
      const auto limit = static_cast<Scalar>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
      return Tensor<Scalar>::uniform({fan_in, fan_out}, rng, -limit, limit);
    };
    ThetaParams p;
    p.config = config;
    p.t_fc1_w = Tensor<Scalar>::normal({f, c}, rng, Scalar(0.02));
    p.t_fc1_b = Tensor<Scalar>::zeros({c});
    p.t_fc2_w = Tensor<Scalar>::normal({c, c}, rng, Scalar(0.02));
    p.t_fc2_b = Tensor<Scalar>::zeros({c});
    p.label_table = Tensor<Scalar>::normal({config.num_labels + 1, c}, rng, Scalar(0.02));
    p.mod_w = Tensor<Scalar>::zeros({c, 6 * d});
    p.mod_b = Tensor<Scalar>::zeros({6 * d});
    p.ln1_gain = Tensor<Scalar>::constant({d}, Scalar(1));
    p.ln1_bias = Tensor<Scalar>::zeros({d});
    p.ln2_gain = Tensor<Scalar>::constant({d}, Scalar(1));
    p.ln2_bias = Tensor<Scalar>::zeros({d});
    p.wq = xavier(d, d);
    p.wk = xavier(d, d);
    p.wv = xavier(d, d);
    p.wo = xavier(d, d);
    p.bq = p.bk = p.bv = p.bo = Tensor<Scalar>::zeros({d});
    p.ff1_w = xavier(d, 4 * d);
    p.ff1_b = Tensor<Scalar>::zeros({4 * d});
    p.ff2_w = xavier(4 * d, d);
    p.ff2_b = Tensor<Scalar>::zeros({d});
    return p;
  }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("t_fc1_w", self.t_fc1_w);
    f("t_fc1_b", self.t_fc1_b);
    f("t_fc2_w", self.t_fc2_w);
    f("t_fc2_b", self.t_fc2_b);
    f("label_table", self.label_table);
    f("mod_w", self.mod_w);
    f("mod_b", self.mod_b);
    f("ln1_gain", self.ln1_gain);
    f("ln1_bias", self.ln1_bias);
    f("ln2_gain", self.ln2_gain);
    f("ln2_bias", self.ln2_bias);
    f("wq", self.wq);
    f("bq", self.bq);
    f("wk", self.wk);
    f("bk", self.bk);
    f("wv", self.wv);
    f("bv", self.bv);
    f("wo", self.wo);
    f("bo", self.bo);
    f("ff1_w", self.ff1_w);
    f("ff1_b", self.ff1_b);
    f("ff2_w", self.ff2_w);
    f("ff2_b", self.ff2_b);
  }

  /// Calls f(name, tensor&) for every parameter in a fixed order.
  template <typename F>
  void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  std::vector<Tensor<Scalar>*> tensors() {
    std::vector<Tensor<Scalar>*> out;
    for_each([&](const char*, Tensor<Scalar>& t) { out.push_back(&t); });
    return out;
  }

  Index parameter_count() const {
    Index n = 0;
    for_each([&](const char*, const Tensor<Scalar>& t) { n += t.size(); });
    return n;
  }

  template <typename To>
  ThetaParams<To> cast() const {
    ThetaParams<To> out;
    out.config = config;
    auto dst = out.tensors();
    std::size_t i = 0;
    for_each([&](const char*, const Tensor<Scalar>& t) { *dst[i++] = t.template cast<To>(); });
    return out;
  }
};

/// Closed-form parameter count for a given cell width, conditioning width,
/// timestep feature width and label count.
inline Index theta_parameter_count(Index width, Index cond_dim, Index freq_dim, Index num_labels) {
  const Index d = width, c = cond_dim;
  return (freq_dim * c + c) + (c * c + c) + (num_labels + 1) * c + (c * 6 * d + 6 * d) + 4 * d +
         4 * (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d);
}

/// ThetaParams recorded as tape leaves.
template <typename Scalar>
struct ThetaVars {
  std::vector<Var<Scalar>> all;
  const ThetaConfig* config = nullptr;

  Var<Scalar> t_fc1_w, t_fc1_b, t_fc2_w, t_fc2_b, label_table, mod_w, mod_b;
  Var<Scalar> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Var<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  Var<Scalar> ff1_w, ff1_b, ff2_w, ff2_b;
};

/// Wraps existing tape leaves, one per parameter in for_each order.
template <typename Scalar>
ThetaVars<Scalar> bind_leaves(std::vector<Var<Scalar>> leaves, const ThetaConfig& config) {
  if (leaves.size() != 23) throw DimensionError("bind_leaves: expected 23 parameter leaves");
  ThetaVars<Scalar> v;
  v.config = &config;
  v.all = std::move(leaves);
  auto it = v.all.begin();
  for (Var<Scalar>* slot : {&v.t_fc1_w, &v.t_fc1_b, &v.t_fc2_w, &v.t_fc2_b, &v.label_table, &v.mod_w, &v.mod_b,
                            &v.ln1_gain, &v.ln1_bias, &v.ln2_gain, &v.ln2_bias, &v.wq, &v.bq, &v.wk, &v.bk,
                            &v.wv, &v.bv, &v.wo, &v.bo, &v.ff1_w, &v.ff1_b, &v.ff2_w, &v.ff2_b})
    *slot = *it++;
  return v;
}

template <typename Scalar>
ThetaVars<Scalar> bind(Tape<Scalar>& tape, const ThetaParams<Scalar>& params, bool requires_grad) {
  std::vector<Var<Scalar>> leaves;
  params.for_each([&](const char*, const Tensor<Scalar>& t) { leaves.push_back(tape.leaf(t, requires_grad)); });
  return bind_leaves(std::move(leaves), params.config);
}

/// Per-item diffusion timestep and label for a batch.
struct Conditioning {
  std::vector<int> timesteps;
  std::vector<Label> labels;

  static Conditioning uniform(Index batch, int t, const Label& label) {
    return {std::vector<int>(static_cast<std::size_t>(batch), t),
            std::vector<Label>(static_cast<std::size_t>(batch), label)};
  }
};

/// Sinusoidal timestep features [B x dim]: cos half then sin half.
template <typename Scalar>
Tensor<Scalar> timestep_features(const std::vector<int>& timesteps, Index dim) {
  const Index half = dim / 2;
  Tensor<Scalar> out({static_cast<Index>(timesteps.size()), dim});
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    for (Index k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double arg = static_cast<double>(timesteps[b]) * freq;
      out.matrix()(static_cast<Index>(b), k) = static_cast<Scalar>(std::cos(arg));
      out.matrix()(static_cast<Index>(b), half + k) = static_cast<Scalar>(std::sin(arg));
    }
  }
  return out;
}

/// Label selector [B x (L+1)]: the label's bits, or a one in the last
/// (null) column. Each set bit adds its learned embedding row.
template <typename Scalar>
Tensor<Scalar> label_selector(const std::vector<Label>& labels, Index num_labels) {
  Tensor<Scalar> out({static_cast<Index>(labels.size()), num_labels + 1});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const Label& l = labels[b];
    const auto row = static_cast<Index>(b);
    if (l.is_null()) {
      out.matrix()(row, num_labels) = Scalar(1);
      continue;
    }
    if (static_cast<Index>(l.size()) != num_labels)
      throw InputError("label '" + l.to_string() + "' has " + std::to_string(l.size()) + " bits, model expects " +
                       std::to_string(num_labels));
    for (Index k = 0; k < num_labels; ++k) out.matrix()(row, k) = static_cast<Scalar>(l.bits()[static_cast<std::size_t>(k)]);
  }
  return out;
}

/// adaLN shift/scale/gate vectors [B x D] for both sub-blocks.
template <typename Scalar>
struct Modulation {
  Var<Scalar> shift1, scale1, gate1, shift2, scale2, gate2;
};

template <typename Scalar>
Modulation<Scalar> condition(Tape<Scalar>& tape, const ThetaVars<Scalar>& v, const Conditioning& cond) {
  const ThetaConfig& cfg = *v.config;
  if (cond.timesteps.size() != cond.labels.size()) throw DimensionError("conditioning: timestep/label count mismatch");
  auto tfeat = tape.constant(timestep_features<Scalar>(cond.timesteps, cfg.freq_dim));
  auto t_emb = linear(silu(linear(tfeat, v.t_fc1_w, v.t_fc1_b)), v.t_fc2_w, v.t_fc2_b);
  auto l_emb = matmul(tape.constant(label_selector<Scalar>(cond.labels, cfg.num_labels)), v.label_table);
  auto mod = linear(silu(t_emb + l_emb), v.mod_w, v.mod_b);
  const Index d = cfg.layout.total();
  return {slice_cols(mod, 0, d),     slice_cols(mod, d, d),     slice_cols(mod, 2 * d, d),
          slice_cols(mod, 3 * d, d), slice_cols(mod, 4 * d, d), slice_cols(mod, 5 * d, d)};
}

/// The rule's output for every cell: [cells x (n_out + n_h)] increments for
/// the out and hidden channels.
template <typename Scalar>
Var<Scalar> theta_delta(const ThetaVars<Scalar>& v, const Modulation<Scalar>& mod, Var<Scalar> state,
                        const GridDims& dims) {
  const ThetaConfig& cfg = *v.config;
  const Index hw = dims.cells_per_item();
  auto m1 = modulate(layer_norm(state, v.ln1_gain, v.ln1_bias), mod.shift1, mod.scale1, hw);
  auto attn = local_attention(linear(m1, v.wq, v.bq), linear(m1, v.wk, v.bk), linear(m1, v.wv, v.bv), dims, cfg.heads);
  auto x1 = gated_residual(state, mod.gate1, linear(attn, v.wo, v.bo), hw);
  auto m2 = modulate(layer_norm(x1, v.ln2_gain, v.ln2_bias), mod.shift2, mod.scale2, hw);
  auto ff = linear(gelu(linear(m2, v.ff1_w, v.ff1_b)), v.ff2_w, v.ff2_b);
  auto x2 = gated_residual(x1, mod.gate2, ff, hw);
  return slice_cols(x2 - state, cfg.layout.updated_offset(), cfg.layout.updated_width());
}

inline void check_fire_rate(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("update probability must lie in [0, 1], got " + std::to_string(p));
}

/// Per-cell Bernoulli(p) firing mask. p = 0 and p = 1 consume no randomness.
template <typename Scalar>
Tensor<Scalar> fire_mask(Index cells, double p, Rng& rng) {
  check_fire_rate(p);
  if (p == 0.0) return Tensor<Scalar>::zeros({cells});
  if (p == 1.0) return Tensor<Scalar>::constant({cells}, Scalar(1));
  Tensor<Scalar> mask({cells});
  for (Index i = 0; i < cells; ++i) mask[i] = uniform01(rng) < p ? Scalar(1) : Scalar(0);
  return mask;
}

/// One stochastic cell update on the tape: fired cells add the rule output to
/// their out/hidden channels; C_in and C_gamma pass through untouched.
template <typename Scalar>
Var<Scalar> geca_step(const ThetaVars<Scalar>& v, const Modulation<Scalar>& mod, Var<Scalar> state, const GridDims& dims,
                      double p, Rng& rng) {
  const Tensor<Scalar> mask = fire_mask<Scalar>(dims.cells(), p, rng);
  if (p == 0.0) return state;
  return masked_residual(state, theta_delta(v, mod, state, dims), mask, v.config->layout.updated_offset());
}

/// M weight-shared steps on the tape.
template <typename Scalar>
Var<Scalar> evolve(const ThetaVars<Scalar>& v, const Modulation<Scalar>& mod, Var<Scalar> state, const GridDims& dims,
                   int steps, double p, Rng& rng) {
  if (steps < 1) throw ConfigError("evolve needs at least one step");
  check_fire_rate(p);
  for (int m = 0; m < steps; ++m) state = geca_step(v, mod, state, dims, p, rng);
  return state;
}

namespace detail {

template <typename Scalar>
void check_grid(const PixCellGrid<Scalar>& grid, const ThetaParams<Scalar>& params) {
  if (!(grid.layout == params.config.layout)) throw DimensionError("grid layout does not match rule parameters");
}

template <typename Scalar>
Conditioning broadcast(const Conditioning& cond, Index batch) {
  if (static_cast<Index>(cond.timesteps.size()) == batch && static_cast<Index>(cond.labels.size()) == batch)
    return cond;
  if (cond.timesteps.size() == 1 && cond.labels.size() == 1)
    return Conditioning::uniform(batch, cond.timesteps[0], cond.labels[0]);
  throw DimensionError("conditioning does not match grid batch");
}

template <typename Scalar>
PixCellGrid<Scalar> with_state(const PixCellGrid<Scalar>& grid, const Tensor<Scalar>& cells) {
  PixCellGrid<Scalar> out = grid;
  out.state = cells.reshaped(grid.state.shape());
  return out;
}

}  // namespace detail

/// Rule output for every cell of `grid`, [B x H x W x (n_out + n_h)].
template <typename Scalar>
Tensor<Scalar> theta_forward(const PixCellGrid<Scalar>& grid, const Conditioning& cond, const ThetaParams<Scalar>& params) {
  detail::check_grid(grid, params);
  Tape<Scalar> tape;
  const auto v = bind(tape, params, false);
  const auto mod = condition(tape, v, detail::broadcast<Scalar>(cond, grid.batch()));
  auto state = tape.constant(grid.state.reshaped({grid.dims.cells(), grid.layout.total()}));
  return theta_delta(v, mod, state, grid.dims)
      .value()
      .reshaped({grid.batch(), grid.height(), grid.width(), grid.layout.updated_width()});
}

template <typename Scalar>
PixCellGrid<Scalar> geca_step(const PixCellGrid<Scalar>& grid, const Conditioning& cond, const ThetaParams<Scalar>& params,
                              double p, Rng& rng) {
  return evolve(grid, cond, params, 1, p, rng);
}

/// M sequential stochastic updates sharing one parameter set.
template <typename Scalar>
PixCellGrid<Scalar> evolve(const PixCellGrid<Scalar>& grid, const Conditioning& cond, const ThetaParams<Scalar>& params,
                           int steps, double p, Rng& rng) {
  detail::check_grid(grid, params);
  if (steps < 1) throw ConfigError("evolve needs at least one step");
  check_fire_rate(p);
  Tape<Scalar> tape;
  const auto v = bind(tape, params, false);
  const auto mod = condition(tape, v, detail::broadcast<Scalar>(cond, grid.batch()));
  auto state = tape.constant(grid.state.reshaped({grid.dims.cells(), grid.layout.total()}));
  for (int m = 0; m < steps; ++m) state = geca_step(v, mod, state, grid.dims, p, rng);
  return detail::with_state(grid, state.value());
}

}  // namespace geca
