#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "geca/adam.hpp"
#include "geca/rule.hpp"
#include "geca/schedule.hpp"

namespace geca {

struct TrainConfig {
  Index batch = 16;
  long steps = 5000;
  int updates = 12;          // M
  bool randomize_updates = false;  // draw M uniformly from [1, updates] per step
  double fire_rate = 0.5;    // p
  AdamConfig adam;
  bool cosine_lr = false;  // anneal adam.lr to 0 over `steps`
  std::uint64_t seed = 0;
  ScheduleKind schedule = ScheduleKind::Linear;
  int T = 250;
  long checkpoint_every = 1000;
  double label_drop = 0.1;
  // Fraction of batch items that continue a pooled reverse trajectory
  // (model-made C_in plus inherited C_h) instead of a fresh noised image.
  // 0 disables the pool.
  double heredity_pool = 0.0;
  int pool_size = 16;
  // Weight of a penalty on evolved C_h values outside [-1, 1].
  double overflow_weight = 0.0;

  void validate() const {
    if (batch < 1) throw ConfigError("batch must be positive");
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (updates < 1) throw ConfigError("M must be at least 1");
    check_fire_rate(fire_rate);
    if (!(label_drop >= 0.0 && label_drop < 1.0 + 1e-12)) throw ConfigError("label drop probability must lie in [0, 1]");
    if (T < 2) throw ConfigError("T must be at least 2");
    if (!(heredity_pool >= 0.0 && heredity_pool <= 1.0)) throw ConfigError("heredity pool fraction must lie in [0, 1]");
    if (!(overflow_weight >= 0.0)) throw ConfigError("overflow weight must be non-negative");
    if (heredity_pool > 0.0 && pool_size < 1) throw ConfigError("heredity pool needs at least one slot");
  }

  // Learning rate for the update that follows `step` completed steps.
  double learning_rate(long step) const {
    if (!cosine_lr || steps < 1) return adam.lr;
    const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(steps));
    return 0.5 * adam.lr * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

template <typename Scalar>
struct NoisedSample {
  Tensor<Scalar> noisy;
  Tensor<Scalar> eps;
};

/// C_in_t = sqrt(alpha_bar_t) C_in_0 + sqrt(1 - alpha_bar_t) eps, eps ~ N(0, I).
template <typename Scalar>
NoisedSample<Scalar> forward_noise(const Tensor<Scalar>& clean, int t, const NoiseSchedule& schedule, Rng& rng) {
  schedule.check_timestep(t);
  if (clean.size() > 0 && (clean.array().maxCoeff() > Scalar(1.0001) || clean.array().minCoeff() < Scalar(-1.0001)))
    throw InputError("forward_noise expects clean values in [-1, 1]");
  NoisedSample<Scalar> out{Tensor<Scalar>(clean.shape()), Tensor<Scalar>::normal(clean.shape(), rng)};
  const auto a = static_cast<Scalar>(std::sqrt(schedule.alpha_bar[static_cast<std::size_t>(t)]));
  const auto s = static_cast<Scalar>(std::sqrt(1.0 - schedule.alpha_bar[static_cast<std::size_t>(t)]));
  out.noisy.array() = a * clean.array() + s * out.eps.array();
  return out;
}

/// Mean squared error between eps and the grid's C_out block.
template <typename Scalar>
double loss(const PixCellGrid<Scalar>& grid, const Tensor<Scalar>& eps) {
  if (eps.size() != grid.dims.cells() * grid.layout.n_out)
    throw DimensionError("loss: eps has shape " + shape_string(eps.shape()) + " but grid C_out has " +
                         std::to_string(grid.dims.cells() * grid.layout.n_out) + " entries");
  const auto out = grid.block(Channel::Out);
  const auto target = eps.reshaped({grid.dims.cells(), grid.layout.n_out}).matrix();
  return static_cast<double>((out - target).squaredNorm()) / static_cast<double>(eps.size());
}

/// Tape version of `loss` for an evolved [cells x total] state.
template <typename Scalar>
Var<Scalar> loss(Var<Scalar> state, const ChannelLayout& layout, const Tensor<Scalar>& eps) {
  auto out = slice_cols(state, layout.offset(Channel::Out), layout.n_out);
  if (eps.size() != out.value().size()) throw DimensionError("loss: eps does not match C_out");
  return mse(out, state.tape->constant(eps.reshaped(out.shape())));
}

enum class StepVariant { DdpmStandard, PaperLiteral };

StepVariant parse_step_variant(const std::string& name);
std::string to_string(StepVariant variant);

/// One reverse update of C_in from the predicted noise.
///   ddpm-standard: 1/sqrt(a_t) (x_t - (1 - a_t)/sqrt(1 - abar_t) eps) + sigma_t z,
///                  sigma_t^2 the posterior variance, z = 0 at t = 1.
///   paper-literal: 1/sqrt(a_t) (x_t - (1 - a_t)/sqrt(1 - abar_{t-1}) eps), no noise;
///                  at t = 1 (abar_0 = 1) the standard denominator is used.
template <typename Scalar>
Tensor<Scalar> reverse_step(const Tensor<Scalar>& cin_t, const Tensor<Scalar>& eps_pred, int t,
                            const NoiseSchedule& schedule, StepVariant variant, Rng& rng) {
  schedule.check_timestep(t);
  require_shape(eps_pred.shape(), cin_t.shape(), "reverse_step");
  const auto ti = static_cast<std::size_t>(t);
  const double a = schedule.alpha[ti];
  double denom_bar = schedule.alpha_bar[ti];
  if (variant == StepVariant::PaperLiteral && schedule.alpha_bar[ti - 1] < 1.0) denom_bar = schedule.alpha_bar[ti - 1];
  const auto inv_sqrt_a = static_cast<Scalar>(1.0 / std::sqrt(a));
  // A step that adds no noise (a = 1) removes none; skip the 0/0 it would give at abar = 1.
  const auto coef = a == 1.0 ? Scalar(0) : static_cast<Scalar>((1.0 - a) / std::sqrt(1.0 - denom_bar));
  Tensor<Scalar> out(cin_t.shape());
  out.array() = inv_sqrt_a * (cin_t.array() - coef * eps_pred.array());
  if (variant == StepVariant::DdpmStandard && t > 1) {
    const auto sigma = static_cast<Scalar>(std::sqrt(schedule.posterior_variance(t)));
    out.array() += sigma * Tensor<Scalar>::normal(cin_t.shape(), rng).array();
  }
  return out;
}

/// A reverse trajectory in progress for a known clean image: the C_in the
/// model itself produced at timestep t and the hidden state it carries.
template <typename Scalar>
struct Lineage {
  Tensor<Scalar> clean;   // [H x W x n_in]
  Label label;            // before label dropout
  int t = 0;
  Tensor<Scalar> noisy;   // C_in_t
  Tensor<Scalar> hidden;  // [H x W x n_h]
};

template <typename Scalar = float>
struct TrainState {
  ThetaParams<Scalar> params;
  AdamState<Scalar> adam;
  long step = 0;
  std::vector<Lineage<Scalar>> pool;
};

template <typename Scalar>
struct LossAndGradients {
  double loss = 0.0;
  std::vector<Tensor<Scalar>> grads;  // same order as ThetaParams::for_each
  std::vector<int> timesteps;
  std::vector<Label> labels;  // after label dropout
};

/// One forward/backward pass over a batch: draws t uniformly in [1, T] per
/// item, drops labels to null with the configured probability, noises C_in,
/// seeds the grid, evolves M steps and scores C_out against the noise.
///
/// With a pool, a share of the items instead continue a stored lineage at its
/// timestep: C_in and C_h come from the lineage and the target is the noise
/// actually present in that C_in. Continued lineages advance one ddpm step in
/// place and leave after t = 1; vacant slots are filled by fresh items drawn
/// at t = T. Training thus sees the states a full sampling run produces.
template <typename Scalar>
LossAndGradients<Scalar> loss_and_gradients(std::span<const Tensor<Scalar>> images, std::span<const Label> labels,
                                            const ThetaParams<Scalar>& params, const TrainConfig& config,
                                            const NoiseSchedule& schedule, Rng& rng,
                                            std::vector<Lineage<Scalar>>* pool = nullptr) {
  if (images.empty()) throw InputError("empty training batch");
  if (images.size() != labels.size()) throw DimensionError("image/label count mismatch");
  if (schedule.T != config.T) throw ConfigError("schedule length does not match config T");
  const ChannelLayout& layout = params.config.layout;
  const Tensor<Scalar>& first = images[0];
  if (first.rank() != 3) throw DimensionError("training images must be [H x W x C]");
  const Index height = first.dim(0), width = first.dim(1);
  const auto batch = static_cast<Index>(images.size());
  const auto nb = static_cast<std::size_t>(batch);
  const Index cells = height * width;
  const Shape hidden_shape{height, width, layout.n_h};

  // Pool slot continued by each item, or -1 for a fresh draw.
  std::vector<std::ptrdiff_t> slot(nb, -1);
  const bool pooled = pool && config.heredity_pool > 0.0;
  if (pooled && !pool->empty()) {
    std::vector<std::size_t> open(pool->size());
    std::iota(open.begin(), open.end(), std::size_t{0});
    for (std::size_t b = 0; b < nb && !open.empty(); ++b) {
      if (uniform01(rng) >= config.heredity_pool) continue;
      const auto k = std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng);
      const auto& e = (*pool)[open[k]];
      if (e.clean.shape() == first.shape() && e.hidden.shape() == hidden_shape) slot[b] = static_cast<std::ptrdiff_t>(open[k]);
      open[k] = open.back();
      open.pop_back();
    }
  }

  // Fresh items that open a new lineage in a vacant slot start at t = T,
  // where sampling starts.
  std::vector<bool> opens(nb, false);
  if (pooled) {
    auto vacant = static_cast<std::ptrdiff_t>(config.pool_size) - static_cast<std::ptrdiff_t>(pool->size());
    for (std::size_t b = 0; b < nb && vacant > 0; ++b)
      if (slot[b] < 0) opens[b] = true, --vacant;
  }

  LossAndGradients<Scalar> result;
  Tensor<Scalar> noisy({batch, height, width, layout.n_in});
  Tensor<Scalar> eps({batch, height, width, layout.n_in});
  const Index per = height * width * layout.n_in;
  std::vector<const Tensor<Scalar>*> clean(nb);
  std::vector<Label> kept(nb);
  std::uniform_int_distribution<int> pick_t(1, schedule.T);
  for (std::size_t b = 0; b < nb; ++b) {
    const Index off = static_cast<Index>(b) * per;
    if (slot[b] >= 0) {
      const auto& e = (*pool)[static_cast<std::size_t>(slot[b])];
      clean[b] = &e.clean;
      kept[b] = e.label;
      result.labels.push_back(config.label_drop > 0.0 && uniform01(rng) < config.label_drop ? Label::null() : e.label);
      const auto ab = schedule.alpha_bar[static_cast<std::size_t>(e.t)];
      result.timesteps.push_back(e.t);
      noisy.array().segment(off, per) = e.noisy.array();
      eps.array().segment(off, per) =
          (e.noisy.array() - static_cast<Scalar>(std::sqrt(ab)) * e.clean.array()) / static_cast<Scalar>(std::sqrt(1.0 - ab));
    } else {
      const auto& img = images[b];
      require_shape(img.shape(), first.shape(), "training image");
      clean[b] = &img;
      kept[b] = labels[b];
      const int t = opens[b] ? schedule.T : pick_t(rng);
      result.timesteps.push_back(t);
      result.labels.push_back(config.label_drop > 0.0 && uniform01(rng) < config.label_drop ? Label::null() : labels[b]);
      const auto sample = forward_noise(img, t, schedule, rng);
      noisy.array().segment(off, per) = sample.noisy.array();
      eps.array().segment(off, per) = sample.eps.array();
    }
  }
  PixCellGrid<Scalar> grid = init_grid(noisy, layout, rng);
  for (std::size_t b = 0; b < nb; ++b)
    if (slot[b] >= 0)
      grid.block(Channel::Hidden).middleRows(static_cast<Index>(b) * cells, cells) =
          (*pool)[static_cast<std::size_t>(slot[b])].hidden.matrix();

  int updates = config.updates;
  if (config.randomize_updates) updates = std::uniform_int_distribution<int>(1, config.updates)(rng);

  Tape<Scalar> tape;
  const auto v = bind(tape, params, true);
  const auto mod = condition(tape, v, Conditioning{result.timesteps, result.labels});
  auto state = tape.leaf(grid.state.reshaped({grid.dims.cells(), layout.total()}), false);
  state = evolve(v, mod, state, grid.dims, updates, config.fire_rate, rng);
  const bool any_continued = std::any_of(slot.begin(), slot.end(), [](std::ptrdiff_t k) { return k >= 0; });
  Var<Scalar> l;
  if (any_continued) {
    // Continued items are scored in C_in units, (1 - alpha_bar_t) times the
    // noise error: off-trajectory inputs near t = 1 imply huge noise targets
    // that barely move the sample.
    Tensor<Scalar> weight({grid.dims.cells(), layout.n_out});
    for (std::size_t b = 0; b < nb; ++b) {
      const double w = slot[b] >= 0 ? 1.0 - schedule.alpha_bar[static_cast<std::size_t>(result.timesteps[b])] : 1.0;
      weight.matrix().middleRows(static_cast<Index>(b) * cells, cells).setConstant(static_cast<Scalar>(w));
    }
    const auto diff = slice_cols(state, layout.offset(Channel::Out), layout.n_out) -
                      tape.constant(eps.reshaped({grid.dims.cells(), layout.n_out}));
    l = mean(diff * diff * tape.constant(std::move(weight)));
  } else {
    l = loss(state, layout, eps);
  }
  if (config.overflow_weight > 0.0) {
    const auto spill = mean(overflow(slice_cols(state, layout.offset(Channel::Hidden), layout.n_h), Scalar(1)));
    l = l + scale(spill, static_cast<Scalar>(config.overflow_weight));
  }
  tape.backward(l);
  result.loss = static_cast<double>(l.value()[0]);
  if (!std::isfinite(result.loss)) throw TrainingError("non-finite loss");
  for (const auto& p : v.all) result.grads.push_back(p.grad());

  if (pooled) {
    const auto evolved = state.value().matrix();
    std::vector<std::size_t> ended;  // continued slots whose lineage is done
    std::vector<Lineage<Scalar>> opened;  // appended last: clean[] may point into the pool
    for (std::size_t b = 0; b < nb; ++b) {
      if (slot[b] < 0 && !opens[b]) continue;
      const int t = result.timesteps[b];
      const Index row = static_cast<Index>(b) * cells;
      Lineage<Scalar> next{*clean[b], kept[b], t - 1, Tensor<Scalar>(first.shape()), Tensor<Scalar>(hidden_shape)};
      if (t > 1) {
        Tensor<Scalar> x(first.shape()), e(first.shape());
        x.array() = noisy.array().segment(static_cast<Index>(b) * per, per);
        e.matrix() = evolved.block(row, layout.offset(Channel::Out), cells, layout.n_out);
        next.noisy = reverse_step(x, e, t, schedule, StepVariant::DdpmStandard, rng);
        next.hidden.matrix() = evolved.block(row, layout.offset(Channel::Hidden), cells, layout.n_h);
      }
      const bool alive = t > 1 && next.noisy.all_finite() && next.hidden.all_finite();
      if (slot[b] >= 0) {
        if (alive) (*pool)[static_cast<std::size_t>(slot[b])] = std::move(next);
        else ended.push_back(static_cast<std::size_t>(slot[b]));
      } else if (alive) {
        opened.push_back(std::move(next));
      }
    }
    std::sort(ended.rbegin(), ended.rend());
    for (auto k : ended) pool->erase(pool->begin() + static_cast<std::ptrdiff_t>(k));
    for (auto& e : opened) pool->push_back(std::move(e));
  }
  return result;
}

/// loss_and_gradients followed by an Adam update. Returns the batch loss.
template <typename Scalar>
double train_step(std::span<const Tensor<Scalar>> images, std::span<const Label> labels, TrainState<Scalar>& state,
                  const TrainConfig& config, const NoiseSchedule& schedule, Rng& rng) {
  auto lg = loss_and_gradients(images, labels, state.params, config, schedule, rng, &state.pool);
  auto params = state.params.tensors();
  AdamConfig adam = config.adam;
  adam.lr = config.learning_rate(state.step);
  adam_step<Scalar>(params, lg.grads, state.adam, adam);
  ++state.step;
  return lg.loss;
}

/// Runs `config.steps - state.step` optimiser steps on batches drawn
/// uniformly with replacement. `on_step(step, loss)` runs after each step.
template <typename Scalar>
void train(std::span<const Tensor<Scalar>> images, std::span<const Label> labels, TrainState<Scalar>& state,
           const TrainConfig& config, Rng& rng, const std::function<void(long, double)>& on_step = {}) {
  config.validate();
  if (images.empty()) throw InputError("empty training set");
  const NoiseSchedule schedule = build_schedule(config.schedule, config.T);
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  std::vector<Tensor<Scalar>> batch_images(static_cast<std::size_t>(config.batch));
  std::vector<Label> batch_labels(static_cast<std::size_t>(config.batch));
  while (state.step < config.steps) {
    for (std::size_t b = 0; b < batch_images.size(); ++b) {
      const std::size_t k = pick(rng);
      batch_images[b] = images[k];
      batch_labels[b] = labels[k];
    }
    const double l = train_step<Scalar>(batch_images, batch_labels, state, config, schedule, rng);
    if (on_step) on_step(state.step, l);
  }
}

}  // namespace geca
