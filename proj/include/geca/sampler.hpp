#pragma once

// Reverse-time generation with hidden-state inheritance across timesteps.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "geca/diffusion.hpp"

namespace geca {

/// Which evolved channels carry over from timestep t+1 to t.
enum class InheritanceMode { None, OutOnly, OutAndHidden, HiddenOnly };

/// Accepts exactly "none", "out", "out+h", "h".
InheritanceMode parse_inheritance_mode(const std::string& name);
std::string to_string(InheritanceMode mode);

struct SamplerConfig {
  int updates = 12;                 // M per timestep
  std::vector<int> updates_per_t;   // optional override, index t-1
  double guidance = 1.5;            // w
  InheritanceMode mode = InheritanceMode::HiddenOnly;
  StepVariant variant = StepVariant::DdpmStandard;
  double fire_rate = 0.5;
  std::uint64_t seed = 0;
  /// Timestep fed to the rule at step t (index t-1) when sampling on a
  /// respaced schedule; empty means t itself.
  std::vector<int> timestep_map;

  int model_timestep(int t) const {
    return timestep_map.empty() ? t : timestep_map.at(static_cast<std::size_t>(t - 1));
  }

  int updates_at(int t) const {
    return updates_per_t.empty() ? updates : updates_per_t.at(static_cast<std::size_t>(t - 1));
  }

  void validate(int T) const {
    if (updates < 1) throw ConfigError("M must be at least 1");
    if (!updates_per_t.empty()) {
      if (static_cast<int>(updates_per_t.size()) != T) throw ConfigError("per-timestep M schedule must have T entries");
      for (int m : updates_per_t)
        if (m < 1) throw ConfigError("per-timestep M must be at least 1");
    }
    if (!timestep_map.empty() && static_cast<int>(timestep_map.size()) != T)
      throw ConfigError("timestep map must have T entries");
    if (!(guidance >= 0.0)) throw ConfigError("guidance scale must be non-negative");
    check_fire_rate(fire_rate);
  }
};

/// Starting grid for reverse timestep t. At t = T (no previous grid) every
/// mode uses the seed pattern. Afterwards out/hidden channels are either
/// copied from `prev` (the evolved grid of t+1) or reset to the seed pattern
/// per `mode`; the centre cell's C_out is redrawn from N(0, I) in every case.
template <typename Scalar>
PixCellGrid<Scalar> ghg_init(const PixCellGrid<Scalar>* prev, const Tensor<Scalar>& noisy_cin, int t, int T,
                             InheritanceMode mode, const ChannelLayout& layout, Rng& rng) {
  const bool last = t == T;
  if (last && prev) throw ProtocolError("ghg_init: previous grid supplied at t = T");
  if (!last && !prev) throw ProtocolError("ghg_init: previous grid missing at t < T");
  if (t < 1 || t > T) throw InputError("ghg_init: timestep out of range");
  // init_grid draws the centre C_out and then C_h, matching the t = T pattern.
  PixCellGrid<Scalar> grid = init_grid(noisy_cin, layout, rng);
  if (last) return grid;
  if (!(prev->layout == layout)) throw DimensionError("ghg_init: previous grid layout differs");
  if (!(grid.dims.batch == prev->dims.batch && grid.dims.height == prev->dims.height &&
        grid.dims.width == prev->dims.width))
    throw DimensionError("ghg_init: previous grid extents differ from C_in");

  const bool keep_out = mode == InheritanceMode::OutOnly || mode == InheritanceMode::OutAndHidden;
  const bool keep_h = mode == InheritanceMode::HiddenOnly || mode == InheritanceMode::OutAndHidden;
  if (keep_h) grid.block(Channel::Hidden) = prev->block(Channel::Hidden);
  if (keep_out) {
    const CellIndex ctr = center_cell(grid.height(), grid.width());
    for (Index b = 0; b < grid.batch(); ++b) {
      const Index row = grid.dims.row(b, ctr.i, ctr.j);
      const auto fresh = grid.block(Channel::Out).row(row).eval();
      grid.block(Channel::Out).middleRows(b * grid.dims.cells_per_item(), grid.dims.cells_per_item()) =
          prev->block(Channel::Out).middleRows(b * grid.dims.cells_per_item(), grid.dims.cells_per_item());
      grid.block(Channel::Out).row(row) = fresh;
    }
  }
  return grid;
}

/// Overload with the previous grid as optional.
template <typename Scalar>
PixCellGrid<Scalar> ghg_init(const std::optional<PixCellGrid<Scalar>>& prev, const Tensor<Scalar>& noisy_cin, int t,
                             int T, InheritanceMode mode, const ChannelLayout& layout, Rng& rng) {
  return ghg_init(prev ? &*prev : nullptr, noisy_cin, t, T, mode, layout, rng);
}

/// eps_uncond + w (eps_cond - eps_uncond).
template <typename Scalar>
Tensor<Scalar> cfg_combine(const Tensor<Scalar>& eps_cond, const Tensor<Scalar>& eps_uncond, double w) {
  require_shape(eps_uncond.shape(), eps_cond.shape(), "cfg_combine");
  const auto ws = static_cast<Scalar>(w);
  return Tensor<Scalar>(eps_cond.shape(), eps_uncond.array() + ws * (eps_cond.array() - eps_uncond.array()));
}

/// Per-timestep view of a trajectory: the grid after ghg_init and after the
/// conditional evolve.
template <typename Scalar>
using SampleObserver = std::function<void(int t, const PixCellGrid<Scalar>& initialised, const PixCellGrid<Scalar>& evolved)>;

/// Stream offset for the unconditional branch, so skipping it never shifts
/// the conditional trajectory's random draws.
inline constexpr std::uint64_t kUnconditionalStream = 0x9e3779b97f4a7c15ULL;

/// Runs the reverse process from a given C_in_T ([B x H x W x n_in]) and
/// returns the unclamped C_in_0.
template <typename Scalar>
Tensor<Scalar> reverse_trajectory(const ThetaParams<Scalar>& params, const std::vector<Label>& labels,
                                  Tensor<Scalar> cin, const SamplerConfig& config, const NoiseSchedule& schedule,
                                  Rng& rng, const SampleObserver<Scalar>& observe = {}) {
  config.validate(schedule.T);
  if (cin.rank() != 4) throw DimensionError("reverse_trajectory: C_in must be [B x H x W x C]");
  const Index batch = cin.dim(0);
  if (static_cast<Index>(labels.size()) != batch) throw DimensionError("one label per batch item is required");
  const bool guided = config.guidance != 1.0;
  Rng uncond_rng(config.seed ^ kUnconditionalStream);
  const std::vector<Label> null_labels(static_cast<std::size_t>(batch), Label::null());

  std::optional<PixCellGrid<Scalar>> prev;
  for (int t = schedule.T; t >= 1; --t) {
    PixCellGrid<Scalar> grid = ghg_init(prev, cin, t, schedule.T, config.mode, params.config.layout, rng);
    const std::vector<int> ts(static_cast<std::size_t>(batch), config.model_timestep(t));
    const int m = config.updates_at(t);
    PixCellGrid<Scalar> evolved = evolve(grid, Conditioning{ts, labels}, params, m, config.fire_rate, rng);
    Tensor<Scalar> eps = evolved.slice(Channel::Out);
    if (guided) {
      const auto uncond = evolve(grid, Conditioning{ts, null_labels}, params, m, config.fire_rate, uncond_rng);
      eps = cfg_combine(eps, uncond.slice(Channel::Out), config.guidance);
    }
    cin = reverse_step(cin, eps, t, schedule, config.variant, rng);
    if (!cin.all_finite()) throw SamplingError("non-finite C_in during sampling", t);
    if (observe) observe(t, grid, evolved);
    prev = std::move(evolved);
  }
  return cin;
}

/// Draws C_in_T ~ N(0, I) for each label and samples; output in [-1, 1] as
/// [B x H x W x n_in].
template <typename Scalar>
Tensor<Scalar> sample_batch(const ThetaParams<Scalar>& params, const std::vector<Label>& labels, Index height,
                            Index width, const SamplerConfig& config, const NoiseSchedule& schedule, Rng& rng,
                            const SampleObserver<Scalar>& observe = {}) {
  const auto batch = static_cast<Index>(labels.size());
  Tensor<Scalar> cin = Tensor<Scalar>::normal({batch, height, width, params.config.layout.n_in}, rng);
  Tensor<Scalar> out = reverse_trajectory(params, labels, std::move(cin), config, schedule, rng, observe);
  out.array() = out.array().max(Scalar(-1)).min(Scalar(1));
  return out;
}

/// Single image [H x W x n_in] sampled with a generator seeded from config.seed.
template <typename Scalar>
Tensor<Scalar> sample(const ThetaParams<Scalar>& params, const Label& label, Index height, Index width,
                      const SamplerConfig& config, const NoiseSchedule& schedule) {
  Rng rng(config.seed);
  auto out = sample_batch(params, std::vector<Label>{label}, height, width, config, schedule, rng);
  return out.reshaped({height, width, params.config.layout.n_in});
}

/// One sample per entry of `updates`, each from the same seed and therefore
/// the same initial noise.
template <typename Scalar>
std::vector<Tensor<Scalar>> m_sweep(const ThetaParams<Scalar>& params, const Label& label, Index height, Index width,
                                    const SamplerConfig& config, const NoiseSchedule& schedule,
                                    const std::vector<int>& updates) {
  for (int m : updates)
    if (m < 1) throw ConfigError("m_sweep values must be at least 1");
  std::vector<Tensor<Scalar>> out;
  for (int m : updates) {
    SamplerConfig c = config;
    c.updates = m;
    c.updates_per_t.clear();
    out.push_back(sample(params, label, height, width, c, schedule));
  }
  return out;
}

}  // namespace geca
