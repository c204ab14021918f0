#pragma once

#include <string>
#include <vector>

namespace geca {

enum class ScheduleKind { Linear, Cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Variance schedule indexed by timestep t = 0..T. Index 0 is the clean
/// limit (beta 0, alpha 1, alpha_bar 1). `alpha` is the per-step retention
/// 1 - beta and `alpha_bar` its cumulative product.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::Linear;
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// Posterior variance beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
  double posterior_variance(int t) const;
  void check_timestep(int t) const;
};

/// Linear: betas evenly spaced from 1e-4 to 2e-2, both scaled by 1000/T so
/// that short schedules still reach near-isotropic noise. Cosine: squared
/// cosine alpha_bar with offset 0.008. Betas are clipped to 0.999.
NoiseSchedule build_schedule(ScheduleKind kind, int T);

/// Schedule from explicit per-step betas (index 0 of `betas` is t = 1).
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

/// `steps` evenly spaced timesteps of `base` (always ending at base.T),
/// expressed as a schedule of their own with beta_k = 1 - abar(t_k)/abar(t_{k-1}).
/// timesteps[k - 1] is the base timestep behind respaced step k.
struct RespacedSchedule {
  NoiseSchedule schedule;
  std::vector<int> timesteps;
};

RespacedSchedule respace(const NoiseSchedule& base, int steps);

}  // namespace geca
