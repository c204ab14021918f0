#include "geca/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "geca/errors.hpp"

namespace geca {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "cosine") return ScheduleKind::Cosine;
  throw ConfigError("unknown schedule kind '" + name + "' (expected linear or cosine)");
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::Linear ? "linear" : "cosine"; }

double NoiseSchedule::posterior_variance(int t) const {
  check_timestep(t);
  if (beta[t] == 0.0) return 0.0;
  return beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 1 || t > T) throw InputError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw ConfigError("schedule needs at least one step");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.beta.assign(1, 0.0);
  s.alpha.assign(1, 1.0);
  s.alpha_bar.assign(1, 1.0);
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(s.alpha_bar.back() * (1.0 - b));
  }
  return s;
}

NoiseSchedule build_schedule(ScheduleKind kind, int T) {
  if (T < 2) throw ConfigError("schedule needs T >= 2");
  std::vector<double> betas(static_cast<std::size_t>(T));
  if (kind == ScheduleKind::Linear) {
    const double scale = 1000.0 / T;
    const double lo = scale * 1e-4, hi = scale * 2e-2;
    for (int i = 0; i < T; ++i) betas[static_cast<std::size_t>(i)] = std::min(lo + (hi - lo) * i / (T - 1), 0.999);
  } else {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / T + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int i = 0; i < T; ++i) betas[static_cast<std::size_t>(i)] = std::min(1.0 - f(i + 1) / f(i), 0.999);
  }
  NoiseSchedule s = schedule_from_betas(betas);
  s.kind = kind;
  return s;
}

RespacedSchedule respace(const NoiseSchedule& base, int steps) {
  if (steps < 1 || steps > base.T) throw ConfigError("respaced step count must lie in [1, T]");
  RespacedSchedule r;
  std::vector<double> betas;
  int prev = 0;
  for (int k = 1; k <= steps; ++k) {
    const int t = static_cast<int>(std::lround(static_cast<double>(k) * base.T / steps));
    r.timesteps.push_back(t);
    betas.push_back(1.0 - base.alpha_bar[static_cast<std::size_t>(t)] / base.alpha_bar[static_cast<std::size_t>(prev)]);
    prev = t;
  }
  r.schedule = schedule_from_betas(betas);
  r.schedule.kind = base.kind;
  return r;
}

}  // namespace geca
