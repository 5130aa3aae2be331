#pragma once

#include <cmath>
#include <vector>

#include "eovae/core/error.hpp"

namespace eovae::diffusion {

/// Variance-preserving schedule with a linear beta(t) in [beta_min, beta_max].
struct VPSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double t_min = 1e-3;
  double t_max = 0.999;

  void validate() const {
    if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0))
      throw ConfigError("schedule needs 0 < t_min < t_max < 1");
    if (!(beta_min >= 0.0 && beta_max > beta_min)) throw ConfigError("schedule needs 0 <= beta_min < beta_max");
  }

  void check(double t) const {
    if (!(t >= t_min && t <= t_max))
      throw DomainError("t=" + std::to_string(t) + " is outside [" + std::to_string(t_min) + ", " +
                        std::to_string(t_max) + "]");
  }

  double log_alpha(double t) const { return -0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min; }

  double alpha(double t) const {
    check(t);
    return std::exp(log_alpha(t));
  }

  /// sqrt(1 - alpha^2), via expm1 so small t keep their precision.
  double sigma(double t) const {
    check(t);
    return std::sqrt(-std::expm1(2.0 * log_alpha(t)));
  }

  /// (alpha^2 + sigma^2) / sigma^2, which is 1 / sigma^2 under VP.
  double edm_weight(double t) const {
    const double s = sigma(t);
    if (!(s >= 1e-8)) throw WeightOverflowError("sigma(t)=" + std::to_string(s) + " is below 1e-8 at t=" + std::to_string(t));
    return 1.0 / (s * s);
  }

  /// n points from t_max down to t_min (just t_max when n == 1).
  std::vector<double> sampling_grid(int n) const {
    if (n < 1) throw ConfigError("sampler needs at least one step");
    std::vector<double> ts(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ts[i] = n == 1 ? t_max : t_max + (t_min - t_max) * i / (n - 1.0);
    return ts;
  }
};

}  // namespace eovae::diffusion
