#pragma once

// Linear time schedule: rate(t) = beta_min + t*(beta_max - beta_min)/horizon.
// The transition kernels and samplers consume the integrated rate
// B(t) = int_0^t rate(u) du, which has the closed form below.

#include <cmath>
#include <stdexcept>

namespace fpdiff {

// Samplers and training clamp time to [kTimeEps, horizon]: the transition
// covariance degenerates at t = 0.
inline constexpr double kTimeEps = 1e-5;

struct TimeSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double horizon = 1.0;

  void validate() const {
    if (!(beta_min > 0.0) || !(beta_max > beta_min) || !(horizon > 0.0))
      throw std::domain_error("TimeSchedule: need beta_max > beta_min > 0 and horizon > 0");
  }

  void check_time(double t) const {
    if (!(t >= 0.0) || !(t <= horizon))
      throw std::domain_error("TimeSchedule: t outside [0, horizon]");
  }

  double rate(double t) const {
    validate();
    check_time(t);
    return beta_min + t * (beta_max - beta_min) / horizon;
  }

  double integral(double t) const {
    validate();
    check_time(t);
    return beta_min * t + t * t * (beta_max - beta_min) / (2.0 * horizon);
  }

  // Inverse of integral(): the time at which B(t) = b. b must lie in
  // [0, integral(horizon)].
  double time_at_integral(double b) const {
    validate();
    if (!(b >= 0.0) || b > integral(horizon) * (1.0 + 1e-12))
      throw std::domain_error("TimeSchedule: integrated time outside range");
    const double slope = (beta_max - beta_min) / horizon;
    const double t = (-beta_min + std::sqrt(beta_min * beta_min + 2.0 * slope * b)) / slope;
    return std::min(t, horizon);
  }
};

inline double schedule_rate(const TimeSchedule& s, double t) { return s.rate(t); }
inline double schedule_integral(const TimeSchedule& s, double t) { return s.integral(t); }

}  // namespace fpdiff
