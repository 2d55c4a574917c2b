#pragma once

#include <cmath>
#include <stdexcept>

namespace energyflow {

/// Variance-exploding geometric schedule
///   sigma(t) = sigma_min^(1 - t/T) * sigma_max^(t/T).
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  double horizon = 1.0;

  void validate() const {
    if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw std::invalid_argument("NoiseSchedule: need 0 < sigma_min < sigma_max");
    if (!(horizon > 0.0)) throw std::invalid_argument("NoiseSchedule: horizon must be positive");
  }

  double log_ratio() const { return std::log(sigma_max / sigma_min); }

  double sigma(double t) const {
    check(t);
    return sigma_min * std::exp((t / horizon) * log_ratio());
  }

  /// d[sigma^2]/dt = sigma^2 * (2/T) * ln(sigma_max/sigma_min).
  double dsigma2_dt(double t) const {
    const double s = sigma(t);
    return s * s * (2.0 / horizon) * log_ratio();
  }

  /// Loss weight lambda(t) = sigma^2(t).
  double weight(double t) const {
    const double s = sigma(t);
    return s * s;
  }

 private:
  void check(double t) const {
    if (!(t >= 0.0 && t <= horizon)) throw std::invalid_argument("NoiseSchedule: t outside [0, T]");
  }
};

}  // namespace energyflow
