#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "dedmpc/profile_gen.hpp"

namespace dedmpc {

struct PidGains {
  double Kp = 0.0;  // W/K
  double Ki = 0.0;  // W/(K s)
  double Kd = 0.0;  // W s/K

  void validate() const;
};

struct PidState {
  double u_prev = 627.0;    // W
  double e_prev = 0.0;      // K
  double integral = 0.0;    // K s
  double dt = 0.0357;       // s
  bool first = true;        // no derivative term until an error has been seen
};

/// Incremental PID update
///   u_k = u_{k-1} + Kp e_k + Ki I_k + Kd (e_k - e_{k-1}) / dt,  I_k = I_{k-1} + e_k dt
/// with e_k = reference - measurement, clamped to the bounds. The integral is
/// held when the clamp is active in the direction of the error.
double pid_step(const PidGains& gains, PidState& state, double reference, double measurement,
                const PowerBounds& bounds);

struct GainRange {
  std::array<double, 2> Kp{0.05, 5.0};
  std::array<double, 2> Ki{0.01, 50.0};
  std::array<double, 2> Kd{1e-4, 0.05};
};

struct TuneResult {
  PidGains gains;
  double mse = 0.0;
  std::vector<PidGains> candidates;
  std::vector<double> scores;  // +inf for diverged candidates
};

/// Returns the closed-loop tracking MSE for a gain set; may throw
/// NumericalDivergence or return a non-finite value to signal divergence.
using PidEvaluator = std::function<double(const PidGains&)>;

/// Log-uniform random search; deterministic in `seed`.
TuneResult tune(const PidEvaluator& evaluate, const GainRange& range, int budget, std::uint64_t seed);

}  // namespace dedmpc
