#include "dedmpc/pid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dedmpc/errors.hpp"

namespace dedmpc {

void PidGains::validate() const {
  auto check = [](double v, const char* field) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(field, "must be finite and non-negative");
  };
  check(Kp, "pid.Kp");
  check(Ki, "pid.Ki");
  check(Kd, "pid.Kd");
}

double pid_step(const PidGains& gains, PidState& state, double reference, double measurement,
                const PowerBounds& bounds) {
  if (!(state.dt > 0.0)) throw ContractError("pid: dt must be positive");
  const double e = reference - measurement;
  const double derivative = state.first ? 0.0 : (e - state.e_prev) / state.dt;
  const double base = state.u_prev + gains.Kp * e + gains.Kd * derivative;

  double integral = state.integral + e * state.dt;
  double u = base + gains.Ki * integral;
  const bool high = u > bounds.upper && e > 0.0;
  const bool low = u < bounds.lower && e < 0.0;
  if (high || low) {
    integral = state.integral;
    u = base + gains.Ki * integral;
  }
  u = std::clamp(u, bounds.lower, bounds.upper);

  state.integral = integral;
  state.e_prev = e;
  state.u_prev = u;
  state.first = false;
  return u;
}

TuneResult tune(const PidEvaluator& evaluate, const GainRange& range, int budget, std::uint64_t seed) {
  if (budget < 1) throw ContractError("tune: budget must be at least 1");
  for (const auto* r : {&range.Kp, &range.Ki, &range.Kd}) {
    if (!((*r)[0] > 0.0 && (*r)[1] >= (*r)[0])) throw ConfigError("pid.tuner.range", "bounds must satisfy 0 < lo <= hi");
  }
  std::mt19937_64 rng(seed);
  auto draw = [&](const std::array<double, 2>& r) {
    std::uniform_real_distribution<double> d(std::log(r[0]), std::log(r[1]));
    return std::exp(d(rng));
  };

  TuneResult out;
  out.mse = std::numeric_limits<double>::infinity();
  for (int i = 0; i < budget; ++i) {
    PidGains g;
    g.Kp = draw(range.Kp);
    g.Ki = draw(range.Ki);
    g.Kd = draw(range.Kd);
    double score = std::numeric_limits<double>::infinity();
    try {
      score = evaluate(g);
    } catch (const NumericalDivergence&) {
    }
    if (!std::isfinite(score)) score = std::numeric_limits<double>::infinity();
    out.candidates.push_back(g);
    out.scores.push_back(score);
    if (score < out.mse) {
      out.mse = score;
      out.gains = g;
    }
  }
  if (!std::isfinite(out.mse)) throw TuningFailed("every PID candidate diverged");
  return out;
}

}  // namespace dedmpc
