#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dedmpc/errors.hpp"
#include "dedmpc/pid.hpp"

using namespace dedmpc;

namespace {

PidState state_at(double u_prev) {
  PidState s;
  s.u_prev = u_prev;
  return s;
}

// tau dx/dt = -(x - 300) + 1.6 u, stepped exactly over one sampling interval.
struct FirstOrderPlant {
  double tau = 0.2;
  double gain = 1.6;
  double x = 300.0 + 1.6 * 504.0;
  void step(double u, double dt) {
    const double target = 300.0 + gain * u;
    x = target + (x - target) * std::exp(-dt / tau);
  }
};

struct StepResponse {
  double mse = 0.0;
  double steady_error = 0.0;  // mean |e| over the last fifth, K
};

StepResponse run_toy(const PidGains& g, double reference, int samples = 300) {
  FirstOrderPlant plant;
  PidState s = state_at(504.0);
  StepResponse out;
  int tail = 0;
  for (int k = 0; k < samples; ++k) {
    const double e = reference - plant.x;
    out.mse += e * e;
    if (k >= samples - samples / 5) {
      out.steady_error += std::abs(e);
      ++tail;
    }
    plant.step(pid_step(g, s, reference, plant.x, PowerBounds{}), s.dt);
    if (!std::isfinite(plant.x)) return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  }
  out.mse /= samples;
  out.steady_error /= tail;
  return out;
}

}  // namespace

TEST_SUITE("pid_controller") {

TEST_CASE("hand-evaluated updates") {
  const PowerBounds b;
  PidState s = state_at(600.0);
  CHECK(pid_step({1.0, 0.0, 0.0}, s, 1010.0, 1000.0, b) == doctest::Approx(610.0).epsilon(1e-14));

  PidState z = state_at(612.5);
  for (int k = 0; k < 5; ++k) CHECK(pid_step({0.0, 0.0, 0.0}, z, 1000.0 + 50.0 * k, 900.0, b) == 612.5);

  // Constant error: the derivative term vanishes after the first step.
  PidState with_d = state_at(600.0);
  PidState without_d = state_at(600.0);
  pid_step({0.2, 0.5, 0.3}, with_d, 1000.0, 990.0, b);
  pid_step({0.2, 0.5, 0.0}, without_d, 1000.0, 990.0, b);
  CHECK(pid_step({0.2, 0.5, 0.3}, with_d, 1000.0, 990.0, b) == pid_step({0.2, 0.5, 0.0}, without_d, 1000.0, 990.0, b));
}

TEST_CASE("incremental form without clamping") {
  const PidGains g{0.3, 0.8, 0.004};
  PidState s = state_at(620.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> E(-20.0, 20.0);
  double integral = 0.0;
  double e_prev = 0.0;
  bool first = true;
  for (int k = 0; k < 50; ++k) {
    const double e = E(rng);
    const double u_prev = s.u_prev;
    const double u = pid_step(g, s, 1000.0, 1000.0 - e, PowerBounds{});
    integral += e * s.dt;
    const double expected = g.Kp * e + g.Ki * integral + (first ? 0.0 : g.Kd * (e - e_prev) / s.dt);
    CHECK(u - u_prev == doctest::Approx(expected).epsilon(1e-9));
    e_prev = e;
    first = false;
  }
}

TEST_CASE("clamp and anti-windup") {
  const PowerBounds b;
  const PidGains g{2.0, 5.0, 0.01};
  PidState s = state_at(740.0);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> E(-200.0, 200.0);
  for (int k = 0; k < 200; ++k) {
    const double u = pid_step(g, s, 1000.0, 1000.0 - E(rng), b);
    CHECK(u >= 504.0);
    CHECK(u <= 750.0);
  }
  // Saturated high with a positive error: the integral is held.
  PidState h = state_at(749.0);
  h.integral = 1.5;
  CHECK(pid_step({1.0, 1.0, 0.0}, h, 1100.0, 1000.0, b) == 750.0);
  CHECK(h.integral == 1.5);
  // Saturated high but the error points down: the integral moves.
  PidState d = state_at(750.0);
  d.integral = 100.0;
  pid_step({0.0, 1.0, 0.0}, d, 990.0, 1000.0, b);
  CHECK(d.integral == doctest::Approx(100.0 - 10.0 * d.dt));
  PidState l = state_at(505.0);
  CHECK(pid_step({1.0, 0.0, 0.0}, l, 900.0, 1000.0, b) == 504.0);
}

TEST_CASE("random search") {
  int calls = 0;
  const PidEvaluator quadratic = [&](const PidGains& g) {
    ++calls;
    return std::pow(std::log(g.Kp / 0.5), 2) + std::pow(std::log(g.Ki / 2.0), 2) + std::pow(std::log(g.Kd / 0.01), 2);
  };
  const TuneResult one = tune(quadratic, GainRange{}, 1, 4);
  CHECK(calls == 1);
  REQUIRE(one.candidates.size() == 1);
  CHECK(one.gains.Kp == one.candidates[0].Kp);
  CHECK(one.mse == one.scores[0]);

  const GainRange range;
  const TuneResult r = tune(quadratic, range, 60, 11);
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    CHECK(r.mse <= r.scores[i]);
    CHECK(r.candidates[i].Kp >= range.Kp[0]);
    CHECK(r.candidates[i].Kp <= range.Kp[1]);
    CHECK(r.candidates[i].Kd >= range.Kd[0]);
    CHECK(r.candidates[i].Kd <= range.Kd[1]);
  }
  const TuneResult again = tune(quadratic, range, 60, 11);
  CHECK(again.gains.Kp == r.gains.Kp);
  CHECK(again.gains.Ki == r.gains.Ki);
  CHECK(again.gains.Kd == r.gains.Kd);
  CHECK(tune(quadratic, range, 60, 12).gains.Kp != r.gains.Kp);

  // Diverged candidates are skipped; all diverged is an error.
  int n = 0;
  const PidEvaluator some = [&](const PidGains&) -> double {
    if (n++ % 2 == 0) throw NumericalDivergence(1, "diverged");
    return static_cast<double>(n);
  };
  const TuneResult s = tune(some, range, 6, 1);
  CHECK(s.mse == 2.0);
  CHECK(std::isinf(s.scores[0]));
  const PidEvaluator never = [](const PidGains&) { return std::numeric_limits<double>::quiet_NaN(); };
  CHECK_THROWS_AS(tune(never, range, 5, 1), TuningFailed);
  CHECK_THROWS_AS(tune(quadratic, range, 0, 1), ContractError);
}

TEST_CASE("tuned gains hold a first-order plant on its reference") {
  const double reference = 1250.0;  // needs 593.75 W at steady state
  const PidEvaluator mse = [&](const PidGains& g) { return run_toy(g, reference, 150).mse; };
  GainRange range;
  range.Kp = {0.01, 2.0};
  range.Ki = {1e-4, 1.0};
  range.Kd = {1e-5, 1e-2};
  const TuneResult r = tune(mse, range, 40, 5);
  const StepResponse resp = run_toy(r.gains, reference);
  const double step = reference - (300.0 + 1.6 * 504.0);
  CHECK(resp.steady_error < 0.02 * step);
}

TEST_CASE("invalid gains") {
  CHECK_THROWS_AS((PidGains{-1.0, 0.0, 0.0}.validate()), ConfigError);
  CHECK_THROWS_AS((PidGains{0.0, std::nan(""), 0.0}.validate()), ConfigError);
  PidState s;
  s.dt = 0.0;
  CHECK_THROWS_AS(pid_step({}, s, 1.0, 1.0, PowerBounds{}), ContractError);
}

}
