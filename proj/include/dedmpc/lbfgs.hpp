#pragma once

#include <functional>

#include <Eigen/Dense>

namespace dedmpc {

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 200;
  /// Converged when |grad|_inf <= gtol.
  double gtol = 1e-6;
  /// Also converged when an iteration lowers f by at most ftol * max(1, |f|).
  double ftol = 1e-12;
  int max_line_search = 30;
  double c1 = 1e-4;
  double c2 = 0.9;
};

enum class LbfgsStatus { converged, max_iterations, line_search_failed, non_finite };

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::max_iterations;
  bool success() const { return status == LbfgsStatus::converged; }
};

/// Returns f(x) and writes the gradient into the second argument.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Limited-memory BFGS with a strong-Wolfe line search (bracketing and
/// cubic-interpolation zoom).
LbfgsResult lbfgs_minimize(const Objective& fn, Eigen::VectorXd x0, const LbfgsOptions& options = {});

const char* to_string(LbfgsStatus s);

}  // namespace dedmpc
