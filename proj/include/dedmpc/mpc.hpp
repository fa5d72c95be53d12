#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dedmpc/lbfgs.hpp"
#include "dedmpc/profile_gen.hpp"
#include "dedmpc/tide.hpp"

namespace dedmpc {

struct MpcConfig {
  int horizon = 20;
  double Q = 1.0;
  double R = 10.0;
  double depth_lb = 0.075;  // mm
  double depth_ub = 0.225;  // mm
  PowerBounds bounds;
  int activation_layer = 5;
  double corner_threshold = 2.0;  // mm
  bool constrained = true;

  double mu0 = 10.0;
  double mu_growth = 5.0;
  int max_outer = 4;
  double violation_tol = 5e-3;  // mm

  LbfgsOptions lbfgs{10, 200, 1e-6};

  void validate() const;
};

struct MpcProblem {
  Eigen::MatrixXd past_targets;     // w x C
  Eigen::MatrixXd past_covariates;  // w x 4, applied u in the last column
  Eigen::MatrixXd future_geometry;  // p x 3: d_x, d_y, z
  Eigen::VectorXd reference;        // p, K
  double u_prev = 627.0;
  std::vector<bool> mask;           // p, true where depth bounds apply
  /// Per-step tracking weight multiplying Q; empty means all ones.
  Eigen::VectorXd tracking_weight;
};

enum class MpcStatus { converged, fallback_used, failed };
const char* to_string(MpcStatus s);

struct MpcSolution {
  Eigen::VectorXd u_opt;
  double objective = 0.0;
  MpcStatus status = MpcStatus::failed;
  int outer_iterations = 0;
  int inner_iterations = 0;
  int evaluations = 0;
  double solve_time = 0.0;      // s
  Eigen::MatrixXd predicted;    // p x C median forecast at u_opt
  double max_violation = 0.0;   // mm, over masked steps
};

/// Future covariates p x 4 from the path geometry and a candidate input.
Eigen::MatrixXd future_covariates(const MpcProblem& problem, const Eigen::VectorXd& u);

/// Tracking plus input-increment cost for a given median temperature forecast.
double tracking_cost(const MpcProblem& problem, const Eigen::VectorXd& u, const Eigen::VectorXd& predicted_temp,
                     const MpcConfig& cfg);
double objective(const MpcProblem& problem, const Eigen::VectorXd& u, const TideModel& model, const MpcConfig& cfg);

/// (1/(2 mu)) * (max(0, lambda + mu*g)^2 - lambda^2)
double al_penalty(double g, double lambda, double mu);

double augmented_lagrangian(const MpcProblem& problem, const Eigen::VectorXd& u, const Eigen::VectorXd& lambda_lb,
                            const Eigen::VectorXd& lambda_ub, double mu, const TideModel& model, const MpcConfig& cfg);

/// Largest bound violation of a depth forecast over masked steps (0 if none).
double max_depth_violation(const MpcProblem& problem, const Eigen::VectorXd& depth, const MpcConfig& cfg);

MpcSolution solve(const MpcProblem& problem, const TideModel& model, const MpcConfig& cfg,
                  const std::optional<Eigen::VectorXd>& warm_start = std::nullopt);

Eigen::VectorXd warm_start_shift(const Eigen::VectorXd& previous);

/// Logistic map between unconstrained v and u in the power bounds.
Eigen::VectorXd to_power(const Eigen::VectorXd& v, const PowerBounds& b);
Eigen::VectorXd to_latent(const Eigen::VectorXd& u, const PowerBounds& b, double clip = 12.0);

}  // namespace dedmpc
