#include "dedmpc/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "dedmpc/errors.hpp"

namespace dedmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void MpcConfig::validate() const {
  if (horizon < 1) throw ConfigError("mpc.horizon", "must be at least 1");
  if (!(Q >= 0.0)) throw ConfigError("mpc.Q", "must be non-negative");
  if (!(R >= 0.0)) throw ConfigError("mpc.R", "must be non-negative");
  if (!(depth_lb < depth_ub)) throw ConfigError("mpc.depth_bounds", "lower bound must be below upper bound");
  if (!(bounds.lower < bounds.upper)) throw ConfigError("mpc.power_bounds", "lower bound must be below upper bound");
  if (!(mu0 > 0.0)) throw ConfigError("mpc.mu0", "must be positive");
  if (!(mu_growth > 1.0)) throw ConfigError("mpc.mu_growth", "must exceed 1");
  if (max_outer < 1) throw ConfigError("mpc.max_outer", "must be at least 1");
  if (!(violation_tol >= 0.0)) throw ConfigError("mpc.violation_tol", "must be non-negative");
  if (lbfgs.memory < 1) throw ConfigError("mpc.lbfgs_memory", "must be at least 1");
  if (lbfgs.max_iterations < 1) throw ConfigError("mpc.max_inner", "must be at least 1");
  if (!(lbfgs.gtol > 0.0)) throw ConfigError("mpc.gtol", "must be positive");
}

const char* to_string(MpcStatus s) {
  switch (s) {
    case MpcStatus::converged:
      return "converged";
    case MpcStatus::fallback_used:
      return "fallback_used";
    case MpcStatus::failed:
      return "failed";
  }
  return "unknown";
}

VectorXd to_power(const VectorXd& v, const PowerBounds& b) {
  VectorXd u(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-v(i)));
    u(i) = std::clamp(b.lower + (b.upper - b.lower) * s, b.lower, b.upper);
  }
  return u;
}

VectorXd to_latent(const VectorXd& u, const PowerBounds& b, double clip) {
  VectorXd v(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double s = (u(i) - b.lower) / (b.upper - b.lower);
    const double logit = (s <= 0.0) ? -clip : (s >= 1.0 ? clip : std::log(s / (1.0 - s)));
    v(i) = std::clamp(logit, -clip, clip);
  }
  return v;
}

MatrixXd future_covariates(const MpcProblem& problem, const VectorXd& u) {
  const auto p = problem.future_geometry.rows();
  if (problem.future_geometry.cols() != 3 || u.size() != p) throw ContractError("mpc: future geometry must be p x 3");
  MatrixXd f(p, kCovariateChannels);
  f.leftCols(3) = problem.future_geometry;
  f.col(3) = u;
  return f;
}

namespace {

double step_weight(const MpcProblem& problem, Eigen::Index i) {
  return problem.tracking_weight.size() ? problem.tracking_weight(i) : 1.0;
}

}  // namespace

double tracking_cost(const MpcProblem& problem, const VectorXd& u, const VectorXd& predicted_temp,
                     const MpcConfig& cfg) {
  double f = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double e = predicted_temp(i) - problem.reference(i);
    const double du = u(i) - (i == 0 ? problem.u_prev : u(i - 1));
    f += cfg.Q * step_weight(problem, i) * e * e + cfg.R * du * du;
  }
  return f;
}

double al_penalty(double g, double lambda, double mu) {
  const double a = std::max(0.0, lambda + mu * g);
  return (a * a - lambda * lambda) / (2.0 * mu);
}

namespace {

void check_problem(const MpcProblem& problem, const TideModel& model, const MpcConfig& cfg) {
  const TideConfig& mc = model.config();
  const auto p = static_cast<Eigen::Index>(mc.p);
  if (mc.p != cfg.horizon) throw ContractError("mpc: model horizon does not match the controller horizon");
  if (problem.reference.size() != p || problem.future_geometry.rows() != p ||
      static_cast<Eigen::Index>(problem.mask.size()) != p ||
      (problem.tracking_weight.size() != 0 && problem.tracking_weight.size() != p)) {
    throw ContractError("mpc: problem arrays must have horizon length");
  }
}

bool constraints_apply(const MpcProblem& problem, const TideModel& model, const MpcConfig& cfg) {
  if (!cfg.constrained || model.config().target_channels < 2) return false;
  return std::any_of(problem.mask.begin(), problem.mask.end(), [](bool b) { return b; });
}

MatrixXd median_at(const MpcProblem& problem, const VectorXd& u, const TideModel& model) {
  return model.predict_median(problem.past_targets, problem.past_covariates, future_covariates(problem, u));
}

struct Multipliers {
  VectorXd lb;
  VectorXd ub;
  double mu = 0.0;
};

// Augmented Lagrangian value and gradient with respect to u.
double al_with_gradient(const MpcProblem& problem, const VectorXd& u, const Multipliers* m, const TideModel& model,
                        const MpcConfig& cfg, VectorXd& grad_u) {
  TideSession session(model, problem.past_targets, problem.past_covariates, future_covariates(problem, u));
  const MatrixXd med = session.median();
  const auto p = u.size();
  MatrixXd seed = MatrixXd::Zero(med.rows(), med.cols());
  double f = tracking_cost(problem, u, med.col(0), cfg);
  for (Eigen::Index j = 0; j < p; ++j) {
    seed(j, 0) = 2.0 * cfg.Q * step_weight(problem, j) * (med(j, 0) - problem.reference(j));
  }
  if (m) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!problem.mask[static_cast<std::size_t>(j)]) continue;
      const double d = med(j, 1);
      const double g_lb = cfg.depth_lb - d;
      const double g_ub = d - cfg.depth_ub;
      f += al_penalty(g_lb, m->lb(j), m->mu) + al_penalty(g_ub, m->ub(j), m->mu);
      seed(j, 1) = -std::max(0.0, m->lb(j) + m->mu * g_lb) + std::max(0.0, m->ub(j) + m->mu * g_ub);
    }
  }
  if (!std::isfinite(f)) return std::numeric_limits<double>::quiet_NaN();
  grad_u = session.backward_median(seed).future_covariates.col(3);
  for (Eigen::Index i = 0; i < p; ++i) {
    const double du = u(i) - (i == 0 ? problem.u_prev : u(i - 1));
    grad_u(i) += 2.0 * cfg.R * du;
    if (i > 0) grad_u(i - 1) -= 2.0 * cfg.R * du;
  }
  return f;
}

struct Attempt {
  bool ok = false;
  VectorXd u;
  int outer = 0;
  int inner = 0;
  int evaluations = 0;
};

Attempt run_attempt(const MpcProblem& problem, const TideModel& model, const MpcConfig& cfg, VectorXd v,
                    bool constrained) {
  Attempt a;
  const auto p = v.size();
  Multipliers m{VectorXd::Zero(p), VectorXd::Zero(p), cfg.mu0};
  const double span = cfg.bounds.upper - cfg.bounds.lower;
  const int outer_budget = constrained ? cfg.max_outer : 1;
  for (int outer = 0; outer < outer_budget; ++outer) {
    const Objective fn = [&](const VectorXd& x, VectorXd& grad) {
      const VectorXd u = to_power(x, cfg.bounds);
      VectorXd gu;
      const double f = al_with_gradient(problem, u, constrained ? &m : nullptr, model, cfg, gu);
      if (!std::isfinite(f)) return f;
      grad.resize(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x(i)));
        grad(i) = gu(i) * span * s * (1.0 - s);
      }
      return f;
    };
    const LbfgsResult r = lbfgs_minimize(fn, v, cfg.lbfgs);
    ++a.outer;
    a.inner += r.iterations;
    a.evaluations += r.evaluations;
    v = r.x;
    a.u = to_power(v, cfg.bounds);
    if (!r.success()) return a;
    if (!constrained) break;
    const MatrixXd med = median_at(problem, a.u, model);
    if (max_depth_violation(problem, med.col(1), cfg) <= cfg.violation_tol) break;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!problem.mask[static_cast<std::size_t>(j)]) continue;
      m.lb(j) = std::max(0.0, m.lb(j) + m.mu * (cfg.depth_lb - med(j, 1)));
      m.ub(j) = std::max(0.0, m.ub(j) + m.mu * (med(j, 1) - cfg.depth_ub));
    }
    m.mu *= cfg.mu_growth;
  }
  a.ok = true;
  return a;
}

}  // namespace

double objective(const MpcProblem& problem, const VectorXd& u, const TideModel& model, const MpcConfig& cfg) {
  check_problem(problem, model, cfg);
  const MatrixXd med = median_at(problem, u, model);
  if (!med.allFinite()) throw ContractError("mpc: non-finite prediction");
  return tracking_cost(problem, u, med.col(0), cfg);
}

double augmented_lagrangian(const MpcProblem& problem, const VectorXd& u, const VectorXd& lambda_lb,
                            const VectorXd& lambda_ub, double mu, const TideModel& model, const MpcConfig& cfg) {
  check_problem(problem, model, cfg);
  if (!(mu > 0.0) || (lambda_lb.array() < 0.0).any() || (lambda_ub.array() < 0.0).any()) {
    throw ContractError("mpc: multipliers must be non-negative and mu positive");
  }
  const MatrixXd med = median_at(problem, u, model);
  double f = tracking_cost(problem, u, med.col(0), cfg);
  if (model.config().target_channels < 2) return f;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (!problem.mask[static_cast<std::size_t>(j)]) continue;
    f += al_penalty(cfg.depth_lb - med(j, 1), lambda_lb(j), mu) + al_penalty(med(j, 1) - cfg.depth_ub, lambda_ub(j), mu);
  }
  return f;
}

double max_depth_violation(const MpcProblem& problem, const VectorXd& depth, const MpcConfig& cfg) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < depth.size(); ++j) {
    if (!problem.mask[static_cast<std::size_t>(j)]) continue;
    worst = std::max({worst, cfg.depth_lb - depth(j), depth(j) - cfg.depth_ub});
  }
  return worst;
}

MpcSolution solve(const MpcProblem& problem, const TideModel& model, const MpcConfig& cfg,
                  const std::optional<VectorXd>& warm_start) {
  const auto t0 = std::chrono::steady_clock::now();
  check_problem(problem, model, cfg);
  const bool constrained = constraints_apply(problem, model, cfg);
  const auto p = problem.reference.size();
  const VectorXd v_default = to_latent(VectorXd::Constant(p, cfg.bounds.mid()), cfg.bounds);

  MpcSolution sol;
  Attempt a;
  if (warm_start) {
    if (warm_start->size() != p) throw ContractError("mpc: warm start must have horizon length");
    a = run_attempt(problem, model, cfg, to_latent(*warm_start, cfg.bounds), constrained);
    sol.status = MpcStatus::converged;
  }
  if (!a.ok) {
    const Attempt first = a;
    a = run_attempt(problem, model, cfg, v_default, constrained);
    a.inner += first.inner;
    a.outer += first.outer;
    a.evaluations += first.evaluations;
    sol.status = warm_start ? MpcStatus::fallback_used : MpcStatus::converged;
  }
  if (!a.ok) sol.status = MpcStatus::failed;

  sol.u_opt = a.u.size() == p ? a.u : VectorXd::Constant(p, cfg.bounds.mid());
  sol.outer_iterations = a.outer;
  sol.inner_iterations = a.inner;
  sol.evaluations = a.evaluations;
  sol.predicted = median_at(problem, sol.u_opt, model);
  sol.objective = tracking_cost(problem, sol.u_opt, sol.predicted.col(0), cfg);
  if (model.config().target_channels > 1) sol.max_violation = max_depth_violation(problem, sol.predicted.col(1), cfg);
  sol.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

VectorXd warm_start_shift(const VectorXd& previous) {
  if (previous.size() == 0) return previous;
  VectorXd out(previous.size());
  out.head(previous.size() - 1) = previous.tail(previous.size() - 1);
  out(previous.size() - 1) = previous(previous.size() - 1);
  return out;
}

}  // namespace dedmpc
