#include "dedmpc/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace dedmpc {

using Eigen::VectorXd;

const char* to_string(LbfgsStatus s) {
  switch (s) {
    case LbfgsStatus::converged:
      return "converged";
    case LbfgsStatus::max_iterations:
      return "max_iterations";
    case LbfgsStatus::line_search_failed:
      return "line_search_failed";
    case LbfgsStatus::non_finite:
      return "non_finite";
  }
  return "unknown";
}

namespace {

struct Probe {
  double a = 0.0;
  double f = 0.0;
  double d = 0.0;  // directional derivative
  VectorXd g;
};

// Minimizer of the cubic through (a, fa, da) and (b, fb, db), kept inside
// the interval with a safeguard.
double cubic_step(const Probe& lo, const Probe& hi) {
  const double d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (lo.a - hi.a);
  const double disc = d1 * d1 - lo.d * hi.d;
  double a = 0.5 * (lo.a + hi.a);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), hi.a - lo.a);
    const double t = hi.a - (hi.a - lo.a) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    if (std::isfinite(t)) a = t;
  }
  const double left = std::min(lo.a, hi.a);
  const double right = std::max(lo.a, hi.a);
  const double margin = 0.1 * (right - left);
  return std::clamp(a, left + margin, right - margin);
}

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& fn, VectorXd x0, const LbfgsOptions& opt) {
  LbfgsResult res;
  const auto n = x0.size();
  res.x = std::move(x0);
  res.grad.resize(n);
  res.f = fn(res.x, res.grad);
  res.evaluations = 1;
  if (!std::isfinite(res.f) || !res.grad.allFinite()) {
    res.status = LbfgsStatus::non_finite;
    return res;
  }

  std::deque<VectorXd> S;
  std::deque<VectorXd> Y;
  std::deque<double> rho;
  auto converged = [&](const VectorXd& g) {
    return g.size() == 0 || g.lpNorm<Eigen::Infinity>() <= opt.gtol;
  };
  if (converged(res.grad)) {
    res.status = LbfgsStatus::converged;
    return res;
  }

  VectorXd trial(n);
  VectorXd trial_g(n);
  for (res.iterations = 0; res.iterations < opt.max_iterations;) {
    // Two-loop recursion.
    VectorXd q = res.grad;
    std::vector<double> alpha(S.size());
    for (std::size_t i = S.size(); i-- > 0;) {
      alpha[i] = rho[i] * S[i].dot(q);
      q -= alpha[i] * Y[i];
    }
    if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double beta = rho[i] * Y[i].dot(q);
      q += (alpha[i] - beta) * S[i];
    }
    VectorXd dir = -q;
    double d0 = res.grad.dot(dir);
    if (!(d0 < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      dir = -res.grad;
      d0 = res.grad.dot(dir);
    }

    // Strong-Wolfe line search.
    const Probe start{0.0, res.f, d0, res.grad};
    auto eval = [&](double a) {
      trial = res.x + a * dir;
      Probe p;
      p.a = a;
      p.f = fn(trial, trial_g);
      ++res.evaluations;
      p.g = trial_g;
      p.d = trial_g.dot(dir);
      return p;
    };
    double a = S.empty() ? std::min(1.0, 1.0 / res.grad.lpNorm<Eigen::Infinity>()) : 1.0;
    Probe prev = start;
    Probe accepted;
    bool found = false;
    bool bad = false;
    for (int ls = 0; ls < opt.max_line_search && !found; ++ls) {
      Probe cur = eval(a);
      if (!std::isfinite(cur.f) || !cur.g.allFinite()) {
        a = 0.5 * (prev.a + a);
        if (ls + 1 == opt.max_line_search) bad = true;
        continue;
      }
      Probe lo;
      Probe hi;
      bool zoom = false;
      if (cur.f > start.f + opt.c1 * a * d0 || (ls > 0 && cur.f >= prev.f)) {
        lo = prev;
        hi = cur;
        zoom = true;
      } else if (std::abs(cur.d) <= -opt.c2 * d0) {
        accepted = cur;
        found = true;
        break;
      } else if (cur.d >= 0.0) {
        lo = cur;
        hi = prev;
        zoom = true;
      }
      if (zoom) {
        for (int z = ls; z < opt.max_line_search; ++z) {
          const double aj = cubic_step(lo, hi);
          Probe mid = eval(aj);
          if (!std::isfinite(mid.f) || mid.f > start.f + opt.c1 * aj * d0 || mid.f >= lo.f) {
            hi = mid;
          } else {
            if (std::abs(mid.d) <= -opt.c2 * d0) {
              accepted = mid;
              found = true;
              break;
            }
            if (mid.d * (hi.a - lo.a) >= 0.0) hi = lo;
            lo = mid;
          }
          if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, std::abs(lo.a))) break;
        }
        // Fall back to the best sufficient-decrease point seen.
        if (!found && lo.a > 0.0) {
          accepted = lo;
          found = true;
        }
        break;
      }
      prev = cur;
      a *= 2.0;
    }
    if (!found) {
      res.status = bad ? LbfgsStatus::non_finite : LbfgsStatus::line_search_failed;
      return res;
    }

    const VectorXd s = accepted.a * dir;
    const VectorXd y = accepted.g - res.grad;
    const double f_prev = res.f;
    res.x += s;
    res.f = accepted.f;
    res.grad = accepted.g;
    ++res.iterations;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm()) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    if (converged(res.grad) || f_prev - res.f <= opt.ftol * std::max(1.0, std::abs(res.f))) {
      res.status = LbfgsStatus::converged;
      return res;
    }
  }
  res.status = LbfgsStatus::max_iterations;
  return res;
}

}  // namespace dedmpc
