#include "dedmpc/control_loop.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>

#include "dedmpc/errors.hpp"

namespace dedmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::mpc:
      return "mpc";
    case ControllerKind::mpc_unconstrained:
      return "mpc-unconstrained";
    case ControllerKind::pid:
      return "pid";
    case ControllerKind::open_loop:
      return "open-loop";
  }
  return "unknown";
}

ControllerKind controller_from_string(const std::string& s) {
  if (s == "mpc") return ControllerKind::mpc;
  if (s == "mpc-unconstrained" || s == "mpc_unconstrained") return ControllerKind::mpc_unconstrained;
  if (s == "pid") return ControllerKind::pid;
  if (s == "open-loop" || s == "open_loop") return ControllerKind::open_loop;
  throw ConfigError("controller", "unknown controller '" + s + "'");
}

void ReferenceSpec::validate() const {
  if (times.empty() || times.size() != values.size()) {
    throw ConfigError("reference", "times and values must be non-empty and of equal length");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw ConfigError("reference.times", "must be strictly increasing");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ConfigError("reference.values", "must be finite");
  }
}

double ReferenceSpec::operator()(double t) const {
  if (t <= times.front()) return values.front();
  if (t >= times.back()) return values.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const auto i = static_cast<std::size_t>(it - times.begin()) - 1;
  if (mode == Mode::step) return values[i];
  const double s = (t - times[i]) / (times[i + 1] - times[i]);
  return values[i] + s * (values[i + 1] - values[i]);
}

void RunConfig::validate() const {
  setup.validate();
  reference.validate();
  mpc.validate();
  pid.validate();
  if (!(bounds.lower < bounds.upper)) throw ConfigError("bounds", "lower bound must be below upper bound");
  if (!(warmup_u >= bounds.lower && warmup_u <= bounds.upper)) throw ConfigError("run.warmup_u", "must lie in the power bounds");
  if (warmup_samples < 1) throw ConfigError("run.warmup_samples", "must be at least 1");
  if (smoothing_span < 1) throw ConfigError("run.smoothing_span", "must be at least 1");
  if (max_consecutive_failures < 0) throw ConfigError("run.max_consecutive_failures", "must be non-negative");
  if (!(transition_window >= 0.0)) throw ConfigError("run.transition_window", "must be non-negative");
}

bool constraint_applies(const SampleGeometry& g, int activation_layer, double corner_threshold) {
  return g.pose.enabled && g.pose.layer >= activation_layer && !near_corner(g.cov, corner_threshold);
}

RunLog run(const RunConfig& cfg, const TideModel* model) {
  cfg.validate();
  const bool is_mpc = cfg.kind == ControllerKind::mpc || cfg.kind == ControllerKind::mpc_unconstrained;
  if (is_mpc && !model) throw ContractError("run: MPC controllers need a trained model");

  MpcConfig mpc_cfg = cfg.mpc;
  mpc_cfg.bounds = cfg.bounds;
  if (cfg.kind == ControllerKind::mpc_unconstrained) mpc_cfg.constrained = false;
  int w = 0;
  int p = 0;
  int C = 2;
  if (is_mpc) {
    w = model->config().w;
    p = model->config().p;
    C = model->config().target_channels;
    mpc_cfg.horizon = p;
  }
  const int warmup = std::max(cfg.warmup_samples, w);

  ProcessSimulator sim(cfg.setup);
  const std::size_t N = sim.num_samples();
  const double period = cfg.setup.sample_period();
  auto end_time = [&](std::size_t k) { return static_cast<double>(k + 1) * period; };

  RunLog log;
  log.steps.reserve(N);
  std::deque<RawExtraction> recent;
  std::vector<double> temps;
  std::vector<double> depths;
  std::vector<SampleGeometry> geoms;
  std::vector<double> inputs;

  PidState pid_state;
  pid_state.dt = period;
  bool pid_started = false;
  bool was_idle = false;
  std::optional<VectorXd> warm;
  int consecutive_failures = 0;
  double u_prev = cfg.warmup_u;

  for (std::size_t k = 0; k < N; ++k) {
    const SampleGeometry g = sim.geometry_of(k);
    StepRecord rec;
    rec.sample = k;
    rec.time = end_time(k);
    rec.reference = cfg.reference(rec.time);
    rec.laser_on = g.pose.enabled;
    rec.layer = g.pose.layer;
    rec.near_corner = near_corner(g.cov, mpc_cfg.corner_threshold);
    rec.constraint_active = constraint_applies(g, mpc_cfg.activation_layer, mpc_cfg.corner_threshold);
    rec.controlled = static_cast<int>(k) >= warmup;
    {
      const double tau = rec.time - (g.pose.layer - 1) * cfg.setup.path.layer_period();
      rec.transition = tau < cfg.transition_window || tau > cfg.setup.path.layer_scan_time() - cfg.transition_window;
    }

    double u = u_prev;
    if (!rec.controlled) {
      u = cfg.warmup_u;
      rec.status = "warmup";
    } else if (!g.pose.enabled) {
      rec.status = "idle";
      if (warm) warm = warm_start_shift(*warm);
      was_idle = true;
    } else if (cfg.kind == ControllerKind::open_loop) {
      u = cfg.open_loop_input ? std::clamp(cfg.open_loop_input(end_time(k) - period), cfg.bounds.lower, cfg.bounds.upper)
                              : cfg.warmup_u;
      rec.status = "open_loop";
    } else if (cfg.kind == ControllerKind::pid) {
      if (!pid_started) {
        pid_state.u_prev = u_prev;
        pid_state.integral = 0.0;
        pid_state.first = true;
        pid_started = true;
      } else if (was_idle) {
        pid_state.first = true;
      }
      u = pid_step(cfg.pid, pid_state, cfg.reference(end_time(k - 1)), temps.back(), cfg.bounds);
      rec.status = "pid";
    } else {
      MpcProblem prob;
      prob.past_targets.resize(w, C);
      prob.past_covariates.resize(w, kCovariateChannels);
      for (int t = 0; t < w; ++t) {
        const std::size_t j = k - static_cast<std::size_t>(w) + static_cast<std::size_t>(t);
        prob.past_targets(t, 0) = temps[j];
        if (C > 1) prob.past_targets(t, 1) = depths[j];
        prob.past_covariates(t, 0) = geoms[j].cov.d_x;
        prob.past_covariates(t, 1) = geoms[j].cov.d_y;
        prob.past_covariates(t, 2) = geoms[j].cov.z;
        prob.past_covariates(t, 3) = inputs[j];
      }
      prob.future_geometry.resize(p, 3);
      prob.reference.resize(p);
      prob.tracking_weight.resize(p);
      prob.mask.assign(static_cast<std::size_t>(p), false);
      for (int i = 0; i < p; ++i) {
        const std::size_t j = k + static_cast<std::size_t>(i);
        const SampleGeometry fg = sim.geometry_of(j);
        prob.future_geometry(i, 0) = fg.cov.d_x;
        prob.future_geometry(i, 1) = fg.cov.d_y;
        prob.future_geometry(i, 2) = fg.cov.z;
        prob.reference(i) = cfg.reference(end_time(j));
        // Laser-off steps cannot be steered; they carry no tracking cost.
        prob.tracking_weight(i) = fg.pose.enabled ? 1.0 : 0.0;
        prob.mask[static_cast<std::size_t>(i)] =
            constraint_applies(fg, mpc_cfg.activation_layer, mpc_cfg.corner_threshold);
      }
      prob.u_prev = u_prev;

      const MpcSolution sol = solve(prob, *model, mpc_cfg, warm);
      rec.status = to_string(sol.status);
      rec.solve_time = sol.solve_time;
      rec.inner_iterations = sol.inner_iterations;
      rec.predicted_temp = sol.predicted(0, 0);
      rec.predicted_depth = C > 1 ? sol.predicted(0, 1) : std::numeric_limits<double>::quiet_NaN();
      if (cfg.compare_cold_start) rec.cold_inner_iterations = solve(prob, *model, mpc_cfg).inner_iterations;
      if (sol.status == MpcStatus::failed) {
        ++consecutive_failures;
        u = warm ? (*warm)(0) : u_prev;
        if (warm) warm = warm_start_shift(*warm);
      } else {
        consecutive_failures = 0;
        u = sol.u_opt(0);
        warm = warm_start_shift(sol.u_opt);
      }
    }
    if (g.pose.enabled && rec.controlled) was_idle = false;
    u = std::clamp(u, cfg.bounds.lower, cfg.bounds.upper);

    std::vector<RawExtraction> raw;
    try {
      raw = sim.advance(u, true);
    } catch (const NumericalDivergence& e) {
      log.aborted = true;
      log.abort_reason = std::string("plant divergence: ") + e.what();
      break;
    }
    for (const auto& r : raw) {
      log.raw_temp.push_back(r.x_temp);
      log.raw_depth.push_back(r.x_depth);
      recent.push_back(r);
      if (static_cast<int>(recent.size()) > cfg.smoothing_span) recent.pop_front();
    }
    double mt = 0.0;
    double md = 0.0;
    for (const auto& r : recent) {
      mt += r.x_temp;
      md += r.x_depth;
    }
    rec.x_temp = mt / static_cast<double>(recent.size());
    rec.x_depth = md / static_cast<double>(recent.size());
    rec.u = u;
    temps.push_back(rec.x_temp);
    depths.push_back(rec.x_depth);
    geoms.push_back(g);
    inputs.push_back(u);
    u_prev = u;
    log.steps.push_back(rec);

    if (consecutive_failures > cfg.max_consecutive_failures) {
      log.aborted = true;
      log.abort_reason = "controller failed " + std::to_string(consecutive_failures) + " consecutive times";
      break;
    }
  }
  log.metrics = compute_metrics(log.steps, mpc_cfg);
  return log;
}

double r_squared(const std::vector<double>& actual, const std::vector<double>& reference) {
  if (actual.size() != reference.size() || actual.empty()) throw ContractError("r_squared: need equal non-empty series");
  const double mean = std::accumulate(reference.begin(), reference.end(), 0.0) / static_cast<double>(reference.size());
  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_tot += (reference[i] - mean) * (reference[i] - mean);
    ss_res += (reference[i] - actual[i]) * (reference[i] - actual[i]);
  }
  if (ss_tot == 0.0) throw ContractError("r_squared: reference has zero variance");
  return 1.0 - ss_res / ss_tot;
}

double mape(const std::vector<double>& actual, const std::vector<double>& truth) {
  if (actual.size() != truth.size() || actual.empty()) throw ContractError("mape: need equal non-empty series");
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) s += std::abs(actual[i] - truth[i]) / std::abs(truth[i]);
  return s / static_cast<double>(actual.size());
}

double rrmse(const std::vector<double>& actual, const std::vector<double>& truth) {
  if (actual.size() != truth.size() || actual.empty()) throw ContractError("rrmse: need equal non-empty series");
  double se = 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    se += (actual[i] - truth[i]) * (actual[i] - truth[i]);
    ss += truth[i] * truth[i];
  }
  return std::sqrt(se / ss);
}

double total_variation(const std::vector<double>& u) {
  double tv = 0.0;
  for (std::size_t i = 1; i < u.size(); ++i) tv += std::abs(u[i] - u[i - 1]);
  return tv;
}

namespace {

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

bool is_solve(const StepRecord& s) {
  return s.status == "converged" || s.status == "fallback_used" || s.status == "failed";
}

}  // namespace

double tracking_mse(const std::vector<StepRecord>& steps) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : steps) {
    if (!s.controlled || !s.laser_on || s.transition) continue;
    sum += (s.x_temp - s.reference) * (s.x_temp - s.reference);
    ++n;
  }
  if (n == 0) throw ContractError("tracking_mse: no metric samples");
  return sum / static_cast<double>(n);
}

PidEvaluator pid_episode_evaluator(const RunConfig& base, int episode_layers) {
  if (episode_layers < 1) throw ContractError("pid_episode_evaluator: episode_layers must be at least 1");
  RunConfig cfg = base;
  cfg.kind = ControllerKind::pid;
  cfg.setup.path.num_layers = std::min(cfg.setup.path.num_layers, episode_layers);
  return [cfg](const PidGains& g) {
    RunConfig c = cfg;
    c.pid = g;
    const RunLog log = run(c);
    if (log.aborted) return std::numeric_limits<double>::infinity();
    return tracking_mse(log.steps);
  };
}

RunMetrics compute_metrics(const std::vector<StepRecord>& steps, const MpcConfig& mpc) {
  RunMetrics m;
  std::vector<double> actual;
  std::vector<double> ref;
  std::vector<double> controlled_u;
  std::size_t violations = 0;
  std::vector<double> times;
  double iters = 0.0;
  double cold = 0.0;
  std::size_t cold_n = 0;
  for (const auto& s : steps) {
    if (!s.controlled) continue;
    controlled_u.push_back(s.u);
    if (is_solve(s)) {
      times.push_back(s.solve_time);
      iters += s.inner_iterations;
      if (s.cold_inner_iterations >= 0) {
        cold += s.cold_inner_iterations;
        ++cold_n;
      }
      if (s.status == "fallback_used") ++m.fallbacks;
      if (s.status == "failed") ++m.failures;
    }
    if (!s.laser_on || s.transition) continue;
    actual.push_back(s.x_temp);
    ref.push_back(s.reference);
    if (s.constraint_active) {
      ++m.constrained_samples;
      if (s.x_depth < mpc.depth_lb || s.x_depth > mpc.depth_ub) ++violations;
    }
  }
  m.samples = actual.size();
  m.total_variation_u = total_variation(controlled_u);
  if (!actual.empty()) {
    try {
      m.r2 = r_squared(actual, ref);
    } catch (const ContractError&) {
      m.r2.reset();
    }
    m.mape = mape(actual, ref);
    m.rrmse = rrmse(actual, ref);
  }
  m.depth_violation_fraction =
      m.constrained_samples ? static_cast<double>(violations) / static_cast<double>(m.constrained_samples) : 0.0;
  m.solves = times.size();
  if (!times.empty()) {
    m.solve_time_mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
    m.solve_time_median = percentile(times, 0.5);
    m.solve_time_p95 = percentile(times, 0.95);
    m.solve_time_max = *std::max_element(times.begin(), times.end());
    m.mean_inner_iterations = iters / static_cast<double>(times.size());
  }
  m.mean_cold_inner_iterations =
      cold_n ? cold / static_cast<double>(cold_n) : std::numeric_limits<double>::quiet_NaN();
  return m;
}

void write_run_csv(const std::filesystem::path& file, const RunLog& log) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out.precision(17);
  out << "sample,time,reference,x_temp,x_depth,u,laser_on,layer,near_corner,controlled,constraint_active,transition,status,"
         "solve_time,inner_iterations,cold_inner_iterations,predicted_temp,predicted_depth\n";
  for (const auto& s : log.steps) {
    out << s.sample << ',' << s.time << ',' << s.reference << ',' << s.x_temp << ',' << s.x_depth << ',' << s.u << ','
        << s.laser_on << ',' << s.layer << ',' << s.near_corner << ',' << s.controlled << ',' << s.constraint_active
        << ',' << s.transition << ',' << s.status << ',' << s.solve_time << ',' << s.inner_iterations << ',' << s.cold_inner_iterations << ','
        << s.predicted_temp << ',' << s.predicted_depth << '\n';
  }
}

void write_solve_time_histogram(const std::filesystem::path& file, const RunLog& log, int bins) {
  std::vector<double> times;
  for (const auto& s : log.steps) {
    if (s.controlled && is_solve(s)) times.push_back(s.solve_time);
  }
  bins = std::max(bins, 1);
  const double hi = times.empty() ? 1.0 : std::max(*std::max_element(times.begin(), times.end()), 1e-12);
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double t : times) {
    auto b = static_cast<std::size_t>(t / hi * bins);
    counts[std::min(b, counts.size() - 1)]++;
  }
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "bin_start_s,bin_end_s,count\n";
  for (int b = 0; b < bins; ++b) {
    out << hi * b / bins << ',' << hi * (b + 1) / bins << ',' << counts[static_cast<std::size_t>(b)] << '\n';
  }
}

bool same_trajectory(const RunLog& a, const RunLog& b) {
  if (a.steps.size() != b.steps.size() || a.raw_temp != b.raw_temp || a.raw_depth != b.raw_depth ||
      a.aborted != b.aborted) {
    return false;
  }
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const StepRecord& x = a.steps[i];
    const StepRecord& y = b.steps[i];
    auto same = [](double p, double q) { return p == q || (std::isnan(p) && std::isnan(q)); };
    if (x.sample != y.sample || x.time != y.time || x.reference != y.reference || x.x_temp != y.x_temp ||
        x.x_depth != y.x_depth || x.u != y.u || x.transition != y.transition || x.status != y.status || x.inner_iterations != y.inner_iterations ||
        x.cold_inner_iterations != y.cold_inner_iterations || !same(x.predicted_temp, y.predicted_temp) ||
        !same(x.predicted_depth, y.predicted_depth)) {
      return false;
    }
  }
  return true;
}

}  // namespace dedmpc
