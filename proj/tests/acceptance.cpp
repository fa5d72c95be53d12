// Acceptance run: one PASS/FAIL line per criterion. Criteria can be picked on
// the command line (`acceptance 3 5`); the default runs all ten. Exit status
// is non-zero if any selected criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "dedmpc/artifacts.hpp"
#include "dedmpc/config.hpp"
#include "dedmpc/control_loop.hpp"
#include "dedmpc/grid_plant.hpp"
#include "dedmpc/meltpool_features.hpp"
#include "dedmpc/rbf.hpp"
#include "mpc_oracles.hpp"
#include "support.hpp"
#include "tide_oracles.hpp"

using namespace dedmpc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PlantConfig no_losses(double dt) {
  PlantConfig c;
  c.dt = dt;
  c.h_conv = 0.0;
  c.fixed_bottom = false;
  return c;
}

MaterialProps no_radiation() {
  MaterialProps m;
  m.emissivity = 0.0;
  return m;
}

// ---------------------------------------------------------------- criterion 1

Outcome plant_physics() {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(300.0, 2500.0);

  double enthalpy_drift = 0.0;
  {
    VoxelGrid g({6, 5, 4}, 0.5, {}, 2, 300.0);
    for (std::size_t i = 0; i < g.dims().count(); ++i) g.set_temperature(i, U(rng));
    GridPlant plant(g, no_radiation(), no_losses(8e-3));
    double before = plant.enthalpy();
    for (int s = 0; s < 500; ++s) {
      plant.step({});
      const double after = plant.enthalpy();
      enthalpy_drift = std::max(enthalpy_drift, std::abs(after - before) / before);
      before = after;
    }
  }

  double rod_error = 0.0;
  {
    const int n = 21;
    VoxelGrid g({n, 1, 1}, 1.0, {}, 1, 300.0);
    g.pin(0, 500.0);
    g.pin(n - 1, 1500.0);
    GridPlant plant(g, no_radiation(), no_losses(0.03));
    for (int s = 0; s < 4000; ++s) plant.step({});
    for (int i = 0; i < n; ++i) {
      const double exact = 500.0 + 1000.0 * i / (n - 1);
      rod_error = std::max(rod_error, std::abs(plant.grid().temperature(i) - exact) / exact);
    }
  }

  std::size_t bottom_misses = 0;
  {
    SquarePathSpec path;
    path.side_length = 4.0;
    path.layer_height = 0.5;
    path.num_layers = 1;
    PlantConfig c;
    GridPlant plant(make_square_wall_grid(path, GridGeometry{}, 300.0), MaterialProps{}, c);
    const auto& d = plant.grid().dims();
    for (int s = 0; s < 400; ++s) {
      const LaserPose pose = laser_pose(path, s * c.dt);
      const LaserState laser{pose.position, 700.0, pose.enabled};
      plant.activate_elements(laser, path.layer_height);
      plant.step(laser);
      for (int j = 0; j < d.ny; ++j) {
        for (int i = 0; i < d.nx; ++i) bottom_misses += plant.grid().temperature(plant.grid().index(i, j, 0)) != 300.0;
      }
    }
  }

  std::size_t principle_misses = 0;
  int principle_steps = 0;
  {
    const GridDims dims{6, 5, 4};
    for (int field = 0; field < 10; ++field) {
      VoxelGrid g(dims, 0.5, {}, 2 + field % 3, 300.0);
      for (std::size_t i = 0; i < g.dims().count(); ++i) g.set_temperature(i, U(rng));
      GridPlant plant(g, no_radiation(), no_losses(0.999 * stability_limit(no_radiation(), 0.5)));
      for (int s = 0; s < 100; ++s, ++principle_steps) {
        const std::vector<double> prev(plant.grid().temperatures().begin(), plant.grid().temperatures().end());
        plant.step({});
        const VoxelGrid& gr = plant.grid();
        for (std::size_t idx = 0; idx < dims.count(); ++idx) {
          if (!gr.active(idx)) continue;
          const auto [i, j, k] = gr.coords(idx);
          double lo = prev[idx];
          double hi = prev[idx];
          const int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
          for (const auto& o : off) {
            const int a = i + o[0];
            const int b = j + o[1];
            const int c = k + o[2];
            if (a < 0 || b < 0 || c < 0 || a >= dims.nx || b >= dims.ny || c >= dims.nz) continue;
            const std::size_t nb = gr.index(a, b, c);
            if (!gr.active(nb)) continue;
            lo = std::min(lo, prev[nb]);
            hi = std::max(hi, prev[nb]);
          }
          const double T = gr.temperature(idx);
          principle_misses += T < lo - 1e-9 || T > hi + 1e-9;
        }
      }
    }
  }

  Outcome o;
  o.pass = enthalpy_drift < 1e-9 && rod_error < 5e-3 && bottom_misses == 0 && principle_misses == 0 &&
           principle_steps == 1000;
  o.detail = fmt("enthalpy drift %.2e/step, rod error %.3f%%, bottom misses %zu, max-principle misses %zu over %d steps",
                 enthalpy_drift, 100.0 * rod_error, bottom_misses, principle_misses, principle_steps);
  return o;
}

// ---------------------------------------------------------------- criterion 2

VoxelGrid feature_block(int nz) { return VoxelGrid({25, 25, nz}, 0.5, {-6.25, -6.25, 0.0}, nz, 300.0); }

template <class F>
void fill(VoxelGrid& g, F f) {
  for (std::size_t i = 0; i < g.dims().count(); ++i) {
    const Vec3 c = g.center(i);
    g.set_temperature(i, f(c.x, c.y, c.z));
  }
}

Outcome feature_extraction() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  double node_error = 0.0;
  for (int dims : {2, 3}) {
    Eigen::MatrixXd pts(60, dims);
    Eigen::VectorXd vals(60);
    for (int r = 0; r < 60; ++r) {
      for (int c = 0; c < dims; ++c) pts(r, c) = U(rng);
      vals(r) = 1000.0 + 300.0 * std::sin(pts(r, 0)) + 50.0 * pts(r, 1);
    }
    const RbfInterpolant f = RbfInterpolant::fit(pts, vals);
    for (int r = 0; r < 60; ++r) {
      std::array<double, 3> x{};
      for (int c = 0; c < dims; ++c) x[static_cast<std::size_t>(c)] = pts(r, c);
      node_error = std::max(node_error, std::abs(f.evaluate({x.data(), static_cast<std::size_t>(dims)}) - vals(r)) /
                                            std::abs(vals(r)));
    }
  }

  FeatureConfig cfg;
  cfg.calibration_scale = 1.0;
  VoxelGrid g = feature_block(3);
  const double A = 1500.0;
  const double s = 1.5;
  fill(g, [&](double x, double y, double) { return 300.0 + A * std::exp(-(x * x + y * y) / (s * s)); });
  const double R = cfg.sensing_radius;
  const double exact = 300.0 + A * s * s / (R * R) * (1.0 - std::exp(-R * R / (s * s)));
  const double bump_error = std::abs(extract_temperature(g, {0.0, 0.0, 1.5}, cfg) - exact) / exact;

  const FeatureConfig dcfg;
  const double solidus = 1658.0;
  const double top_z = 6.0;
  VoxelGrid deep = feature_block(12);
  double depth_error = 0.0;
  for (double front : {0.5, 1.0, 1.5, 2.0}) {
    fill(deep, [&](double, double, double z) { return top_z - z < front ? 2200.0 : 900.0; });
    // Molten voxel centres reach front - 0.25 mm below the top, cold ones start
    // at front + 0.25 mm; the front itself is the truth.
    const double truth = front - dcfg.layer_height;
    depth_error = std::max(depth_error, std::abs(extract_depth(deep, {0.0, 0.0, top_z}, solidus, dcfg) - truth));
  }

  Outcome o;
  o.pass = node_error < 1e-8 && bump_error < 0.01 && depth_error <= dcfg.fine_spacing + 1e-12;
  o.detail = fmt("rbf node error %.2e, disc average error %.3f%%, step-profile depth error %.3f mm", node_error,
                 100.0 * bump_error, depth_error);
  return o;
}

// ---------------------------------------------------------------- criterion 3

Outcome surrogate_gradients() {
  TideModel m(testing::tiny_tide_config(), 17);
  const testing::GradientCheck r = testing::check_tide_gradients(m, 3, 5);
  const double worst = std::max({r.worst_weight, r.worst_past_target, r.worst_covariate});
  Outcome o;
  o.pass = worst < 1e-4 && r.weights_checked == m.num_weights();
  o.detail = fmt("worst relative error %.2e over %zu weights and %zu inputs", worst, r.weights_checked, r.inputs_checked);
  return o;
}

// ------------------------------------------------------- desk model (4, 6-9)

struct DeskModel {
  AppConfig cfg;
  TideModel model;
  ForecastAccuracy accuracy;
  double datagen_seconds = 0.0;
  double train_seconds = 0.0;
  std::size_t train_segments = 0;
};

DeskModel train_desk_model() {
  const AppConfig cfg = testing::desk_config();
  auto t0 = std::chrono::steady_clock::now();
  const Dataset d = build_dataset(lhs_sample(static_cast<std::size_t>(cfg.profiles.count), cfg.profiles.ranges,
                                             cfg.seed, static_cast<std::size_t>(cfg.profiles.lhs_candidates)),
                                  cfg.setup, cfg.bounds, cfg.dataset);
  DeskModel out{cfg, TideModel(cfg.model, cfg.training.seed), {}, seconds_since(t0), 0.0, d.train.size()};
  t0 = std::chrono::steady_clock::now();
  train(out.model, d, cfg.training);
  out.train_seconds = seconds_since(t0);
  out.accuracy = evaluate_accuracy(out.model, d.validation);
  return out;
}

Outcome surrogate_accuracy(const DeskModel& dm) {
  const auto& c = dm.cfg;
  const bool setup_ok = c.setup.path.side_length == 8.0 && c.setup.path.num_layers == 3 &&
                        c.setup.geometry.spacing == 0.5 && c.profiles.count >= 10 && c.dataset.w == 20 &&
                        c.dataset.p == 20 && c.training.epochs >= 100;
  const double total = dm.datagen_seconds + dm.train_seconds;
  Outcome o;
  o.pass = setup_ok && dm.accuracy.temperature_mape <= 0.05 && dm.accuracy.depth_mape <= 0.15 && total < 1800.0;
  o.detail = fmt("temperature MAPE %.2f%%, depth MAPE %.2f%% (%zu points), %d profiles, %d epochs, %zu train segments, "
                 "%.0f s",
                 100.0 * dm.accuracy.temperature_mape, 100.0 * dm.accuracy.depth_mape, dm.accuracy.depth_points,
                 c.profiles.count, c.training.epochs, dm.train_segments, total);
  return o;
}

struct Runs {
  RunLog mpc;
  RunLog pid;
  PidGains pid_gains;
  double mpc_seconds = 0.0;
  std::filesystem::path histogram;
  std::size_t histogram_bins = 0;
};

Runs reference_runs(const DeskModel& dm) {
  Runs r;
  RunConfig rc = dm.cfg.run_config();
  rc.kind = ControllerKind::mpc;
  rc.compare_cold_start = true;
  auto t0 = std::chrono::steady_clock::now();
  r.mpc = run(rc, &dm.model);
  r.mpc_seconds = seconds_since(t0);

  const auto dir = testing::scratch_dir("acceptance_histogram");
  std::filesystem::create_directories(dir);
  r.histogram = dir / "solve_time_histogram.csv";
  write_solve_time_histogram(r.histogram, r.mpc);
  std::ifstream in(r.histogram);
  for (std::string line; std::getline(in, line);) ++r.histogram_bins;
  r.histogram_bins = r.histogram_bins ? r.histogram_bins - 1 : 0;

  const auto& t = dm.cfg.pid_tune;
  r.pid_gains = tune(pid_episode_evaluator(rc, t.episode_layers), t.range, t.budget, dm.cfg.seed).gains;
  RunConfig pc = rc;
  pc.kind = ControllerKind::pid;
  pc.pid = r.pid_gains;
  r.pid = run(pc);
  return r;
}

Outcome closed_loop_tracking(const Runs& r) {
  const double r2 = r.mpc.metrics.r2.value_or(-1.0);
  Outcome o;
  o.pass = !r.mpc.aborted && r2 >= 0.95 && r.mpc_seconds < 900.0;
  o.detail = fmt("MPC R2 %.4f over %zu laser-on samples, %.0f s", r2, r.mpc.metrics.samples, r.mpc_seconds);
  return o;
}

Outcome constraint_efficacy(const DeskModel& dm) {
  const AppConfig cfg = load_config(testing::source_dir() / "configs" / "desk_excursion.json");
  RunConfig rc = cfg.run_config();
  rc.kind = ControllerKind::mpc;
  const RunLog constrained = run(rc, &dm.model);
  rc.kind = ControllerKind::mpc_unconstrained;
  const RunLog unconstrained = run(rc, &dm.model);
  const double vc = constrained.metrics.depth_violation_fraction;
  const double vu = unconstrained.metrics.depth_violation_fraction;
  Outcome o;
  o.pass = !constrained.aborted && !unconstrained.aborted && constrained.metrics.constrained_samples > 0 && vc < vu &&
           vc <= 0.10;
  o.detail = fmt("violation fraction constrained %.3f vs unconstrained %.3f over %zu masked-in samples", vc, vu,
                 constrained.metrics.constrained_samples);
  return o;
}

Outcome mpc_vs_pid(const Runs& r) {
  const double r2m = r.mpc.metrics.r2.value_or(-1.0);
  const double r2p = r.pid.metrics.r2.value_or(-1.0);
  const double tvm = r.mpc.metrics.total_variation_u;
  const double tvp = r.pid.metrics.total_variation_u;
  Outcome o;
  o.pass = !r.pid.aborted && tvm < tvp && r2m >= 0.90 && r2p >= 0.90;
  o.detail = fmt("total variation MPC %.1f W vs PID %.1f W; R2 MPC %.4f, PID %.4f (tuned Kp %.3g Ki %.3g Kd %.3g)", tvm,
                 tvp, r2m, r2p, r.pid_gains.Kp, r.pid_gains.Ki, r.pid_gains.Kd);
  return o;
}

Outcome solver_behaviour(const Runs& r) {
  const RunMetrics& m = r.mpc.metrics;
  Outcome o;
  o.pass = m.solves > 0 && m.mean_inner_iterations <= m.mean_cold_inner_iterations && r.histogram_bins > 0 &&
           m.solve_time_mean < 0.5;
  o.detail = fmt("inner iterations warm %.1f vs cold %.1f; solve time mean %.3f s, p95 %.3f s, max %.3f s over %zu solves; "
                 "histogram %zu bins at %s",
                 m.mean_inner_iterations, m.mean_cold_inner_iterations, m.solve_time_mean, m.solve_time_p95,
                 m.solve_time_max, m.solves, r.histogram_bins, r.histogram.string().c_str());
  return o;
}

// ---------------------------------------------------------------- criterion 5

Outcome oracle_dominance() {
  const AppConfig cfg = testing::desk_config();
  const testing::TrainedProblems set = testing::trained_problems(cfg, 3, 6, 15, 20, 7);
  MpcConfig mc = cfg.mpc;
  mc.horizon = 3;
  int dominated = 0;
  double worst_gap = -std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  for (const MpcProblem& pr : set.problems) {
    const testing::BruteForce bf = testing::brute_force(pr, set.model, mc, 25);
    const MpcSolution s = solve(pr, set.model, mc);
    evaluations += bf.evaluations;
    worst_gap = std::max(worst_gap, s.objective - bf.best);
    dominated += s.objective <= bf.best + 1e-3;
  }
  Outcome o;
  o.pass = dominated == 20 && evaluations == 20 * 15625;
  o.detail = fmt("%d/20 problems within 1e-3 of the 25-level optimum, worst solver-minus-grid %.3g", dominated, worst_gap);
  return o;
}

// --------------------------------------------------------------- criterion 10

Outcome determinism() {
  AppConfig cfg = testing::desk_config();
  cfg.profiles.count = 2;
  cfg.training.epochs = 2;

  auto datagen = [&] {
    return build_dataset(lhs_sample(2, cfg.profiles.ranges, cfg.seed, static_cast<std::size_t>(cfg.profiles.lhs_candidates)),
                         cfg.setup, cfg.bounds, cfg.dataset);
  };
  const auto dir = testing::scratch_dir("acceptance_determinism");
  std::filesystem::create_directories(dir);
  std::array<std::string, 2> data_hash;
  std::array<std::string, 2> model_hash;
  std::array<RunLog, 2> mpc_runs;
  std::array<RunLog, 2> pid_runs;
  for (int rep = 0; rep < 2; ++rep) {
    const Dataset d = datagen();
    const auto seg = dir / ("train" + std::to_string(rep) + ".seg");
    write_segments(seg, d.train, d.w, d.p);
    data_hash[rep] = sha256_file(seg);
    TideModel m(cfg.model, cfg.training.seed);
    train(m, d, cfg.training);
    const auto bin = dir / ("model" + std::to_string(rep) + ".bin");
    m.save(bin, dir / ("model" + std::to_string(rep) + ".json"));
    model_hash[rep] = sha256_file(bin);
    RunConfig rc = cfg.run_config();
    rc.kind = ControllerKind::mpc;
    mpc_runs[rep] = run(rc, &m);
    rc.kind = ControllerKind::pid;
    pid_runs[rep] = run(rc);
  }
  std::filesystem::remove_all(dir);
  const bool data = data_hash[0] == data_hash[1];
  const bool model = model_hash[0] == model_hash[1];
  const bool mpc = same_trajectory(mpc_runs[0], mpc_runs[1]);
  const bool pid = same_trajectory(pid_runs[0], pid_runs[1]);
  Outcome o;
  o.pass = data && model && mpc && pid;
  o.detail = fmt("dataset %s, model weights %s, MPC run %s, PID run %s", data ? "identical" : "differs",
                 model ? "identical" : "differs", mpc ? "identical" : "differs", pid ? "identical" : "differs");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto want = [&](int n) { return wanted.count(n) > 0; };

  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d: %s  %s: %s (%.1f s)\n", n, o.pass ? "PASS" : "FAIL", name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  if (want(1)) report(1, "plant physics", plant_physics);
  if (want(2)) report(2, "feature extraction", feature_extraction);
  if (want(3)) report(3, "surrogate gradients", surrogate_gradients);
  if (want(5)) report(5, "MPC oracle dominance", oracle_dominance);

  if (want(4) || want(6) || want(7) || want(8) || want(9)) {
    std::optional<DeskModel> dm;
    std::optional<Runs> runs;
    std::string setup_error;
    try {
      dm.emplace(train_desk_model());
      if (want(6) || want(8) || want(9)) runs.emplace(reference_runs(*dm));
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    auto needs = [&](bool ok, auto f) {
      return [&, ok, f]() -> Outcome {
        if (!ok) return {false, "desk setup failed: " + setup_error};
        return f();
      };
    };
    if (want(4)) report(4, "surrogate accuracy", needs(dm.has_value(), [&] { return surrogate_accuracy(*dm); }));
    if (want(6)) report(6, "closed-loop tracking", needs(runs.has_value(), [&] { return closed_loop_tracking(*runs); }));
    if (want(7)) report(7, "constraint efficacy", needs(dm.has_value(), [&] { return constraint_efficacy(*dm); }));
    if (want(8)) report(8, "MPC vs PID", needs(runs.has_value(), [&] { return mpc_vs_pid(*runs); }));
    if (want(9)) report(9, "solver behaviour", needs(runs.has_value(), [&] { return solver_behaviour(*runs); }));
  }

  if (want(10)) report(10, "determinism", determinism);

  std::printf("%d of %zu criteria failed\n", failures, wanted.size());
  return failures == 0 ? 0 : 1;
}
