#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dedmpc/mpc.hpp"
#include "dedmpc/pid.hpp"
#include "dedmpc/process_sim.hpp"
#include "dedmpc/tide.hpp"

namespace dedmpc {

enum class ControllerKind { mpc, mpc_unconstrained, pid, open_loop };
const char* to_string(ControllerKind k);
/// Accepts both "mpc_unconstrained" and "mpc-unconstrained" spellings.
ControllerKind controller_from_string(const std::string& s);

/// Temperature reference over time. `step` holds each value until the next
/// breakpoint; `linear` interpolates. Clamped outside the breakpoint range.
struct ReferenceSpec {
  enum class Mode { step, linear };
  Mode mode = Mode::step;
  std::vector<double> times{0.0};     // s
  std::vector<double> values{1000.0};  // K

  void validate() const;
  double operator()(double t) const;
};

struct RunConfig {
  ProcessSetup setup;
  ControllerKind kind = ControllerKind::open_loop;
  ReferenceSpec reference;
  PowerBounds bounds;
  double warmup_u = 627.0;         // W
  int warmup_samples = 20;         // at least w for MPC
  int smoothing_span = 10;         // plant steps averaged into one measurement
  MpcConfig mpc;
  PidGains pid;
  std::uint64_t seed = 0;
  int max_consecutive_failures = 10;
  /// Samples within this time of a layer's laser-on or laser-off instant are
  /// layer transitions and are left out of the tracking metrics.
  double transition_window = 0.2;  // s
  /// Also solve every MPC problem from the default point to count cold-start
  /// iterations. The cold solution is never applied.
  bool compare_cold_start = false;
  /// Optional open-loop input; used by the open_loop kind after warmup.
  std::function<double(double)> open_loop_input;

  void validate() const;
};

struct StepRecord {
  std::size_t sample = 0;
  double time = 0.0;
  double reference = 0.0;
  double x_temp = 0.0;   // smoothed measurement at the end of the interval
  double x_depth = 0.0;
  double u = 0.0;        // applied over the interval
  bool laser_on = false;
  int layer = 1;
  bool near_corner = false;
  bool controlled = false;
  bool transition = false;
  bool constraint_active = false;
  std::string status;    // warmup, idle, open_loop, pid, or an MPC status
  double solve_time = 0.0;
  int inner_iterations = 0;
  int cold_inner_iterations = -1;
  double predicted_temp = 0.0;  // one-step-ahead median forecast, MPC only
  double predicted_depth = 0.0;
};

struct RunMetrics {
  std::optional<double> r2;
  double mape = 0.0;
  double rrmse = 0.0;
  double total_variation_u = 0.0;
  double depth_violation_fraction = 0.0;
  std::size_t samples = 0;
  std::size_t constrained_samples = 0;
  std::size_t solves = 0;
  double solve_time_mean = 0.0;
  double solve_time_median = 0.0;
  double solve_time_p95 = 0.0;
  double solve_time_max = 0.0;
  double mean_inner_iterations = 0.0;
  double mean_cold_inner_iterations = 0.0;  // NaN without the comparison
  std::size_t fallbacks = 0;
  std::size_t failures = 0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  /// Raw per-plant-step extractions, plant_steps_per_sample per sample.
  std::vector<double> raw_temp;
  std::vector<double> raw_depth;
  bool aborted = false;
  std::string abort_reason;
  RunMetrics metrics;
};

/// Closed-loop run: open-loop warmup, then one controller decision per
/// sampling interval. MPC kinds require `model`.
RunLog run(const RunConfig& cfg, const TideModel* model = nullptr);

/// Metrics over controlled laser-on samples outside layer transitions. Depth
/// violations count only samples where the constraint applies.
RunMetrics compute_metrics(const std::vector<StepRecord>& steps, const MpcConfig& mpc);

/// Coefficient of determination of `actual` against `reference`; throws
/// ContractError when the reference has zero variance.
double r_squared(const std::vector<double>& actual, const std::vector<double>& reference);
double mape(const std::vector<double>& actual, const std::vector<double>& truth);
double rrmse(const std::vector<double>& actual, const std::vector<double>& truth);
double total_variation(const std::vector<double>& u);
/// Mean squared tracking error over the samples the metrics use.
double tracking_mse(const std::vector<StepRecord>& steps);

/// Scores PID gains by closed-loop tracking MSE over the first
/// `episode_layers` layers of `base`. Aborted episodes score infinity.
PidEvaluator pid_episode_evaluator(const RunConfig& base, int episode_layers);

void write_run_csv(const std::filesystem::path& file, const RunLog& log);
/// Solve-time histogram with `bins` equal-width bins over [0, max].
void write_solve_time_histogram(const std::filesystem::path& file, const RunLog& log, int bins = 20);

/// Whether the depth constraint applies at a sample.
bool constraint_applies(const SampleGeometry& g, int activation_layer, double corner_threshold);

/// Two logs agree on everything but wall-clock solve time.
bool same_trajectory(const RunLog& a, const RunLog& b);

}  // namespace dedmpc
