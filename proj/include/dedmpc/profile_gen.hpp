#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dedmpc/process_sim.hpp"

namespace dedmpc {

/// Ten-parameter laser power waveform: a truncated Fourier series with
/// linearly drifting amplitude, frequency and phase, plus a linear trend and
/// a seasonal sinusoid.
struct ProfileParams {
  double amplitude = 0.0;       // W
  int num_terms = 1;            // 1..3
  double frequency = 0.0;       // Hz
  double phase = 0.0;           // rad
  double amp_rate = 0.0;        // 1/s
  double freq_rate = 0.0;       // 1/s
  double phase_rate = 0.0;      // 1/s
  double trend_slope = 0.0;     // W/s
  double seasonal_fluct = 0.0;  // Hz
  double seasonal_amp = 0.0;    // W
};

struct PowerBounds {
  double lower = 504.0;
  double upper = 750.0;
  double mid() const { return 0.5 * (lower + upper); }
};

double evaluate_profile(const ProfileParams& params, double t, const PowerBounds& bounds);

inline constexpr std::size_t kProfileDims = 10;

/// Sampling range per parameter, in ProfileParams field order. num_terms is
/// drawn continuously over [lo, hi) and floored.
using ProfileRanges = std::array<std::array<double, 2>, kProfileDims>;
ProfileRanges default_profile_ranges();

ProfileParams params_from_unit(const Eigen::RowVectorXd& unit, const ProfileRanges& ranges);

struct LhsDesign {
  Eigen::MatrixXd unit;                  // n x d in [0,1)
  double score = 0.0;                    // min pairwise distance of the chosen design
  std::vector<double> candidate_scores;  // every candidate, chosen one included
  std::size_t chosen = 0;
};

/// Maximin Latin hypercube: draws `candidates` random LHS designs and keeps the
/// one with the largest minimum pairwise distance. Deterministic in `seed`.
LhsDesign lhs_design(std::size_t n, std::size_t dims, std::uint64_t seed, std::size_t candidates = 64);
double maximin_score(const Eigen::MatrixXd& design);

std::vector<ProfileParams> lhs_sample(std::size_t n, const ProfileRanges& ranges, std::uint64_t seed,
                                      std::size_t candidates = 64);

/// One sampling step of a run. Covariates describe the interval ending at the
/// measurement; u is the commanded power held over that interval.
struct SampleRecord {
  double time = 0.0;
  double x_temp = 0.0;
  double x_depth = 0.0;
  double d_x = 0.0;
  double d_y = 0.0;
  double z = 0.0;
  double u = 0.0;
  bool laser_on = false;
  int layer = 1;
};

using RunSeries = std::vector<SampleRecord>;

inline constexpr int kTargetChannels = 2;     // x_temp, x_depth
inline constexpr int kCovariateChannels = 4;  // d_x, d_y, z, u

struct SeriesSegment {
  Eigen::MatrixXd past_targets;       // w x 2
  Eigen::MatrixXd past_covariates;    // w x 4
  Eigen::MatrixXd future_covariates;  // p x 4
  Eigen::MatrixXd future_targets;     // p x 2
};

/// Unit-stride windows of length w+p; targets are smoothed first with a
/// causal moving average of `smoothing_window`.
std::vector<SeriesSegment> segment(const RunSeries& series, int w, int p, int smoothing_window = 4);

/// Open-loop run: the profile value at the start of each sampling interval is
/// clamped to the bounds and held for the interval.
RunSeries simulate_open_loop(const ProcessSetup& setup, const std::function<double(double)>& power,
                             const PowerBounds& bounds, const ProcessSimulator::SnapshotHook& hook = {});

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct Dataset {
  int w = 0;
  int p = 0;
  std::vector<SeriesSegment> train;
  std::vector<SeriesSegment> validation;
  ChannelStats target_stats;
  ChannelStats covariate_stats;
  std::size_t num_profiles = 0;
  std::uint64_t seed = 0;
};

struct DatasetOptions {
  int w = 20;
  int p = 20;
  double validation_fraction = 0.1;
  int smoothing_window = 4;
  std::uint64_t seed = 0;
};

/// Simulates every profile, segments each run separately, shuffles and splits.
/// Plant divergence is rethrown with the run index in the message.
Dataset build_dataset(const std::vector<ProfileParams>& profiles, const ProcessSetup& setup,
                      const PowerBounds& bounds, const DatasetOptions& options);

/// Splits and computes normalization statistics from the training part.
Dataset split_dataset(std::vector<SeriesSegment> segments, const DatasetOptions& options);

ChannelStats target_statistics(const std::vector<SeriesSegment>& segments);
ChannelStats covariate_statistics(const std::vector<SeriesSegment>& segments);

/// Binary tensor file per split: magic, w, p, count, then row-major doubles.
void write_segments(const std::filesystem::path& file, const std::vector<SeriesSegment>& segments, int w, int p);
std::vector<SeriesSegment> read_segments(const std::filesystem::path& file, int& w, int& p);

}  // namespace dedmpc
