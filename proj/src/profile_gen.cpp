#include "dedmpc/profile_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "dedmpc/errors.hpp"

namespace dedmpc {

double evaluate_profile(const ProfileParams& params, double t, const PowerBounds& bounds) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double amp = params.amplitude * (1.0 + params.amp_rate * t);
  const double freq = params.frequency * (1.0 + params.freq_rate * t);
  const double phase = params.phase * (1.0 + params.phase_rate * t);
  double u = bounds.mid();
  for (int n = 1; n <= std::max(params.num_terms, 1); ++n) {
    u += amp / n * std::sin(kTwoPi * n * freq * t + phase);
  }
  u += params.trend_slope * t;
  u += params.seasonal_amp * std::sin(kTwoPi * params.seasonal_fluct * t);
  return std::clamp(u, bounds.lower, bounds.upper);
}

ProfileRanges default_profile_ranges() {
  return {{
      {0.0, 150.0},                 // amplitude W
      {1.0, 4.0},                   // num_terms, floored
      {0.05, 1.0},                  // frequency Hz
      {0.0, 2.0 * std::numbers::pi},  // phase rad
      {-0.05, 0.05},                // amp_rate 1/s
      {-0.05, 0.05},                // freq_rate 1/s
      {-0.05, 0.05},                // phase_rate 1/s
      {-6.0, 6.0},                  // trend_slope W/s
      {0.02, 0.3},                  // seasonal_fluct Hz
      {0.0, 80.0},                  // seasonal_amp W
  }};
}

ProfileParams params_from_unit(const Eigen::RowVectorXd& unit, const ProfileRanges& ranges) {
  if (unit.size() != static_cast<Eigen::Index>(kProfileDims)) throw ContractError("profile: need 10 coordinates");
  auto at = [&](std::size_t d) { return ranges[d][0] + unit(static_cast<Eigen::Index>(d)) * (ranges[d][1] - ranges[d][0]); };
  ProfileParams p;
  p.amplitude = std::max(0.0, at(0));
  p.num_terms = std::clamp(static_cast<int>(std::floor(at(1))), 1, 3);
  p.frequency = at(2);
  p.phase = at(3);
  p.amp_rate = at(4);
  p.freq_rate = at(5);
  p.phase_rate = at(6);
  p.trend_slope = at(7);
  p.seasonal_fluct = at(8);
  p.seasonal_amp = std::max(0.0, at(9));
  return p;
}

double maximin_score(const Eigen::MatrixXd& design) {
  if (design.rows() < 2) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < design.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < design.rows(); ++b) {
      best = std::min(best, (design.row(a) - design.row(b)).squaredNorm());
    }
  }
  return std::sqrt(best);
}

LhsDesign lhs_design(std::size_t n, std::size_t dims, std::uint64_t seed, std::size_t candidates) {
  if (n < 1) throw ContractError("lhs: n must be at least 1");
  candidates = std::max<std::size_t>(candidates, 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  const auto rows = static_cast<Eigen::Index>(n);
  const auto cols = static_cast<Eigen::Index>(dims);

  LhsDesign out;
  out.score = -1.0;
  std::vector<Eigen::Index> perm(n);
  for (std::size_t c = 0; c < candidates; ++c) {
    Eigen::MatrixXd design(rows, cols);
    for (Eigen::Index d = 0; d < cols; ++d) {
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double v = (static_cast<double>(perm[static_cast<std::size_t>(r)]) + jitter(rng)) / static_cast<double>(n);
        design(r, d) = std::min(v, std::nextafter(1.0, 0.0));
      }
    }
    const double score = maximin_score(design);
    out.candidate_scores.push_back(score);
    if (score > out.score) {
      out.score = score;
      out.unit = std::move(design);
      out.chosen = c;
    }
  }
  return out;
}

std::vector<ProfileParams> lhs_sample(std::size_t n, const ProfileRanges& ranges, std::uint64_t seed,
                                      std::size_t candidates) {
  const LhsDesign design = lhs_design(n, kProfileDims, seed, candidates);
  std::vector<ProfileParams> out;
  out.reserve(n);
  for (Eigen::Index r = 0; r < design.unit.rows(); ++r) out.push_back(params_from_unit(design.unit.row(r), ranges));
  return out;
}

std::vector<SeriesSegment> segment(const RunSeries& series, int w, int p, int smoothing_window) {
  if (w < 1 || p < 1) throw ContractError("segment: w and p must be positive");
  const auto total = static_cast<std::size_t>(w + p);
  std::vector<SeriesSegment> out;
  if (series.size() < total) return out;

  std::vector<double> temp(series.size());
  std::vector<double> depth(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    temp[i] = series[i].x_temp;
    depth[i] = series[i].x_depth;
  }
  temp = moving_average(temp, smoothing_window);
  depth = moving_average(depth, smoothing_window);

  auto fill = [&](std::size_t start, int len, Eigen::MatrixXd& targets, Eigen::MatrixXd& covs) {
    targets.resize(len, kTargetChannels);
    covs.resize(len, kCovariateChannels);
    for (int r = 0; r < len; ++r) {
      const std::size_t i = start + static_cast<std::size_t>(r);
      const SampleRecord& s = series[i];
      targets(r, 0) = temp[i];
      targets(r, 1) = depth[i];
      covs(r, 0) = s.d_x;
      covs(r, 1) = s.d_y;
      covs(r, 2) = s.z;
      covs(r, 3) = s.u;
    }
  };
  out.reserve(series.size() - total + 1);
  for (std::size_t s = 0; s + total <= series.size(); ++s) {
    SeriesSegment seg;
    fill(s, w, seg.past_targets, seg.past_covariates);
    fill(s + static_cast<std::size_t>(w), p, seg.future_targets, seg.future_covariates);
    out.push_back(std::move(seg));
  }
  return out;
}

RunSeries simulate_open_loop(const ProcessSetup& setup, const std::function<double(double)>& power,
                             const PowerBounds& bounds, const ProcessSimulator::SnapshotHook& hook) {
  ProcessSimulator sim(setup);
  if (hook) sim.set_snapshot_hook(hook);
  RunSeries out;
  out.reserve(sim.num_samples());
  while (!sim.finished()) {
    const std::size_t k = sim.sample_index();
    const double u = std::clamp(power(sim.time()), bounds.lower, bounds.upper);
    const RawExtraction raw = sim.advance(u, true).back();
    const SampleGeometry g = sim.geometry_of(k);
    SampleRecord rec;
    rec.time = sim.time();
    rec.x_temp = raw.x_temp;
    rec.x_depth = raw.x_depth;
    rec.d_x = g.cov.d_x;
    rec.d_y = g.cov.d_y;
    rec.z = g.cov.z;
    rec.u = u;
    rec.laser_on = g.pose.enabled;
    rec.layer = g.pose.layer;
    out.push_back(rec);
  }
  return out;
}

namespace {

ChannelStats stats_of(const std::vector<SeriesSegment>& segments, int channels, bool targets) {
  ChannelStats s;
  s.mean.assign(static_cast<std::size_t>(channels), 0.0);
  s.std.assign(static_cast<std::size_t>(channels), 1.0);
  std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> sum2(static_cast<std::size_t>(channels), 0.0);
  double count = 0.0;
  auto add = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < channels; ++c) {
        sum[static_cast<std::size_t>(c)] += m(r, c);
        sum2[static_cast<std::size_t>(c)] += m(r, c) * m(r, c);
      }
    }
    count += static_cast<double>(m.rows());
  };
  for (const auto& seg : segments) {
    if (targets) {
      add(seg.past_targets);
      add(seg.future_targets);
    } else {
      add(seg.past_covariates);
      add(seg.future_covariates);
    }
  }
  if (count == 0.0) return s;
  for (std::size_t c = 0; c < sum.size(); ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(0.0, sum2[c] / count - mean * mean);
    s.mean[c] = mean;
    s.std[c] = std::sqrt(var) > 1e-8 ? std::sqrt(var) : 1.0;
  }
  return s;
}

}  // namespace

ChannelStats target_statistics(const std::vector<SeriesSegment>& segments) {
  return stats_of(segments, kTargetChannels, true);
}

ChannelStats covariate_statistics(const std::vector<SeriesSegment>& segments) {
  return stats_of(segments, kCovariateChannels, false);
}

Dataset split_dataset(std::vector<SeriesSegment> segments, const DatasetOptions& options) {
  std::mt19937_64 rng(options.seed ^ 0x5eed5eedULL);
  std::shuffle(segments.begin(), segments.end(), rng);
  const auto n = segments.size();
  const auto n_val = static_cast<std::size_t>(std::lround(static_cast<double>(n) * options.validation_fraction));
  Dataset d;
  d.w = options.w;
  d.p = options.p;
  d.seed = options.seed;
  d.validation.assign(std::make_move_iterator(segments.end() - static_cast<std::ptrdiff_t>(n_val)),
                      std::make_move_iterator(segments.end()));
  segments.resize(n - n_val);
  d.train = std::move(segments);
  d.target_stats = target_statistics(d.train);
  d.covariate_stats = covariate_statistics(d.train);
  return d;
}

Dataset build_dataset(const std::vector<ProfileParams>& profiles, const ProcessSetup& setup,
                      const PowerBounds& bounds, const DatasetOptions& options) {
  if (profiles.empty()) throw ContractError("dataset: at least one profile required");
  std::vector<SeriesSegment> all;
  for (std::size_t r = 0; r < profiles.size(); ++r) {
    RunSeries run;
    try {
      const ProfileParams params = profiles[r];
      run = simulate_open_loop(setup, [&](double t) { return evaluate_profile(params, t, bounds); }, bounds);
    } catch (const NumericalDivergence& e) {
      throw NumericalDivergence(e.step(), "run " + std::to_string(r) + ": " + e.what());
    }
    auto segs = segment(run, options.w, options.p, options.smoothing_window);
    all.insert(all.end(), std::make_move_iterator(segs.begin()), std::make_move_iterator(segs.end()));
  }
  Dataset d = split_dataset(std::move(all), options);
  d.num_profiles = profiles.size();
  return d;
}

namespace {

constexpr char kSegmentMagic[8] = {'D', 'M', 'P', 'C', 'S', 'E', 'G', '1'};

void write_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

void read_matrix(std::ifstream& in, Eigen::MatrixXd& m, int rows, int cols) {
  m.resize(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      m(r, c) = v;
    }
  }
}

}  // namespace

void write_segments(const std::filesystem::path& file, const std::vector<SeriesSegment>& segments, int w, int p) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out.write(kSegmentMagic, sizeof kSegmentMagic);
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(p),
                                   static_cast<std::uint32_t>(segments.size())};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  for (const auto& s : segments) {
    write_matrix(out, s.past_targets);
    write_matrix(out, s.past_covariates);
    write_matrix(out, s.future_covariates);
    write_matrix(out, s.future_targets);
  }
}

std::vector<SeriesSegment> read_segments(const std::filesystem::path& file, int& w, int& p) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kSegmentMagic, sizeof magic) != 0) {
    throw std::runtime_error(file.string() + ": not a segment file");
  }
  std::uint32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  w = static_cast<int>(header[0]);
  p = static_cast<int>(header[1]);
  std::vector<SeriesSegment> out(header[2]);
  for (auto& s : out) {
    read_matrix(in, s.past_targets, w, kTargetChannels);
    read_matrix(in, s.past_covariates, w, kCovariateChannels);
    read_matrix(in, s.future_covariates, p, kCovariateChannels);
    read_matrix(in, s.future_targets, p, kTargetChannels);
  }
  if (!in) throw std::runtime_error(file.string() + ": truncated segment file");
  return out;
}

}  // namespace dedmpc
