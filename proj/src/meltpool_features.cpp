#include "dedmpc/meltpool_features.hpp"

#include <algorithm>
#include <cmath>

#include "dedmpc/errors.hpp"
#include "dedmpc/rbf.hpp"

namespace dedmpc {

namespace {

struct Support {
  Eigen::MatrixXd points;
  Eigen::VectorXd values;
  double lo = 0.0;
  double hi = 0.0;
};

// Collects active voxels within the axis-aligned box around `laser` restricted
// to z-layers [k_lo, k_hi]. `dims` selects 2-D (x,y) or 3-D coordinates.
Support collect(const VoxelGrid& grid, const Vec3& laser, double half, int k_lo, int k_hi, int dims) {
  const auto& d = grid.dims();
  const double h = grid.spacing();
  const auto& o = grid.origin();
  const double eps = 1e-9;
  const int i_lo = std::max(0, static_cast<int>(std::floor((laser.x - half - o.x) / h)) - 1);
  const int i_hi = std::min(d.nx - 1, static_cast<int>(std::ceil((laser.x + half - o.x) / h)) + 1);
  const int j_lo = std::max(0, static_cast<int>(std::floor((laser.y - half - o.y) / h)) - 1);
  const int j_hi = std::min(d.ny - 1, static_cast<int>(std::ceil((laser.y + half - o.y) / h)) + 1);
  std::vector<double> coords;
  std::vector<double> vals;
  for (int k = std::max(0, k_lo); k <= std::min(d.nz - 1, k_hi); ++k) {
    for (int j = j_lo; j <= j_hi; ++j) {
      for (int i = i_lo; i <= i_hi; ++i) {
        const std::size_t idx = grid.index(i, j, k);
        if (!grid.active(idx)) continue;
        const Vec3 c = grid.center(i, j, k);
        if (std::abs(c.x - laser.x) > half + eps || std::abs(c.y - laser.y) > half + eps) continue;
        coords.push_back(c.x);
        coords.push_back(c.y);
        if (dims == 3) coords.push_back(c.z);
        vals.push_back(grid.temperature(idx));
      }
    }
  }
  Support s;
  const auto n = static_cast<Eigen::Index>(vals.size());
  s.points.resize(n, dims);
  s.values.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int c = 0; c < dims; ++c) s.points(r, c) = coords[static_cast<std::size_t>(r * dims + c)];
    s.values(r) = vals[static_cast<std::size_t>(r)];
  }
  if (n > 0) {
    s.lo = s.values.minCoeff();
    s.hi = s.values.maxCoeff();
  }
  return s;
}

struct DiscCell {
  double dx = 0.0;
  double dy = 0.0;
  double weight = 0.0;
};

// Fine-grid points around the laser, each weighted by the fraction of its
// spacing x spacing cell inside the sensing disc.
const std::vector<DiscCell>& disc_cells(double radius, double spacing) {
  thread_local double cached_radius = -1.0;
  thread_local double cached_spacing = -1.0;
  thread_local std::vector<DiscCell> cells;
  if (radius == cached_radius && spacing == cached_spacing) return cells;
  constexpr int kSub = 16;
  cells.clear();
  const int n = static_cast<int>(std::ceil(radius / spacing)) + 1;
  const double r2 = radius * radius;
  for (int a = -n; a <= n; ++a) {
    for (int b = -n; b <= n; ++b) {
      int inside = 0;
      for (int p = 0; p < kSub; ++p) {
        for (int q = 0; q < kSub; ++q) {
          const double x = (a - 0.5 + (p + 0.5) / kSub) * spacing;
          const double y = (b - 0.5 + (q + 0.5) / kSub) * spacing;
          if (x * x + y * y <= r2) ++inside;
        }
      }
      if (inside > 0) cells.push_back({a * spacing, b * spacing, static_cast<double>(inside) / (kSub * kSub)});
    }
  }
  cached_radius = radius;
  cached_spacing = spacing;
  return cells;
}

}  // namespace

double extract_temperature(const VoxelGrid& grid, const Vec3& laser, const FeatureConfig& cfg) {
  const int top = grid.top_active_layer();
  if (top < 0) throw InsufficientSupport("temperature: no active voxels");
  const Support s = collect(grid, laser, cfg.window_half_width, top, top, 2);
  if (s.values.size() < 4) throw InsufficientSupport("temperature: fewer than 4 top-layer nodes near the laser");
  const RbfInterpolant rbf = RbfInterpolant::fit(s.points, s.values);

  double sum = 0.0;
  double weight = 0.0;
  for (const auto& c : disc_cells(cfg.sensing_radius, cfg.fine_spacing)) {
    // Resampled values are held inside the sampled range.
    sum += c.weight * std::clamp(rbf(laser.x + c.dx, laser.y + c.dy), s.lo, s.hi);
    weight += c.weight;
  }
  return cfg.calibration_scale * sum / weight;
}

double extract_depth(const VoxelGrid& grid, const Vec3& laser, double solidus_T, const FeatureConfig& cfg) {
  const int top = grid.top_active_layer();
  if (top < 0) throw InsufficientSupport("depth: no active voxels");
  const double h = grid.spacing();
  const double top_z = grid.center_z(top) + 0.5 * h;
  const double bottom_z = top_z - cfg.depth_box_height;
  const int k_lo = static_cast<int>(std::ceil((bottom_z - grid.origin().z) / h - 0.5 - 1e-9));
  const Support s = collect(grid, laser, cfg.depth_half_width, k_lo, top, 3);
  if (s.values.size() < 5) throw InsufficientSupport("depth: fewer than 5 nodes in the depth box");
  if (s.hi < solidus_T) return -cfg.layer_height;

  const RbfInterpolant rbf = RbfInterpolant::fit(s.points, s.values);
  const int nxy = static_cast<int>(std::floor(cfg.depth_half_width / cfg.fine_spacing + 1e-9));
  const int nz = static_cast<int>(std::floor(cfg.depth_box_height / cfg.fine_spacing + 1e-9));
  // Hottest resampled value on each fine z-level, top (c = 0) to bottom.
  std::vector<double> level_max(static_cast<std::size_t>(nz + 1), s.lo);
  for (int c = 0; c <= nz; ++c) {
    const double z = top_z - c * cfg.fine_spacing;
    double& m = level_max[static_cast<std::size_t>(c)];
    for (int a = -nxy; a <= nxy; ++a) {
      for (int b = -nxy; b <= nxy; ++b) {
        m = std::max(m, rbf(laser.x + a * cfg.fine_spacing, laser.y + b * cfg.fine_spacing, z));
      }
    }
    m = std::clamp(m, s.lo, s.hi);
  }
  for (int c = nz; c >= 0; --c) {
    const double m = level_max[static_cast<std::size_t>(c)];
    if (m < solidus_T) continue;
    double extent = c * cfg.fine_spacing;
    if (c < nz) {
      // Linear crossing between the deepest molten level and the one below.
      const double below = level_max[static_cast<std::size_t>(c + 1)];
      extent += cfg.fine_spacing * (m - solidus_T) / (m - below);
    }
    return extent - cfg.layer_height;
  }
  return -cfg.layer_height;
}

std::vector<double> moving_average(std::span<const double> series, int window) {
  const auto w = static_cast<std::size_t>(std::max(window, 1));
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t count = std::min(i + 1, w);
    double sum = 0.0;
    for (std::size_t j = i + 1 - count; j <= i; ++j) sum += series[j];
    out[i] = sum / static_cast<double>(count);
  }
  return out;
}

}  // namespace dedmpc
