#include "dedmpc/toolpath.hpp"

#include <algorithm>
#include <cmath>

#include "dedmpc/errors.hpp"

namespace dedmpc {

void SquarePathSpec::validate() const {
  if (!(side_length > 0.0)) throw ConfigError("path.side_length", "must be positive");
  if (!(track_width > 0.0)) throw ConfigError("path.track_width", "must be positive");
  if (!(layer_height > 0.0)) throw ConfigError("path.layer_height", "must be positive");
  if (num_layers < 1) throw ConfigError("path.num_layers", "must be at least 1");
  if (!(scan_speed > 0.0)) throw ConfigError("path.scan_speed", "must be positive");
  if (interlayer_dwell < 0.0) throw ConfigError("path.interlayer_dwell", "must be non-negative");
}

LaserPose laser_pose(const SquarePathSpec& spec, double t) {
  LaserPose pose;
  t = std::max(t, 0.0);
  const double period = spec.layer_period();
  const int layer = static_cast<int>(std::floor(t / period)) + 1;
  if (layer > spec.num_layers) {
    pose.layer = spec.num_layers;
    pose.position = {0.0, 0.0, spec.layer_height * spec.num_layers};
    pose.enabled = false;
    return pose;
  }
  pose.layer = layer;
  const double L = spec.side_length;
  const double s = (t - (layer - 1) * period) * spec.scan_speed;
  double x = 0.0;
  double y = 0.0;
  if (s >= 4.0 * L) {
    pose.enabled = false;  // dwell at the start corner
  } else {
    pose.enabled = true;
    if (s < L) {
      x = s;
    } else if (s < 2.0 * L) {
      x = L;
      y = s - L;
    } else if (s < 3.0 * L) {
      x = 3.0 * L - s;
      y = L;
    } else {
      y = 4.0 * L - s;
    }
  }
  pose.position = {x, y, spec.layer_height * layer};
  return pose;
}

Covariates covariates_at(const SquarePathSpec& spec, const Vec3& position) {
  const double L = spec.side_length;
  Covariates c;
  c.d_x = std::max(0.0, std::min(position.x, L - position.x));
  c.d_y = std::max(0.0, std::min(position.y, L - position.y));
  c.z = position.z;
  return c;
}

VoxelGrid make_square_wall_grid(const SquarePathSpec& spec, const GridGeometry& geometry, double ambient_T0) {
  spec.validate();
  const double h = geometry.spacing;
  if (!(h > 0.0)) throw ConfigError("grid.spacing", "must be positive");
  if (geometry.margin < 0.0) throw ConfigError("grid.margin", "must be non-negative");
  const double per_layer = spec.layer_height / h;
  const int voxels_per_layer = static_cast<int>(std::lround(per_layer));
  if (voxels_per_layer < 1 || std::abs(per_layer - voxels_per_layer) > 1e-9) {
    throw ConfigError("path.layer_height", "must be an integer multiple of grid.spacing");
  }
  const double L = spec.side_length;
  const int margin_cells = static_cast<int>(std::ceil(geometry.margin / h - 1e-9));
  const int span_cells = static_cast<int>(std::lround(L / h));
  if (std::abs(L / h - span_cells) > 1e-9) {
    throw ConfigError("path.side_length", "must be an integer multiple of grid.spacing");
  }
  GridDims dims;
  dims.nx = span_cells + 1 + 2 * margin_cells;
  dims.ny = dims.nx;
  dims.nz = geometry.substrate_layers + voxels_per_layer * spec.num_layers;
  // Center of cell i sits at (i - margin_cells) * h; substrate top at z = 0.
  const Vec3 origin{-(margin_cells + 0.5) * h, -(margin_cells + 0.5) * h, -geometry.substrate_layers * h};
  VoxelGrid grid(dims, h, origin, geometry.substrate_layers, ambient_T0);

  const double half = 0.5 * spec.track_width;
  const double eps = 1e-9;
  for (int k = geometry.substrate_layers; k < dims.nz; ++k) {
    const int layer = (k - geometry.substrate_layers) / voxels_per_layer + 1;
    for (int j = 0; j < dims.ny; ++j) {
      for (int i = 0; i < dims.nx; ++i) {
        const Vec3 c = grid.center(i, j, k);
        const bool in_outer = c.x >= -half - eps && c.x <= L + half + eps && c.y >= -half - eps && c.y <= L + half + eps;
        const bool in_inner = c.x > half + eps && c.x < L - half - eps && c.y > half + eps && c.y < L - half - eps;
        if (in_outer && !in_inner) grid.set_part_layer(grid.index(i, j, k), layer);
      }
    }
  }
  return grid;
}

}  // namespace dedmpc
