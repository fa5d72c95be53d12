#pragma once

#include "dedmpc/grid_plant.hpp"

namespace dedmpc {

/// Single-track square wall, traversed counterclockwise from the (0,0)
/// corner, one perimeter per layer with the laser off during the dwell.
struct SquarePathSpec {
  double side_length = 40.0;   // mm
  double track_width = 1.5;    // mm
  double layer_height = 0.75;  // mm
  int num_layers = 10;
  double scan_speed = 7.0;     // mm/s
  double interlayer_dwell = 1.0;  // s

  void validate() const;
  double layer_scan_time() const { return 4.0 * side_length / scan_speed; }
  double layer_period() const { return layer_scan_time() + interlayer_dwell; }
  /// Time at which the last layer's scan ends.
  double total_time() const { return num_layers * layer_period() - interlayer_dwell; }
};

struct LaserPose {
  Vec3 position;
  bool enabled = false;
  int layer = 1;
};

struct Covariates {
  double d_x = 0.0;
  double d_y = 0.0;
  double z = 0.0;
};

LaserPose laser_pose(const SquarePathSpec& spec, double t);

/// Distances to the nearest pair of parallel boundary edges, plus z.
Covariates covariates_at(const SquarePathSpec& spec, const Vec3& position);

inline bool near_corner(const Covariates& cov, double threshold = 2.0) {
  return cov.d_x <= threshold && cov.d_y <= threshold;
}

struct GridGeometry {
  double spacing = 0.5;       // mm
  double margin = 1.5;        // mm of substrate around the wall footprint
  int substrate_layers = 6;
};

/// Builds the substrate + part voxel grid for a square wall. Voxel centers are
/// aligned so that the scan lines x,y in {0, L} pass through centers; part
/// voxels are those whose centers fall inside the square ring of the track.
VoxelGrid make_square_wall_grid(const SquarePathSpec& spec, const GridGeometry& geometry, double ambient_T0);

}  // namespace dedmpc
