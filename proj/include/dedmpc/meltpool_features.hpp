#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dedmpc/grid_plant.hpp"

namespace dedmpc {

/// Emulated in-situ sensing parameters. Lengths in mm.
struct FeatureConfig {
  double window_half_width = 3.0;   // temperature support window, +/- in x and y
  double fine_spacing = 0.2;        // resampling grid
  double sensing_radius = 0.9;      // photodiode spot radius
  double depth_half_width = 0.75;   // depth box, +/- in x and y
  double depth_box_height = 4.0;    // depth box extent below the top surface
  double layer_height = 0.75;       // subtracted from the melt extent
  double calibration_scale = 0.5;   // conduction-only overestimate correction
};

struct MeltPoolSample {
  double x_temp = 0.0;   // K
  double x_depth = 0.0;  // mm, negative when the melt does not reach the previous layer
  std::size_t step_index = 0;
};

/// Area-weighted mean temperature over the sensing disc around the laser, from a 2-D
/// RBF fit of the active top-layer voxels, scaled by calibration_scale.
/// Throws InsufficientSupport when fewer than 4 nodes are available.
double extract_temperature(const VoxelGrid& grid, const Vec3& laser, const FeatureConfig& cfg);

/// Deepest molten point below the top surface (3-D RBF over the depth box)
/// minus the layer height. Throws InsufficientSupport below 5 nodes.
double extract_depth(const VoxelGrid& grid, const Vec3& laser, double solidus_T, const FeatureConfig& cfg);

/// Causal moving average; the first window-1 outputs average what is available.
std::vector<double> moving_average(std::span<const double> series, int window);

}  // namespace dedmpc
