#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dedmpc/grid_plant.hpp"
#include "dedmpc/meltpool_features.hpp"
#include "dedmpc/toolpath.hpp"

namespace dedmpc {

/// Everything needed to simulate one build: path, mesh, material, plant and
/// sensing parameters, and the sampling cadence.
struct ProcessSetup {
  SquarePathSpec path;
  GridGeometry geometry;
  MaterialProps material;
  PlantConfig plant;
  FeatureConfig features;
  int plant_steps_per_sample = 5;

  void validate() const;
  double sample_period() const { return plant_steps_per_sample * plant.dt; }
  /// Sampling intervals needed to finish the last layer's scan.
  std::size_t num_samples() const;
};

/// Raw melt-pool reading after one plant step.
struct RawExtraction {
  double x_temp = 0.0;
  double x_depth = 0.0;
};

/// Geometry of one sampling interval: pose at its end, where it is measured.
struct SampleGeometry {
  LaserPose pose;
  Covariates cov;
};

/// Drives the plant along the toolpath, one sampling interval at a time.
/// Activation happens before every plant step; the power is held for the
/// whole interval and applied only while the path has the laser enabled.
class ProcessSimulator {
 public:
  using SnapshotHook = std::function<void(const VoxelGrid&, const LaserPose&, std::size_t sample)>;

  explicit ProcessSimulator(const ProcessSetup& setup);

  bool finished() const { return sample_ >= num_samples_; }
  std::size_t sample_index() const { return sample_; }
  std::size_t num_samples() const { return num_samples_; }
  double time() const { return plant_.time(); }

  /// Geometry at the end of sampling interval `sample` (pure function of the path).
  SampleGeometry geometry_of(std::size_t sample) const;

  /// Runs one sampling interval at power `u`. With `every_step` the features
  /// are extracted after each plant step, otherwise only after the last one.
  /// A failed extraction repeats the previous reading.
  std::vector<RawExtraction> advance(double u, bool every_step);

  void set_snapshot_hook(SnapshotHook hook) { hook_ = std::move(hook); }

  const GridPlant& plant() const { return plant_; }
  const ProcessSetup& setup() const { return setup_; }

  /// Extraction at an arbitrary pose with the fallback rule applied.
  RawExtraction extract(const LaserPose& pose);

 private:
  ProcessSetup setup_;
  GridPlant plant_;
  std::size_t sample_ = 0;
  std::size_t num_samples_ = 0;
  RawExtraction last_;
  SnapshotHook hook_;
};

}  // namespace dedmpc
