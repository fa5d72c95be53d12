#include "dedmpc/process_sim.hpp"

#include <cmath>

#include "dedmpc/errors.hpp"

namespace dedmpc {

void ProcessSetup::validate() const {
  path.validate();
  material.validate();
  if (!(geometry.spacing > 0.0)) throw ConfigError("grid.spacing", "must be positive");
  if (!(plant.dt > 0.0 && plant.dt <= stability_limit(material, geometry.spacing))) {
    throw ConfigError("plant.dt", "must be positive and within the explicit stability limit " +
                                      std::to_string(stability_limit(material, geometry.spacing)) + " s");
  }
  if (plant_steps_per_sample < 1) throw ConfigError("plant.plant_steps_per_sample", "must be at least 1");
  if (!(features.fine_spacing > 0.0)) throw ConfigError("features.fine_spacing", "must be positive");
  if (!(features.sensing_radius > 0.0)) throw ConfigError("features.sensing_radius", "must be positive");
}

std::size_t ProcessSetup::num_samples() const {
  return static_cast<std::size_t>(std::floor(path.total_time() / sample_period() + 1e-9));
}

namespace {

GridPlant build_plant(const ProcessSetup& setup) {
  setup.validate();
  return GridPlant(make_square_wall_grid(setup.path, setup.geometry, setup.plant.ambient_T0), setup.material,
                   setup.plant);
}

}  // namespace

ProcessSimulator::ProcessSimulator(const ProcessSetup& setup)
    : setup_(setup), plant_(build_plant(setup)), num_samples_(setup.num_samples()) {
  setup_.features.layer_height = setup_.path.layer_height;
  last_.x_temp = setup_.plant.ambient_T0 * setup_.features.calibration_scale;
  last_.x_depth = -setup_.features.layer_height;
}

SampleGeometry ProcessSimulator::geometry_of(std::size_t sample) const {
  const double t_end = static_cast<double>((sample + 1) * setup_.plant_steps_per_sample) * setup_.plant.dt;
  SampleGeometry g;
  g.pose = laser_pose(setup_.path, t_end);
  g.cov = covariates_at(setup_.path, g.pose.position);
  return g;
}

RawExtraction ProcessSimulator::extract(const LaserPose& pose) {
  const VoxelGrid& grid = plant_.grid();
  try {
    last_.x_temp = extract_temperature(grid, pose.position, setup_.features);
  } catch (const InsufficientSupport&) {
  } catch (const DegenerateGeometry&) {
  }
  try {
    last_.x_depth = extract_depth(grid, pose.position, setup_.material.solidus_T, setup_.features);
  } catch (const InsufficientSupport&) {
  } catch (const DegenerateGeometry&) {
  }
  return last_;
}

std::vector<RawExtraction> ProcessSimulator::advance(double u, bool every_step) {
  std::vector<RawExtraction> out;
  const int n = setup_.plant_steps_per_sample;
  out.reserve(every_step ? static_cast<std::size_t>(n) : 1U);
  LaserPose pose;
  for (int s = 0; s < n; ++s) {
    pose = laser_pose(setup_.path, plant_.time());
    LaserState laser;
    laser.position = pose.position;
    laser.enabled = pose.enabled;
    laser.power = pose.enabled ? u : 0.0;
    plant_.activate_elements(laser, setup_.path.layer_height);
    plant_.step(laser);
    if (every_step || s + 1 == n) {
      const LaserPose measured = laser_pose(setup_.path, plant_.time());
      out.push_back(extract(measured));
      pose = measured;
    }
  }
  if (hook_) hook_(plant_.grid(), pose, sample_);
  ++sample_;
  return out;
}

}  // namespace dedmpc
