#pragma once

// Explicit transient heat conduction on a uniform voxel grid with element
// activation. Units are mm, g, s, K throughout (fluxes in W/mm^2).

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace dedmpc {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Piecewise-linear lookup, clamped to the end values outside the breakpoints.
class PiecewiseLinear {
 public:
  PiecewiseLinear() = default;
  PiecewiseLinear(std::vector<double> breakpoints, std::vector<double> values);
  static PiecewiseLinear constant(double value);

  double operator()(double x) const;
  const std::vector<double>& breakpoints() const { return x_; }
  const std::vector<double>& values() const { return y_; }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
};

struct MaterialProps {
  double density = 8.0e-3;  // g/mm^3
  PiecewiseLinear cp = PiecewiseLinear::constant(0.5);    // J/g/K
  PiecewiseLinear k = PiecewiseLinear::constant(0.02);    // W/mm/K
  double emissivity = 0.4;
  double absorption = 0.4;
  double solidus_T = 1658.0;
  double liquidus_T = 1723.0;

  /// Throws ConfigError when a table value is non-positive, breakpoints are
  /// not strictly increasing, or solidus >= liquidus.
  void validate() const;
};

inline constexpr double kStefanBoltzmann = 5.67e-14;  // W/mm^2/K^4

struct PlantConfig {
  double dt = 0.00714;          // s
  double ambient_T0 = 300.0;    // K
  double h_conv = 1.0e-5;       // W/mm^2/K
  double stefan_boltzmann = kStefanBoltzmann;
  double beam_radius = 0.9;     // mm
  bool fixed_bottom = true;     // Dirichlet T0 on the lowest z-layer
};

struct LaserState {
  Vec3 position;
  double power = 0.0;  // W
  bool enabled = false;
};

struct GridDims {
  int nx = 0;
  int ny = 0;
  int nz = 0;
  std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
};

/// Temperature and activation state of every voxel. Part voxels carry the
/// 1-based deposition layer they belong to; substrate voxels carry 0 and are
/// active from the start.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(GridDims dims, double spacing, Vec3 origin, int substrate_layers, double ambient_T0);

  const GridDims& dims() const { return dims_; }
  double spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  int substrate_layers() const { return substrate_layers_; }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims_.ny + j) * dims_.nx + i;
  }
  std::array<int, 3> coords(std::size_t idx) const;
  Vec3 center(int i, int j, int k) const;
  Vec3 center(std::size_t idx) const;
  double center_z(int k) const { return origin_.z + (k + 0.5) * spacing_; }

  double temperature(std::size_t idx) const { return temperature_[idx]; }
  void set_temperature(std::size_t idx, double value) { temperature_[idx] = value; }
  std::span<const double> temperatures() const { return temperature_; }
  std::span<double> temperatures_mut() { return temperature_; }

  bool active(std::size_t idx) const { return active_[idx] != 0; }
  void activate(std::size_t idx, double temperature);
  std::size_t active_count() const;

  /// Deposition layer of a part voxel (>= 1), or 0 when not part of the build.
  int part_layer(std::size_t idx) const { return part_layer_[idx]; }
  void set_part_layer(std::size_t idx, int layer);

  bool pinned(std::size_t idx) const { return pinned_[idx] != 0; }
  /// Holds the voxel at a fixed temperature (Dirichlet node).
  void pin(std::size_t idx, double temperature);

  /// Highest z-layer index containing an active voxel, or -1.
  int top_active_layer() const;

  std::span<const std::uint8_t> active_mask() const { return active_; }

 private:
  GridDims dims_;
  double spacing_ = 1.0;
  Vec3 origin_;
  int substrate_layers_ = 0;
  std::vector<double> temperature_;
  std::vector<std::uint8_t> active_;
  std::vector<std::uint8_t> pinned_;
  std::vector<std::int16_t> part_layer_;
};

/// Largest stable explicit step: min over the property range of
/// rho*Cp(T)*h^2 / (6*k(T)).
double stability_limit(const MaterialProps& props, double spacing);

/// Gaussian surface heat input (W/mm^2), positive into the surface.
double gaussian_laser_flux(double power, double eta, double r_beam, double d);

/// Convective plus radiative loss (W/mm^2), positive out of the surface.
double boundary_fluxes(double T, double T0, double h_conv, double emissivity,
                       double stefan_boltzmann = kStefanBoltzmann);

/// Owns one voxel grid and advances it with forward-Euler steps.
class GridPlant {
 public:
  GridPlant(VoxelGrid grid, MaterialProps props, PlantConfig cfg);

  /// Activates part voxels of the laser's current layer whose centers lie
  /// strictly within beam_radius (horizontally) of the laser. Returns the
  /// number of voxels switched on.
  std::size_t activate_elements(const LaserState& laser, double layer_height);

  /// One explicit step. Throws NumericalDivergence on NaN/overflow.
  void step(const LaserState& laser);

  const VoxelGrid& grid() const { return grid_; }
  VoxelGrid& grid_mut() { return grid_; }
  const MaterialProps& props() const { return props_; }
  const PlantConfig& config() const { return cfg_; }
  std::size_t step_index() const { return step_index_; }
  double time() const { return static_cast<double>(step_index_) * cfg_.dt; }
  double max_stable_dt() const { return dt_max_; }

  /// Total enthalpy sum(rho*Cp*V*T) over active voxels (J, relative to 0 K).
  double enthalpy() const;

 private:
  VoxelGrid grid_;
  MaterialProps props_;
  PlantConfig cfg_;
  double dt_max_ = 0.0;
  std::size_t step_index_ = 0;
  std::vector<double> scratch_;
};

}  // namespace dedmpc
