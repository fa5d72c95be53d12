#include "dedmpc/grid_plant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dedmpc/errors.hpp"

namespace dedmpc {

PiecewiseLinear::PiecewiseLinear(std::vector<double> breakpoints, std::vector<double> values)
    : x_(std::move(breakpoints)), y_(std::move(values)) {
  if (x_.empty() || x_.size() != y_.size()) {
    throw ConfigError("table", "breakpoints and values must be non-empty and equal length");
  }
}

PiecewiseLinear PiecewiseLinear::constant(double value) { return PiecewiseLinear({300.0}, {value}); }

double PiecewiseLinear::operator()(double x) const {
  if (x <= x_.front()) return y_.front();
  if (x >= x_.back()) return y_.back();
  const auto it = std::upper_bound(x_.begin(), x_.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - x_.begin());
  const std::size_t lo = hi - 1;
  const double f = (x - x_[lo]) / (x_[hi] - x_[lo]);
  return y_[lo] + f * (y_[hi] - y_[lo]);
}

namespace {

void validate_table(const PiecewiseLinear& table, const char* name) {
  const auto& x = table.breakpoints();
  const auto& y = table.values();
  if (x.empty()) throw ConfigError(name, "empty table");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0) || !std::isfinite(y[i])) throw ConfigError(name, "table values must be positive");
    if (i > 0 && !(x[i] > x[i - 1])) throw ConfigError(name, "breakpoints must be strictly increasing");
  }
}

}  // namespace

void MaterialProps::validate() const {
  if (!(density > 0.0)) throw ConfigError("material.density", "must be positive");
  validate_table(cp, "material.cp");
  validate_table(k, "material.k");
  if (emissivity < 0.0 || emissivity > 1.0) throw ConfigError("material.emissivity", "must lie in [0,1]");
  if (absorption < 0.0 || absorption > 1.0) throw ConfigError("material.absorption", "must lie in [0,1]");
  if (!(solidus_T < liquidus_T)) throw ConfigError("material.solidus", "solidus must be below liquidus");
}

VoxelGrid::VoxelGrid(GridDims dims, double spacing, Vec3 origin, int substrate_layers, double ambient_T0)
    : dims_(dims), spacing_(spacing), origin_(origin), substrate_layers_(substrate_layers) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw ConfigError("grid.dims", "must be positive");
  if (!(spacing > 0.0)) throw ConfigError("grid.spacing", "must be positive");
  if (substrate_layers < 0 || substrate_layers > dims.nz) {
    throw ConfigError("grid.substrate_layers", "must lie in [0, nz]");
  }
  const std::size_t n = dims.count();
  temperature_.assign(n, ambient_T0);
  active_.assign(n, 0);
  pinned_.assign(n, 0);
  part_layer_.assign(n, 0);
  for (int k = 0; k < substrate_layers; ++k) {
    for (int j = 0; j < dims.ny; ++j) {
      for (int i = 0; i < dims.nx; ++i) active_[index(i, j, k)] = 1;
    }
  }
}

std::array<int, 3> VoxelGrid::coords(std::size_t idx) const {
  const int i = static_cast<int>(idx % dims_.nx);
  const int j = static_cast<int>((idx / dims_.nx) % dims_.ny);
  const int k = static_cast<int>(idx / (static_cast<std::size_t>(dims_.nx) * dims_.ny));
  return {i, j, k};
}

Vec3 VoxelGrid::center(int i, int j, int k) const {
  return {origin_.x + (i + 0.5) * spacing_, origin_.y + (j + 0.5) * spacing_, center_z(k)};
}

Vec3 VoxelGrid::center(std::size_t idx) const {
  const auto [i, j, k] = coords(idx);
  return center(i, j, k);
}

void VoxelGrid::activate(std::size_t idx, double temperature) {
  if (active_[idx]) return;
  active_[idx] = 1;
  temperature_[idx] = temperature;
}

std::size_t VoxelGrid::active_count() const {
  return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), std::uint8_t{1}));
}

void VoxelGrid::set_part_layer(std::size_t idx, int layer) { part_layer_[idx] = static_cast<std::int16_t>(layer); }

void VoxelGrid::pin(std::size_t idx, double temperature) {
  pinned_[idx] = 1;
  temperature_[idx] = temperature;
}

int VoxelGrid::top_active_layer() const {
  const std::size_t layer_size = static_cast<std::size_t>(dims_.nx) * dims_.ny;
  for (int k = dims_.nz - 1; k >= 0; --k) {
    const auto begin = active_.begin() + static_cast<std::ptrdiff_t>(k * layer_size);
    if (std::find(begin, begin + static_cast<std::ptrdiff_t>(layer_size), std::uint8_t{1}) !=
        begin + static_cast<std::ptrdiff_t>(layer_size)) {
      return k;
    }
  }
  return -1;
}

double stability_limit(const MaterialProps& props, double spacing) {
  props.validate();
  if (!(spacing > 0.0)) throw ConfigError("grid.spacing", "must be positive");
  std::vector<double> probe = props.cp.breakpoints();
  probe.insert(probe.end(), props.k.breakpoints().begin(), props.k.breakpoints().end());
  const auto [lo_it, hi_it] = std::minmax_element(probe.begin(), probe.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  // Breakpoints plus a dense sweep; the ratio of two piecewise-linear
  // functions can dip between breakpoints.
  constexpr int kSweep = 1000;
  for (int s = 0; s <= kSweep && hi > lo; ++s) probe.push_back(lo + (hi - lo) * s / kSweep);
  double best = std::numeric_limits<double>::infinity();
  for (double T : probe) {
    best = std::min(best, props.density * props.cp(T) * spacing * spacing / (6.0 * props.k(T)));
  }
  return best;
}

double gaussian_laser_flux(double power, double eta, double r_beam, double d) {
  if (!(r_beam > 0.0)) throw ConfigError("plant.beam_radius", "must be positive");
  if (power <= 0.0) return 0.0;
  const double r2 = r_beam * r_beam;
  return 2.0 * eta * power / (std::numbers::pi * r2) * std::exp(-2.0 * d * d / r2);
}

double boundary_fluxes(double T, double T0, double h_conv, double emissivity, double stefan_boltzmann) {
  const double T2 = T * T;
  const double T02 = T0 * T0;
  return h_conv * (T - T0) + stefan_boltzmann * emissivity * (T2 * T2 - T02 * T02);
}

GridPlant::GridPlant(VoxelGrid grid, MaterialProps props, PlantConfig cfg)
    : grid_(std::move(grid)), props_(std::move(props)), cfg_(cfg) {
  props_.validate();
  if (!(cfg_.dt > 0.0)) throw ConfigError("plant.dt", "must be positive");
  if (!(cfg_.beam_radius > 0.0)) throw ConfigError("plant.beam_radius", "must be positive");
  if (!(cfg_.ambient_T0 > 0.0)) throw ConfigError("plant.ambient_T0", "must be positive");
  dt_max_ = stability_limit(props_, grid_.spacing());
  if (cfg_.dt > dt_max_) {
    throw ConfigError("plant.dt", "exceeds explicit stability limit " + std::to_string(dt_max_) + " s");
  }
  if (cfg_.fixed_bottom) {
    const auto& d = grid_.dims();
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        const std::size_t idx = grid_.index(i, j, 0);
        if (grid_.active(idx)) grid_.pin(idx, cfg_.ambient_T0);
      }
    }
  }
  scratch_.resize(grid_.dims().count());
}

std::size_t GridPlant::activate_elements(const LaserState& laser, double layer_height) {
  if (!laser.enabled || !(layer_height > 0.0)) return 0;
  const int layer = static_cast<int>(std::lround(laser.position.z / layer_height));
  if (layer < 1) return 0;
  const auto& d = grid_.dims();
  const double r = cfg_.beam_radius;
  const double h = grid_.spacing();
  const auto& o = grid_.origin();
  const int i_lo = std::max(0, static_cast<int>(std::floor((laser.position.x - r - o.x) / h)));
  const int i_hi = std::min(d.nx - 1, static_cast<int>(std::ceil((laser.position.x + r - o.x) / h)));
  const int j_lo = std::max(0, static_cast<int>(std::floor((laser.position.y - r - o.y) / h)));
  const int j_hi = std::min(d.ny - 1, static_cast<int>(std::ceil((laser.position.y + r - o.y) / h)));
  std::size_t switched = 0;
  for (int k = grid_.substrate_layers(); k < d.nz; ++k) {
    for (int j = j_lo; j <= j_hi; ++j) {
      for (int i = i_lo; i <= i_hi; ++i) {
        const std::size_t idx = grid_.index(i, j, k);
        if (grid_.active(idx) || grid_.part_layer(idx) != layer) continue;
        const Vec3 c = grid_.center(i, j, k);
        const double dx = c.x - laser.position.x;
        const double dy = c.y - laser.position.y;
        if (dx * dx + dy * dy < r * r) {
          grid_.activate(idx, cfg_.ambient_T0);
          ++switched;
        }
      }
    }
  }
  return switched;
}

void GridPlant::step(const LaserState& laser) {
  const auto& d = grid_.dims();
  const double h = grid_.spacing();
  const double area = h * h;
  const double volume = area * h;
  const double T0 = cfg_.ambient_T0;
  const bool heating = laser.enabled && laser.power > 0.0;
  const double cutoff2 = 9.0 * cfg_.beam_radius * cfg_.beam_radius;
  const std::span<const double> T = grid_.temperatures();
  std::copy(T.begin(), T.end(), scratch_.begin());

  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(d.nx);
  const std::size_t sz = static_cast<std::size_t>(d.nx) * d.ny;

  for (int k = 0; k < d.nz; ++k) {
    for (int j = 0; j < d.ny; ++j) {
      for (int i = 0; i < d.nx; ++i) {
        const std::size_t idx = grid_.index(i, j, k);
        if (!grid_.active(idx) || grid_.pinned(idx)) continue;
        const double Ti = T[idx];
        const double ki = props_.k(Ti);
        double q = 0.0;    // W into the voxel
        double loss = 0.0; // W/mm^2 per exposed face, computed lazily
        bool loss_ready = false;
        auto exposed_face = [&]() {
          if (!loss_ready) {
            loss = boundary_fluxes(Ti, T0, cfg_.h_conv, props_.emissivity, cfg_.stefan_boltzmann);
            loss_ready = true;
          }
          q -= loss * area;
        };
        auto neighbour = [&](bool inside, std::size_t nidx) {
          if (inside && grid_.active(nidx)) {
            const double Tn = T[nidx];
            // Face conductance uses the mean conductivity; symmetric in i<->n.
            q += 0.5 * (ki + props_.k(Tn)) * h * (Tn - Ti);
          } else {
            exposed_face();
          }
        };
        neighbour(i > 0, idx - sx);
        neighbour(i + 1 < d.nx, idx + sx);
        neighbour(j > 0, idx - sy);
        neighbour(j + 1 < d.ny, idx + sy);
        // The grid's bottom face never exchanges heat with ambient.
        if (k > 0) neighbour(true, idx - sz);
        const bool top_inside = k + 1 < d.nz;
        neighbour(top_inside, top_inside ? idx + sz : idx);
        if (heating && !(top_inside && grid_.active(idx + sz))) {
          const Vec3 c = grid_.center(i, j, k);
          const double dx = c.x - laser.position.x;
          const double dy = c.y - laser.position.y;
          const double d2 = dx * dx + dy * dy;
          if (d2 <= cutoff2) {
            q += gaussian_laser_flux(laser.power, props_.absorption, cfg_.beam_radius, std::sqrt(d2)) * area;
          }
        }
        const double capacity = props_.density * props_.cp(Ti) * volume;
        scratch_[idx] = Ti + cfg_.dt * q / capacity;
      }
    }
  }

  ++step_index_;
  auto out = grid_.temperatures_mut();
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    const double v = scratch_[idx];
    if (!std::isfinite(v) || v > 1.0e7 || (grid_.active(idx) && v <= 0.0)) {
      throw NumericalDivergence(step_index_, "temperature left the finite positive range");
    }
    out[idx] = v;
  }
}

double GridPlant::enthalpy() const {
  const double volume = std::pow(grid_.spacing(), 3);
  double total = 0.0;
  for (std::size_t idx = 0; idx < grid_.dims().count(); ++idx) {
    if (!grid_.active(idx)) continue;
    const double T = grid_.temperature(idx);
    total += props_.density * props_.cp(T) * volume * T;
  }
  return total;
}

}  // namespace dedmpc
