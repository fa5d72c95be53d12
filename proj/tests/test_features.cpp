#include <doctest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "dedmpc/errors.hpp"
#include "dedmpc/meltpool_features.hpp"
#include "dedmpc/rbf.hpp"

using namespace dedmpc;

namespace {

// 25 x 25 x nz block, 0.5 mm voxels, centres on multiples of 0.5 in x and y,
// all layers active.
VoxelGrid block(int nz) {
  return VoxelGrid({25, 25, nz}, 0.5, {-6.25, -6.25, 0.0}, nz, 300.0);
}

template <class F>
void fill(VoxelGrid& g, F f) {
  for (std::size_t i = 0; i < g.dims().count(); ++i) {
    const Vec3 c = g.center(i);
    g.set_temperature(i, f(c.x, c.y, c.z));
  }
}

}  // namespace

TEST_SUITE("meltpool_features") {

TEST_CASE("rbf reproduces its nodes") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  for (int dims : {2, 3}) {
    Eigen::MatrixXd pts(40, dims);
    Eigen::VectorXd vals(40);
    for (int r = 0; r < 40; ++r) {
      for (int c = 0; c < dims; ++c) pts(r, c) = U(rng);
      vals(r) = 1000.0 + 300.0 * std::sin(pts(r, 0)) + 50.0 * pts(r, 1);
    }
    const RbfInterpolant f = RbfInterpolant::fit(pts, vals);
    double worst = 0.0;
    for (int r = 0; r < 40; ++r) {
      std::array<double, 3> x{};
      for (int c = 0; c < dims; ++c) x[static_cast<std::size_t>(c)] = pts(r, c);
      const double v = f.evaluate({x.data(), static_cast<std::size_t>(dims)});
      worst = std::max(worst, std::abs(v - vals(r)) / std::abs(vals(r)));
    }
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("rbf constant and plane reproduction") {
  Eigen::MatrixXd pts(4, 2);
  pts << 0, 0, 1, 0, 0, 1, 1, 1;
  Eigen::VectorXd c = Eigen::VectorXd::Constant(4, 7.5);
  const RbfInterpolant fc = RbfInterpolant::fit(pts, c);
  CHECK(fc(0.3, 0.6) == doctest::Approx(7.5).epsilon(1e-9));
  for (int r = 0; r < 4; ++r) CHECK(fc(pts(r, 0), pts(r, 1)) == doctest::Approx(7.5).epsilon(1e-10));

  Eigen::VectorXd plane(4);
  for (int r = 0; r < 4; ++r) plane(r) = 2 * pts(r, 0) + 3 * pts(r, 1);
  const RbfInterpolant fp = RbfInterpolant::fit(pts, plane);
  CHECK(fp(0.5, 0.5) == doctest::Approx(2.5).epsilon(1e-6));
  CHECK(std::abs(fp(0.5, 0.5) - 2.5) < 1e-6);
}

TEST_CASE("rbf rejects coincident points") {
  Eigen::MatrixXd pts(4, 2);
  pts << 0, 0, 1, 0, 1, 0, 1, 1;
  Eigen::VectorXd v(4);
  v << 1, 2, 3, 4;
  CHECK_THROWS_AS(RbfInterpolant::fit(pts, v), DegenerateGeometry);
}

TEST_CASE("temperature of uniform fields") {
  VoxelGrid g = block(3);
  fill(g, [](double, double, double) { return 2600.0; });
  FeatureConfig cfg;
  CHECK(extract_temperature(g, {0.0, 0.0, 1.5}, cfg) == doctest::Approx(1300.0).epsilon(1e-12));
  fill(g, [](double, double, double) { return 300.0; });
  cfg.calibration_scale = 1.0;
  CHECK(extract_temperature(g, {0.0, 0.0, 1.5}, cfg) == doctest::Approx(300.0).epsilon(1e-12));
}

TEST_CASE("gaussian bump matches its closed-form disc average") {
  const double T0 = 300.0;
  const double A = 1500.0;
  const double s = 1.5;
  VoxelGrid g = block(3);
  fill(g, [&](double x, double y, double) { return T0 + A * std::exp(-(x * x + y * y) / (s * s)); });
  FeatureConfig cfg;
  cfg.calibration_scale = 1.0;
  const double R = cfg.sensing_radius;
  const double exact = T0 + A * s * s / (R * R) * (1.0 - std::exp(-R * R / (s * s)));
  const double got = extract_temperature(g, {0.0, 0.0, 1.5}, cfg);
  CHECK(std::abs(got - exact) / exact < 0.01);

  // Refining the resampling grid changes the result by well under 0.5%.
  FeatureConfig fine = cfg;
  fine.fine_spacing = 0.1;
  CHECK(std::abs(extract_temperature(g, {0.0, 0.0, 1.5}, fine) - got) / got < 5e-3);
}

TEST_CASE("temperature stays within the scaled field range") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(300.0, 2500.0);
  FeatureConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    VoxelGrid g = block(3);
    double lo = 1e9;
    double hi = 0.0;
    for (std::size_t i = 0; i < g.dims().count(); ++i) {
      const double v = U(rng);
      g.set_temperature(i, v);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double t = extract_temperature(g, {0.25 * (trial % 2), 0.0, 1.5}, cfg);
    CHECK(t >= cfg.calibration_scale * lo);
    CHECK(t <= cfg.calibration_scale * hi);
  }
}

TEST_CASE("too few top-layer nodes") {
  VoxelGrid g({25, 25, 3}, 0.5, {-6.25, -6.25, 0.0}, 2, 300.0);
  g.activate(g.index(12, 12, 2), 300.0);
  g.activate(g.index(13, 12, 2), 300.0);
  CHECK_THROWS_AS(extract_temperature(g, {0.0, 0.0, 1.5}, FeatureConfig{}), InsufficientSupport);
  VoxelGrid empty({4, 4, 2}, 0.5, {}, 0, 300.0);
  CHECK_THROWS_AS(extract_depth(empty, {0.0, 0.0, 1.0}, 1658.0, FeatureConfig{}), InsufficientSupport);
}

TEST_CASE("depth saturation cases") {
  FeatureConfig cfg;
  VoxelGrid g = block(12);
  fill(g, [](double, double, double) { return 1000.0; });
  CHECK(extract_depth(g, {0.0, 0.0, 6.0}, 1658.0, cfg) == -0.75);
  fill(g, [](double, double, double) { return 2000.0; });
  CHECK(extract_depth(g, {0.0, 0.0, 6.0}, 1658.0, cfg) == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("constructed melt front depth") {
  FeatureConfig cfg;
  const double solidus = 1658.0;
  VoxelGrid g = block(12);
  const double top_z = 6.0;
  for (double front : {0.6, 1.0, 1.37, 2.2}) {
    // Linear in z, crossing the solidus exactly `front` mm below the top.
    fill(g, [&](double, double, double z) { return solidus + 400.0 * (z - (top_z - front)); });
    const double d = extract_depth(g, {0.0, 0.0, top_z}, solidus, cfg);
    CHECK(std::abs(d - (front - cfg.layer_height)) <= cfg.fine_spacing);
  }
  // Step profile: molten voxels down to 1.0 mm, cold below.
  fill(g, [&](double, double, double z) { return top_z - z < 1.0 ? 2200.0 : 900.0; });
  const double d = extract_depth(g, {0.0, 0.0, top_z}, solidus, cfg);
  CHECK(std::abs(d - 0.25) <= cfg.fine_spacing + 1e-12);
}

TEST_CASE("depth is monotone in field temperature") {
  FeatureConfig cfg;
  VoxelGrid g = block(12);
  double prev = -1e9;
  for (double shift = 0.0; shift <= 800.0; shift += 50.0) {
    fill(g, [&](double x, double y, double z) {
      return 600.0 + shift + 1800.0 * std::exp(-(x * x + y * y) / 2.0) * std::exp(-(6.0 - z) / 1.2);
    });
    const double d = extract_depth(g, {0.0, 0.0, 6.0}, 1658.0, cfg);
    CHECK(d >= prev - 1e-12);
    prev = d;
  }
}

TEST_CASE("moving average") {
  const std::vector<double> x{0.0, 4.0, 8.0, 12.0};
  CHECK(moving_average(x, 1) == x);
  const auto m = moving_average(x, 4);
  CHECK(m.size() == 4);
  CHECK(m[3] == 6.0);
  CHECK(m[1] == 2.0);
  const std::vector<double> c(7, 3.25);
  CHECK(moving_average(c, 4) == c);
}

}
