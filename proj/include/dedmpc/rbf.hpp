#pragma once

#include <span>

#include <Eigen/Dense>

namespace dedmpc {

/// Multiquadric RBF interpolant phi(r) = sqrt(r^2 + c^2) with a polynomial
/// tail: linear when the support spans its dimension affinely, constant
/// otherwise. Exact at the centers up to the diagonal jitter.
class RbfInterpolant {
 public:
  static constexpr double kJitter = 1e-10;

  /// `points` is n x d (d = 2 or 3). Shape parameter defaults to the mean
  /// nearest-neighbour distance of the points. Throws DegenerateGeometry on
  /// coincident points or a singular system, ContractError on bad shapes.
  static RbfInterpolant fit(const Eigen::MatrixXd& points, const Eigen::VectorXd& values);
  static RbfInterpolant fit(const Eigen::MatrixXd& points, const Eigen::VectorXd& values, double shape);

  double evaluate(std::span<const double> x) const;
  double operator()(double x, double y) const;
  double operator()(double x, double y, double z) const;

  int dimension() const { return static_cast<int>(centers_.cols()); }
  Eigen::Index size() const { return centers_.rows(); }
  double shape() const { return shape_; }
  const Eigen::MatrixXd& centers() const { return centers_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  /// Polynomial coefficients: [constant] or [constant, linear terms...].
  const Eigen::VectorXd& tail() const { return tail_; }

 private:
  Eigen::MatrixXd centers_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd tail_;
  double shape_ = 1.0;
};

/// Mean over points of the distance to the nearest other point.
double mean_nearest_neighbour_distance(const Eigen::MatrixXd& points);

}  // namespace dedmpc
