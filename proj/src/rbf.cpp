#include "dedmpc/rbf.hpp"

#include <cmath>
#include <limits>

#include "dedmpc/errors.hpp"

namespace dedmpc {

double mean_nearest_neighbour_distance(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  if (n < 2) return 1.0;
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b) continue;
      best = std::min(best, (points.row(a) - points.row(b)).squaredNorm());
    }
    total += std::sqrt(best);
  }
  return total / static_cast<double>(n);
}

RbfInterpolant RbfInterpolant::fit(const Eigen::MatrixXd& points, const Eigen::VectorXd& values) {
  return fit(points, values, mean_nearest_neighbour_distance(points));
}

RbfInterpolant RbfInterpolant::fit(const Eigen::MatrixXd& points, const Eigen::VectorXd& values, double shape) {
  const Eigen::Index n = points.rows();
  const Eigen::Index dim = points.cols();
  if (dim < 1 || dim > 3) throw ContractError("rbf: point dimension must be 1..3");
  if (values.size() != n) throw ContractError("rbf: one value per point required");
  if (n < 4) throw DegenerateGeometry("rbf: at least 4 points required");
  if (!points.allFinite() || !values.allFinite()) throw ContractError("rbf: non-finite input");
  if (!(shape > 0.0)) throw DegenerateGeometry("rbf: shape parameter must be positive");

  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      if ((points.row(a) - points.row(b)).squaredNorm() < 1e-24) {
        throw DegenerateGeometry("rbf: coincident support points");
      }
    }
  }

  // Linear tail only when the points span the space affinely.
  const Eigen::RowVectorXd mean = points.colwise().mean();
  const Eigen::MatrixXd centred = points.rowwise() - mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred);
  const auto& sv = svd.singularValues();
  const double scale = std::max(sv(0), 1e-300);
  const bool affine_full = sv(sv.size() - 1) > 1e-8 * scale && sv.size() == dim;
  const Eigen::Index m = affine_full ? dim + 1 : 1;

  const double c2 = shape * shape;
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(n + m, n + m);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      const double phi = std::sqrt((points.row(a) - points.row(b)).squaredNorm() + c2);
      system(a, b) = phi;
      system(b, a) = phi;
    }
    system(a, a) += kJitter;
    system(a, n) = 1.0;
    system(n, a) = 1.0;
    if (affine_full) {
      for (Eigen::Index d = 0; d < dim; ++d) {
        system(a, n + 1 + d) = points(a, d);
        system(n + 1 + d, a) = points(a, d);
      }
    }
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
  rhs.head(n) = values;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (!lu.isInvertible()) throw DegenerateGeometry("rbf: singular interpolation system");
  const Eigen::VectorXd sol = lu.solve(rhs);
  if (!sol.allFinite()) throw DegenerateGeometry("rbf: non-finite solution");

  RbfInterpolant out;
  out.centers_ = points;
  out.weights_ = sol.head(n);
  out.tail_ = sol.tail(m);
  out.shape_ = shape;
  return out;
}

double RbfInterpolant::evaluate(std::span<const double> x) const {
  const Eigen::Index n = centers_.rows();
  const Eigen::Index dim = centers_.cols();
  if (static_cast<Eigen::Index>(x.size()) != dim) throw ContractError("rbf: evaluation point dimension mismatch");
  const double c2 = shape_ * shape_;
  double acc = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    double r2 = c2;
    for (Eigen::Index d = 0; d < dim; ++d) {
      const double diff = x[static_cast<std::size_t>(d)] - centers_(a, d);
      r2 += diff * diff;
    }
    acc += weights_(a) * std::sqrt(r2);
  }
  acc += tail_(0);
  if (tail_.size() > 1) {
    for (Eigen::Index d = 0; d < dim; ++d) acc += tail_(1 + d) * x[static_cast<std::size_t>(d)];
  }
  return acc;
}

double RbfInterpolant::operator()(double x, double y) const {
  const double p[2] = {x, y};
  return evaluate(p);
}

double RbfInterpolant::operator()(double x, double y, double z) const {
  const double p[3] = {x, y, z};
  return evaluate(p);
}

}  // namespace dedmpc
