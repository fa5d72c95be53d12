#include "dedmpc/autodiff.hpp"

#include <cmath>

#include "dedmpc/errors.hpp"

namespace dedmpc::ad {

namespace {

const Mat kEmpty;

void require(bool ok, const char* what) {
  if (!ok) throw ContractError(what);
}

}  // namespace

Var Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, const Mat&)> back) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Mat value, bool requires_grad) { return push(std::move(value), requires_grad, {}); }

Var Tape::parameter(const Mat& value, Mat* grad) {
  Node n;
  n.external = &value;
  n.sink = grad;
  n.requires_grad = grad != nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Var v) const { return node(v).value(); }

const Mat& Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.size() ? n.grad : kEmpty;
}

void Tape::accumulate(Var v, const Mat& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Var Tape::matmul(Var a, Var b) {
  require(value(a).cols() == value(b).rows(), "matmul: inner dimensions differ");
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(value(a) * value(b), rg, [a, b](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var Tape::add_row(Var a, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row: shape mismatch");
  Mat out = value(a);
  out.rowwise() += value(row).row(0);
  const bool rg = requires_grad(a) || requires_grad(row);
  return push(std::move(out), rg, [a, row](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var Tape::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add: shape mismatch");
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(value(a) + value(b), rg, [a, b](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g);
    if (t.requires_grad(b)) t.accumulate(b, g);
  });
}

Var Tape::relu(Var a) {
  Mat out = value(a).cwiseMax(0.0);
  return push(std::move(out), requires_grad(a), [a](Tape& t, const Mat& g) {
    t.accumulate(a, (t.value(a).array() > 0.0).select(g, 0.0));
  });
}

Var Tape::layer_norm(Var a, Var gain, Var bias, double eps) {
  const Mat& x = value(a);
  const auto n = x.cols();
  require(value(gain).cols() == n && value(bias).cols() == n, "layer_norm: parameter width mismatch");
  Mat xhat(x.rows(), n);
  Eigen::VectorXd inv_sigma(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    inv_sigma(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_sigma(r);
  }
  Mat out = xhat.array().rowwise() * value(gain).row(0).array();
  out.rowwise() += value(bias).row(0);
  const bool rg = requires_grad(a) || requires_grad(gain) || requires_grad(bias);
  return push(std::move(out), rg, [a, gain, bias, xhat, inv_sigma](Tape& t, const Mat& g) {
    if (t.requires_grad(gain)) t.accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
    if (!t.requires_grad(a)) return;
    const Mat gx = g.array().rowwise() * t.value(gain).row(0).array();
    Mat ga(gx.rows(), gx.cols());
    for (Eigen::Index r = 0; r < gx.rows(); ++r) {
      const double m1 = gx.row(r).mean();
      const double m2 = (gx.row(r).array() * xhat.row(r).array()).mean();
      ga.row(r) = inv_sigma(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
    }
    t.accumulate(a, ga);
  });
}

Var Tape::dropout(Var a, double rate, std::mt19937_64& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const Mat& x = value(a);
  std::bernoulli_distribution keep(1.0 - rate);
  Mat mask(x.rows(), x.cols());
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index c = 0; c < mask.cols(); ++c) {
    for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = keep(rng) ? scale : 0.0;
  }
  Mat out = x.cwiseProduct(mask);
  return push(std::move(out), requires_grad(a),
              [a, mask](Tape& t, const Mat& g) { t.accumulate(a, g.cwiseProduct(mask)); });
}

Var Tape::concat_cols(Var a, Var b) {
  const Mat& x = value(a);
  const Mat& y = value(b);
  require(x.rows() == y.rows(), "concat_cols: row counts differ");
  Mat out(x.rows(), x.cols() + y.cols());
  out << x, y;
  const auto na = x.cols();
  const auto nb = y.cols();
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b, na, nb](Tape& t, const Mat& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.leftCols(na));
    if (t.requires_grad(b)) t.accumulate(b, g.rightCols(nb));
  });
}

namespace {

Mat fold(const Mat& x, int groups) {
  const auto d = x.cols();
  const auto batch = x.rows() / groups;
  Mat out(batch, groups * d);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int t = 0; t < groups; ++t) out.block(b, t * d, 1, d) = x.row(b * groups + t);
  }
  return out;
}

Mat unfold(const Mat& x, int groups) {
  const auto d = x.cols() / groups;
  const auto batch = x.rows();
  Mat out(batch * groups, d);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int t = 0; t < groups; ++t) out.row(b * groups + t) = x.block(b, t * d, 1, d);
  }
  return out;
}

}  // namespace

Var Tape::fold_rows(Var a, int groups) {
  require(groups > 0 && value(a).rows() % groups == 0, "fold_rows: rows not divisible by group count");
  return push(fold(value(a), groups), requires_grad(a),
              [a, groups](Tape& t, const Mat& g) { t.accumulate(a, unfold(g, groups)); });
}

Var Tape::unfold_rows(Var a, int groups) {
  require(groups > 0 && value(a).cols() % groups == 0, "unfold_rows: columns not divisible by group count");
  return push(unfold(value(a), groups), requires_grad(a),
              [a, groups](Tape& t, const Mat& g) { t.accumulate(a, fold(g, groups)); });
}

Var Tape::slice_groups(Var a, int groups, int start, int len) {
  const Mat& x = value(a);
  require(groups > 0 && x.rows() % groups == 0, "slice_groups: rows not divisible by group count");
  require(start >= 0 && len >= 0 && start + len <= groups, "slice_groups: range out of bounds");
  const auto batch = x.rows() / groups;
  Mat out(batch * len, x.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    out.middleRows(b * len, len) = x.middleRows(b * groups + start, len);
  }
  const auto rows = x.rows();
  return push(std::move(out), requires_grad(a), [a, groups, start, len, batch, rows](Tape& t, const Mat& g) {
    Mat ga = Mat::Zero(rows, g.cols());
    for (Eigen::Index b = 0; b < batch; ++b) ga.middleRows(b * groups + start, len) = g.middleRows(b * len, len);
    t.accumulate(a, ga);
  });
}

void Tape::backward(Var out, const Mat& seed) {
  require(seed.rows() == value(out).rows() && seed.cols() == value(out).cols(), "backward: seed shape mismatch");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(out, seed);
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, n.grad);
    if (n.sink) {
      if (n.sink->size() == 0) {
        *n.sink = n.grad;
      } else {
        *n.sink += n.grad;
      }
    }
  }
}

}  // namespace dedmpc::ad
