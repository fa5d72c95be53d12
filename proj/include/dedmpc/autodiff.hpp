#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace dedmpc::ad {

using Mat = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is cleared.
struct Var {
  int id = -1;
};

/// Minimal reverse-mode engine over dense matrices. Operations record a node
/// holding the forward value and a closure that pushes the node's gradient to
/// its parents. Gradients only flow through nodes that depend on a leaf with
/// requires_grad set.
class Tape {
 public:
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  /// Owned constant or differentiable input.
  Var input(Mat value, bool requires_grad = false);
  /// External parameter: the value is read in place and gradients are
  /// accumulated into *grad when it is non-null.
  Var parameter(const Mat& value, Mat* grad);

  const Mat& value(Var v) const;
  /// Gradient after backward(); zero-sized when the node received none.
  const Mat& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  Var matmul(Var a, Var b);
  /// a + row, with a 1 x n row broadcast over every row of a.
  Var add_row(Var a, Var row);
  Var add(Var a, Var b);
  Var relu(Var a);
  /// Row-wise normalization followed by per-column gain and bias (1 x n each).
  Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
  /// Inverted dropout: kept entries are scaled by 1/(1-rate).
  Var dropout(Var a, double rate, std::mt19937_64& rng);
  Var concat_cols(Var a, Var b);
  /// (B*T) x d with row b*T+t  ->  B x (T*d) with column t*d+j.
  Var fold_rows(Var a, int groups);
  /// Inverse of fold_rows: B x (T*d) -> (B*T) x d.
  Var unfold_rows(Var a, int groups);
  /// Keeps rows b*T+t for t in [start, start+len): (B*T) x d -> (B*len) x d.
  Var slice_groups(Var a, int groups, int start, int len);

  /// Reverse sweep from `out` seeded with d(scalar)/d(out).
  void backward(Var out, const Mat& seed);

 private:
  struct Node {
    Mat own;
    const Mat* external = nullptr;
    Mat grad;
    Mat* sink = nullptr;
    bool requires_grad = false;
    std::function<void(Tape&, const Mat&)> back;

    const Mat& value() const { return external ? *external : own; }
  };

  Var push(Mat value, bool requires_grad, std::function<void(Tape&, const Mat&)> back);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  void accumulate(Var v, const Mat& g);

  std::vector<Node> nodes_;
};

}  // namespace dedmpc::ad
