#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "xpd/kernels.hpp"
#include "xpd/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a graph node. Ops create new nodes that hold their
// parents and a backward closure; backward() walks the graph in reverse
// topological order. Scalars are rank-0 tensors.
namespace xpd::ag {

struct Node {
  Tensor value;
  Tensor grad;  // meaningful only when has_grad
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int64_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  // Gradient after backward(); zeros if nothing reached this node.
  Tensor grad() const;
  void zero_grad() {
    node_->grad = Tensor();
    node_->has_grad = false;
  }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Seeds d(root)/d(root) = 1 for a scalar root and propagates.
void backward(const Var& root);

// While alive on this thread, ops record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

Var constant(Tensor value);
Var scalar(double v);

// --- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);

// --- reductions ------------------------------------------------------------
Var sum_all(const Var& x);
Var mean_all(const Var& x);
// sum_i x_i * weights_i; handy for projecting a tensor output to a scalar.
Var dot_const(const Var& x, const Tensor& weights);

// --- feature-block ops (rank 4: N, C, H, W) --------------------------------
Var conv2d(const Var& x, const Var& weight, const Var* bias, const kernels::ConvGeometry& g);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var upsample_nearest(const Var& x, int factor);
// Bilinear resize by an integer factor with half-pixel centers
// (align_corners = false).
Var upsample_bilinear(const Var& x, int factor);
Var concat_channels(const std::vector<Var>& parts);
// Appends two constant channels holding normalized x and y coordinates in [-1, 1].
Var append_coords(const Var& x);

// Cuts one instance mask per requested grid cell:
//   logits[k] = sum_e kernels[n_k, e, r_k, c_k] * features[n_k, e, :, :]
struct CellRef {
  int batch = 0;
  int row = 0;
  int col = 0;
};
Var dynamic_masks(const Var& kernels, const Var& features, const std::vector<CellRef>& cells);

// --- losses (all return scalars) -------------------------------------------
// Sigmoid focal loss over logits of any shape, targets in {0,1}; summed and
// divided by `normalizer`.
Var focal_loss(const Var& logits, const Tensor& targets, double alpha, double gamma,
               double normalizer);
// Mean over k of 1 - 2<p,q> / (|p|^2 + |q|^2) for probs/targets shaped (K, h, w).
// Both-empty pairs count as a perfect match.
Var dice_loss(const Var& probs, const Tensor& targets);
// sqrt(mean over valid pixels of (pred - gt)^2); 0 when nothing is valid.
Var rmse_loss(const Var& pred, const Tensor& gt, const Tensor& valid);
// min(|Laplacian(mask)|, 1) per (h, w) plane, replicate padding; input (K, h, w).
Var laplacian_boundary(const Var& masks);
// Mean over k and pixels of w^p (gt - pr)^2 with p = 2 (squared weights) or 1.
Var weighted_boundary_mse(const Var& pr_boundary, const Tensor& gt_boundary,
                          const Tensor& weights, bool squared_weights);

}  // namespace xpd::ag
