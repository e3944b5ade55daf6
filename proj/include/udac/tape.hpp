#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "udac/tensor.hpp"

namespace udac {

enum class Activation { Mish, Relu, Identity, Tanh };

double activate(double x, Activation a);
double activate_grad(double x, Activation a);

/// Numerically stable softplus, log(1 + e^x).
double softplus(double x);
/// mish(x) = x * tanh(softplus(x)).
double mish(double x);

using ValId = std::uint32_t;

/// Define-by-run reverse-mode tape over Tensors. A tape is built fresh for
/// each forward pass and confined to one thread. Gradients flow only into
/// nodes whose inputs (transitively) include a leaf registered with
/// requires_grad; everything else is treated as constant.
class Tape {
 public:
  ValId leaf(const Tensor& t, bool requires_grad);
  ValId constant(Tensor t) { return leaf_moved(std::move(t), false); }

  /// y = x * w^T + b with x:[m,in], w:[out,in], b:[out] -> [m,out].
  ValId linear(ValId x, ValId w, ValId b);

  ValId add(ValId a, ValId b);
  ValId sub(ValId a, ValId b);
  ValId mul(ValId a, ValId b);
  ValId scale(ValId x, double c);
  ValId activation(ValId x, Activation a);
  ValId clip(ValId x, double lo, double hi);

  /// Concatenate rank-2 tensors along columns.
  ValId concat_cols(std::span<const ValId> parts);
  /// Tile each row `times` times consecutively: [m,c] -> [m*times, c].
  ValId repeat_rows(ValId x, std::size_t times);

  ValId sum_all(ValId x);
  ValId mean_all(ValId x);

  /// delta[r, i*K+j] = target[r,j] - online[r,i] for online:[m,N], target:[m,K].
  ValId pairwise_target_minus(ValId online, ValId target);

  /// Elementwise quantile Huber loss of a TD-error tensor at fixed quantile
  /// levels; `tau` has one level per element and is not differentiated.
  ValId quantile_huber(ValId delta, Tensor tau, double kappa);

  /// Per-row cross-entropy of logits:[m,C] against integer labels.
  ValId cross_entropy_with_logits(ValId logits, std::vector<int> labels);
  /// Per-row log p(cls) under softmax(logits).
  ValId log_prob_class(ValId logits, std::size_t cls);

  /// Reverse pass from a scalar node; each node is visited exactly once.
  void backward(ValId loss);

  const Tensor& value(ValId id) const { return nodes_[id].value; }
  /// Gradient of the last backward() loss w.r.t. node `id`. Zero tensor for
  /// leaves the loss does not depend on.
  const Tensor& grad(ValId id) const;
  bool requires_grad(ValId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Leaf,
    Linear,
    Add,
    Sub,
    Mul,
    Scale,
    Act,
    Clip,
    Concat,
    RepeatRows,
    SumAll,
    MeanAll,
    PairwiseTargetMinus,
    QuantileHuber,
    CrossEntropy,
    LogProbClass,
  };

  struct Node {
    Op op = Op::Leaf;
    std::vector<ValId> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    // op-specific extras
    double c0 = 0.0, c1 = 0.0;
    std::size_t k0 = 0;
    Activation act = Activation::Identity;
    Tensor aux;
    std::vector<int> labels;
  };

  ValId leaf_moved(Tensor t, bool requires_grad);
  ValId push(Node n);
  Tensor& grad_buf(ValId id);
  bool any_requires(std::span<const ValId> ids) const;
  void backprop_node(ValId id);

  std::vector<Node> nodes_;
  Tensor zero_scalar_ = Tensor::zeros({1});
};

}  // namespace udac
