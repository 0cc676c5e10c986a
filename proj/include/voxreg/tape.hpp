#pragma once

// Minimal reverse-mode differentiation over a closed primitive set.
//
// A Tape records primitive applications in order; every node's inputs are
// earlier nodes, so tape order is a topological order. backward() sweeps the
// tape once in reverse, calling each primitive's own vector-Jacobian product
// (the same kernels the warp/losses/layers modules expose), and accumulates
// fan-out cotangents in tape order. A tape supports exactly one backward pass.

#include <cstddef>
#include <vector>

#include "voxreg/tensor.hpp"

namespace voxreg {

class Tape {
 public:
  struct Var {
    std::size_t id;
  };

  enum class Op {
    input,
    parameter,
    conv,
    leaky_relu,
    upsample2x,
    concat,
    warp,
    mse,
    local_cc,
    smoothness,
    seg_loss,
    scale,
    add,
  };

  /// Constant: never receives a gradient.
  Var input(Tensor value);
  /// Differentiable leaf; its gradient is available after backward().
  Var parameter(Tensor value);

  /// `weights` and `bias` are flat tensors ([out][in][taps] and [out]).
  Var conv(Var x, Var weights, Var bias, int kernel, int stride);
  Var leaky_relu(Var x, double slope);
  Var upsample2x(Var x);
  Var concat(Var a, Var b);
  /// Warps every channel of `image` by the displacement `field` (rank channels).
  Var warp(Var image, Var field);
  Var mse(Var fixed, Var warped);
  /// Raw sum of local CC terms.
  Var local_cc(Var fixed, Var warped, int window);
  Var smoothness(Var field);
  Var seg_loss(Var fixed_seg, Var warped_seg);
  Var scale(Var x, double factor);
  Var add(Var a, Var b);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Throws std::invalid_argument if `output` is not a scalar and
  /// std::logic_error if the tape was already consumed.
  void backward(Var output);
  /// d(output)/d(v); an all-zero tensor when v did not influence the output.
  const Tensor& grad(Var v) const;

 private:
  struct Node {
    Op op;
    std::size_t in[3];
    int n_in = 0;
    Tensor value;
    double attr = 0.0;
    int iattr0 = 0, iattr1 = 0;
    bool needs_grad = false;
  };

  Var push(Node node);
  void accumulate(std::size_t id, Tensor&& g);
  void accumulate(std::size_t id, const std::vector<double>& g);

  std::vector<Node> nodes_;
  mutable std::vector<Tensor> grads_;
  bool consumed_ = false;
};

}  // namespace voxreg
