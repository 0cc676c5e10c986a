#include "voxreg/tape.hpp"

#include <stdexcept>

#include "voxreg/errors.hpp"
#include "voxreg/grid.hpp"
#include "voxreg/layers.hpp"
#include "voxreg/losses.hpp"
#include "voxreg/warp.hpp"

namespace voxreg {

namespace {

std::size_t conv_taps(int rank, int kernel) {
  std::size_t t = 1;
  for (int a = 0; a < rank; ++a) t *= static_cast<std::size_t>(kernel);
  return t;
}

void require_single_channel(const Tensor& t, const char* what) {
  if (t.channels != 1) throw GeometryError(std::string(what) + ": expected a single-channel image");
}

}  // namespace

Tape::Var Tape::push(Node node) {
  if (consumed_) throw std::logic_error("Tape: cannot record after backward()");
  for (int k = 0; k < node.n_in; ++k) {
    if (node.in[k] >= nodes_.size()) throw std::invalid_argument("Tape: input refers to an unknown node");
    node.needs_grad = node.needs_grad || nodes_[node.in[k]].needs_grad;
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Tape::Var Tape::input(Tensor value) {
  Node n{Op::input, {}, 0, std::move(value)};
  return push(std::move(n));
}

Tape::Var Tape::parameter(Tensor value) {
  Node n{Op::parameter, {}, 0, std::move(value)};
  n.needs_grad = true;
  return push(std::move(n));
}

Tape::Var Tape::conv(Var x, Var weights, Var bias, int kernel, int stride) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  const Tensor& wv = value(weights);
  if (wv.data.size() != bv.data.size() * static_cast<std::size_t>(xv.channels) *
                            conv_taps(static_cast<int>(xv.dims.size()), kernel))
    throw GeometryError("Tape::conv: weight shape does not match input channels and bias");
  Node n{Op::conv, {x.id, weights.id, bias.id}, 3, layers::conv(xv, wv.data, bv.data, kernel, stride)};
  n.iattr0 = kernel;
  n.iattr1 = stride;
  return push(std::move(n));
}

Tape::Var Tape::leaky_relu(Var x, double slope) {
  Node n{Op::leaky_relu, {x.id}, 1, layers::leaky_relu(value(x), slope)};
  n.attr = slope;
  return push(std::move(n));
}

Tape::Var Tape::upsample2x(Var x) {
  Node n{Op::upsample2x, {x.id}, 1, layers::upsample2x(value(x))};
  return push(std::move(n));
}

Tape::Var Tape::concat(Var a, Var b) {
  Node n{Op::concat, {a.id, b.id}, 2, layers::concat(value(a), value(b))};
  return push(std::move(n));
}

Tape::Var Tape::warp(Var image, Var field) {
  const Tensor& img = value(image);
  const Tensor& u = value(field);
  if (img.dims != u.dims || u.channels != static_cast<int>(u.dims.size()))
    throw GeometryError("Tape::warp: image and displacement field shapes differ");
  const GridGeometry geom(img.dims);
  Tensor out = Tensor::zeros(img.dims, img.channels);
  warp_channels(geom, img.data, img.channels, u.data, out.data);
  Node n{Op::warp, {image.id, field.id}, 2, std::move(out)};
  return push(std::move(n));
}

Tape::Var Tape::mse(Var fixed, Var warped) {
  const Tensor& f = value(fixed);
  const Tensor& w = value(warped);
  require_single_channel(f, "Tape::mse");
  if (!f.same_shape(w)) throw GeometryError("Tape::mse: shape mismatch");
  Node n{Op::mse, {fixed.id, warped.id}, 2, Tensor::scalar(detail::mse(f.data, w.data))};
  return push(std::move(n));
}

Tape::Var Tape::local_cc(Var fixed, Var warped, int window) {
  const Tensor& f = value(fixed);
  const Tensor& w = value(warped);
  require_single_channel(f, "Tape::local_cc");
  if (!f.same_shape(w)) throw GeometryError("Tape::local_cc: shape mismatch");
  const auto terms = detail::local_cc_terms(GridGeometry(f.dims), f.data, w.data, window);
  double acc = 0.0;
  for (double t : terms) acc += t;
  Node n{Op::local_cc, {fixed.id, warped.id}, 2, Tensor::scalar(acc)};
  n.iattr0 = window;
  return push(std::move(n));
}

Tape::Var Tape::smoothness(Var field) {
  const Tensor& u = value(field);
  const GridGeometry geom(u.dims);
  if (u.channels != geom.rank()) throw GeometryError("Tape::smoothness: expected one channel per axis");
  Node n{Op::smoothness, {field.id}, 1, Tensor::scalar(detail::smoothness(geom, u.data, u.channels))};
  return push(std::move(n));
}

Tape::Var Tape::seg_loss(Var fixed_seg, Var warped_seg) {
  const Tensor& a = value(fixed_seg);
  const Tensor& b = value(warped_seg);
  if (!a.same_shape(b)) throw GeometryError("Tape::seg_loss: shape mismatch");
  const auto dice = detail::soft_dice(a.spatial_size(), a.channels, a.data, b.data);
  double acc = 0.0;
  for (double d : dice) acc += d;
  Node n{Op::seg_loss, {fixed_seg.id, warped_seg.id}, 2, Tensor::scalar(-acc / static_cast<double>(dice.size()))};
  return push(std::move(n));
}

Tape::Var Tape::scale(Var x, double factor) {
  Tensor out = value(x);
  for (double& v : out.data) v = factor * v;
  Node n{Op::scale, {x.id}, 1, std::move(out)};
  n.attr = factor;
  return push(std::move(n));
}

Tape::Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw GeometryError("Tape::add: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
  Node n{Op::add, {a.id, b.id}, 2, std::move(out)};
  return push(std::move(n));
}

void Tape::accumulate(std::size_t id, Tensor&& g) {
  if (!nodes_[id].needs_grad) return;
  Tensor& slot = grads_[id];
  if (slot.data.empty()) {
    slot = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
}

void Tape::accumulate(std::size_t id, const std::vector<double>& g) {
  if (!nodes_[id].needs_grad) return;
  Tensor t;
  t.dims = nodes_[id].value.dims;
  t.channels = nodes_[id].value.channels;
  t.data = g;
  accumulate(id, std::move(t));
}

void Tape::backward(Var output) {
  if (consumed_) throw std::logic_error("Tape::backward: tape already consumed");
  if (output.id >= nodes_.size()) throw std::invalid_argument("Tape::backward: unknown node");
  if (nodes_[output.id].value.data.size() != 1)
    throw std::invalid_argument("Tape::backward: output must be a scalar");
  consumed_ = true;
  grads_.assign(nodes_.size(), Tensor{});
  grads_[output.id] = Tensor::scalar(1.0);
  if (!nodes_[output.id].needs_grad) return;

  for (std::size_t i = output.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || grads_[i].data.empty()) continue;
    const Tensor g = std::move(grads_[i]);
    grads_[i] = g;  // keep for grad() queries on intermediates
    auto in_val = [&](int k) -> const Tensor& { return nodes_[n.in[k]].value; };
    auto wants = [&](int k) { return nodes_[n.in[k]].needs_grad; };

    switch (n.op) {
      case Op::input:
      case Op::parameter:
        break;
      case Op::conv: {
        const Tensor& x = in_val(0);
        const Tensor& w = in_val(1);
        const Tensor& b = in_val(2);
        std::vector<double> gx(wants(0) ? x.data.size() : 0, 0.0);
        std::vector<double> gw(w.data.size(), 0.0), gb(b.data.size(), 0.0);
        layers::conv_backward(x, w.data, static_cast<int>(b.data.size()), n.iattr0, n.iattr1, g, gx, gw, gb);
        if (wants(0)) accumulate(n.in[0], gx);
        accumulate(n.in[1], gw);
        accumulate(n.in[2], gb);
        break;
      }
      case Op::leaky_relu: {
        std::vector<double> gx(g.data.size(), 0.0);
        layers::leaky_relu_backward(in_val(0), n.attr, g, gx);
        accumulate(n.in[0], gx);
        break;
      }
      case Op::upsample2x: {
        std::vector<double> gx(in_val(0).data.size(), 0.0);
        layers::upsample2x_backward(g, gx);
        accumulate(n.in[0], gx);
        break;
      }
      case Op::concat: {
        const std::size_t split = in_val(0).data.size();
        accumulate(n.in[0], std::vector<double>(g.data.begin(), g.data.begin() + split));
        accumulate(n.in[1], std::vector<double>(g.data.begin() + split, g.data.end()));
        break;
      }
      case Op::warp: {
        const Tensor& img = in_val(0);
        const Tensor& u = in_val(1);
        std::vector<double> gimg(img.data.size()), gu(u.data.size());
        warp_channels_backward(GridGeometry(img.dims), img.data, img.channels, u.data, g.data, gimg, gu);
        accumulate(n.in[0], gimg);
        accumulate(n.in[1], gu);
        break;
      }
      case Op::mse: {
        const Tensor& f = in_val(0);
        const Tensor& w = in_val(1);
        if (wants(1)) {
          std::vector<double> gw(w.data.size());
          detail::mse_grad(f.data, w.data, g.data[0], gw);
          accumulate(n.in[1], gw);
        }
        if (wants(0)) {
          std::vector<double> gf(f.data.size());
          detail::mse_grad(w.data, f.data, g.data[0], gf);
          accumulate(n.in[0], gf);
        }
        break;
      }
      case Op::local_cc: {
        const Tensor& f = in_val(0);
        const Tensor& w = in_val(1);
        const GridGeometry geom(f.dims);
        if (wants(1)) {
          std::vector<double> gw(w.data.size());
          detail::local_cc_grad(geom, f.data, w.data, n.iattr0, g.data[0], gw);
          accumulate(n.in[1], gw);
        }
        if (wants(0)) {
          std::vector<double> gf(f.data.size());
          detail::local_cc_grad(geom, w.data, f.data, n.iattr0, g.data[0], gf);
          accumulate(n.in[0], gf);
        }
        break;
      }
      case Op::smoothness: {
        const Tensor& u = in_val(0);
        std::vector<double> gu(u.data.size());
        detail::smoothness_grad(GridGeometry(u.dims), u.data, u.channels, g.data[0], gu);
        accumulate(n.in[0], gu);
        break;
      }
      case Op::seg_loss: {
        const Tensor& a = in_val(0);
        const Tensor& b = in_val(1);
        if (wants(1)) {
          std::vector<double> gb(b.data.size());
          detail::seg_loss_grad(b.spatial_size(), b.channels, a.data, b.data, g.data[0], gb);
          accumulate(n.in[1], gb);
        }
        if (wants(0)) {
          std::vector<double> ga(a.data.size());
          detail::seg_loss_grad(a.spatial_size(), a.channels, b.data, a.data, g.data[0], ga);
          accumulate(n.in[0], ga);
        }
        break;
      }
      case Op::scale: {
        std::vector<double> gx(g.data.size());
        for (std::size_t k = 0; k < gx.size(); ++k) gx[k] = g.data[k] * n.attr;
        accumulate(n.in[0], gx);
        break;
      }
      case Op::add:
        accumulate(n.in[0], g.data);
        accumulate(n.in[1], g.data);
        break;
    }
  }
}

const Tensor& Tape::grad(Var v) const {
  if (!consumed_) throw std::logic_error("Tape::grad: call backward() first");
  Tensor& slot = grads_.at(v.id);
  if (slot.data.empty()) slot = Tensor::zeros(nodes_[v.id].value.dims, nodes_[v.id].value.channels);
  return slot;
}

}  // namespace voxreg
