#include "voxreg/layers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "voxreg/errors.hpp"

namespace voxreg {

Tensor Tensor::zeros(std::vector<int> dims, int channels) {
  Tensor t;
  t.dims = std::move(dims);
  t.channels = channels;
  t.data.assign(t.spatial_size() * static_cast<std::size_t>(channels), 0.0);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.channels = 1;
  t.data = {v};
  return t;
}

namespace layers {

namespace {

// 2D grids are handled as 3D with a unit leading axis and a unit kernel extent
// along it.
struct Geometry3 {
  std::array<int, 3> in{};
  std::array<int, 3> out{};
  std::array<int, 3> k{};
  std::array<int, 3> pad{};
  int stride = 1;
  std::size_t in_vox = 0, out_vox = 0, taps = 0;
};

Geometry3 conv_geometry(const Tensor& x, int kernel, int stride) {
  const int rank = static_cast<int>(x.dims.size());
  if (rank < 2 || rank > 3) throw GeometryError("conv: spatial rank must be 2 or 3");
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("conv: kernel size must be odd");
  if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
  Geometry3 g;
  g.stride = stride;
  const int lead = 3 - rank;
  for (int a = 0; a < 3; ++a) {
    if (a < lead) {
      g.in[a] = 1;
      g.k[a] = 1;
      g.pad[a] = 0;
    } else {
      g.in[a] = x.dims[a - lead];
      g.k[a] = kernel;
      g.pad[a] = kernel / 2;
    }
    g.out[a] = a < lead ? 1 : conv_output_extent(g.in[a], kernel, stride);
  }
  g.in_vox = static_cast<std::size_t>(g.in[0]) * g.in[1] * g.in[2];
  g.out_vox = static_cast<std::size_t>(g.out[0]) * g.out[1] * g.out[2];
  g.taps = static_cast<std::size_t>(g.k[0]) * g.k[1] * g.k[2];
  return g;
}

std::vector<int> out_dims(const Geometry3& g, int rank) {
  std::vector<int> d;
  for (int a = 3 - rank; a < 3; ++a) d.push_back(g.out[a]);
  return d;
}

// Valid output range [lo, hi) along x for kernel offset kx.
inline void x_range(const Geometry3& g, int kx, int& lo, int& hi) {
  const int s = g.stride;
  const int off = kx - g.pad[2];
  // need 0 <= ox*s + off < in
  lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const int last = g.in[2] - 1 - off;  // ox*s <= last
  hi = last < 0 ? 0 : std::min(g.out[2], last / s + 1);
}

}  // namespace

int conv_output_extent(int in_extent, int kernel, int stride) {
  return (in_extent + 2 * (kernel / 2) - kernel) / stride + 1;
}

Tensor conv(const Tensor& x, std::span<const double> weights, std::span<const double> bias, int kernel, int stride) {
  const Geometry3 g = conv_geometry(x, kernel, stride);
  const int cin = x.channels;
  const int cout = static_cast<int>(bias.size());
  if (weights.size() != static_cast<std::size_t>(cout) * cin * g.taps)
    throw GeometryError("conv: weight count " + std::to_string(weights.size()) + " does not match " +
                        std::to_string(cout) + "x" + std::to_string(cin) + "x" + std::to_string(g.taps));
  if (x.data.size() != g.in_vox * cin) throw GeometryError("conv: input buffer size mismatch");

  Tensor out = Tensor::zeros(out_dims(g, static_cast<int>(x.dims.size())), cout);
  const int s = g.stride;
  for (int o = 0; o < cout; ++o) {
    double* dst_o = out.data.data() + o * g.out_vox;
    std::fill(dst_o, dst_o + g.out_vox, bias[o]);
    for (int i = 0; i < cin; ++i) {
      const double* src_i = x.data.data() + i * g.in_vox;
      const double* w_oi = weights.data() + (static_cast<std::size_t>(o) * cin + i) * g.taps;
      std::size_t tap = 0;
      for (int kz = 0; kz < g.k[0]; ++kz)
        for (int ky = 0; ky < g.k[1]; ++ky)
          for (int kx = 0; kx < g.k[2]; ++kx, ++tap) {
            const double wv = w_oi[tap];
            int xlo, xhi;
            x_range(g, kx, xlo, xhi);
            const int xoff = kx - g.pad[2];
            for (int oz = 0; oz < g.out[0]; ++oz) {
              const int iz = oz * s + kz - g.pad[0];
              if (iz < 0 || iz >= g.in[0]) continue;
              for (int oy = 0; oy < g.out[1]; ++oy) {
                const int iy = oy * s + ky - g.pad[1];
                if (iy < 0 || iy >= g.in[1]) continue;
                const double* src = src_i + (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2];
                double* dst = dst_o + (static_cast<std::size_t>(oz) * g.out[1] + oy) * g.out[2];
                if (s == 1) {
                  const double* sp = src + xoff;
                  for (int ox = xlo; ox < xhi; ++ox) dst[ox] += wv * sp[ox];
                } else {
                  for (int ox = xlo; ox < xhi; ++ox) dst[ox] += wv * src[ox * s + xoff];
                }
              }
            }
          }
    }
  }
  return out;
}

void conv_backward(const Tensor& x, std::span<const double> weights, int out_channels, int kernel, int stride,
                   const Tensor& grad_out, std::span<double> grad_x, std::span<double> grad_w,
                   std::span<double> grad_b) {
  const Geometry3 g = conv_geometry(x, kernel, stride);
  const int cin = x.channels;
  const int cout = out_channels;
  if (grad_out.data.size() != g.out_vox * cout) throw GeometryError("conv_backward: cotangent size mismatch");
  const bool want_x = !grad_x.empty();
  const int s = g.stride;
  for (int o = 0; o < cout; ++o) {
    const double* go = grad_out.data.data() + o * g.out_vox;
    double bsum = 0.0;
    for (std::size_t v = 0; v < g.out_vox; ++v) bsum += go[v];
    grad_b[o] += bsum;
    for (int i = 0; i < cin; ++i) {
      const double* src_i = x.data.data() + i * g.in_vox;
      double* gx_i = want_x ? grad_x.data() + i * g.in_vox : nullptr;
      const std::size_t wbase = (static_cast<std::size_t>(o) * cin + i) * g.taps;
      std::size_t tap = 0;
      for (int kz = 0; kz < g.k[0]; ++kz)
        for (int ky = 0; ky < g.k[1]; ++ky)
          for (int kx = 0; kx < g.k[2]; ++kx, ++tap) {
            const double wv = weights[wbase + tap];
            int xlo, xhi;
            x_range(g, kx, xlo, xhi);
            const int xoff = kx - g.pad[2];
            double wacc = 0.0;
            for (int oz = 0; oz < g.out[0]; ++oz) {
              const int iz = oz * s + kz - g.pad[0];
              if (iz < 0 || iz >= g.in[0]) continue;
              for (int oy = 0; oy < g.out[1]; ++oy) {
                const int iy = oy * s + ky - g.pad[1];
                if (iy < 0 || iy >= g.in[1]) continue;
                const std::size_t row_in = (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2];
                const double* src = src_i + row_in;
                const double* gr = go + (static_cast<std::size_t>(oz) * g.out[1] + oy) * g.out[2];
                if (s == 1) {
                  const double* sp = src + xoff;
                  for (int ox = xlo; ox < xhi; ++ox) wacc += gr[ox] * sp[ox];
                  if (want_x) {
                    double* gp = gx_i + row_in + xoff;
                    for (int ox = xlo; ox < xhi; ++ox) gp[ox] += wv * gr[ox];
                  }
                } else {
                  for (int ox = xlo; ox < xhi; ++ox) wacc += gr[ox] * src[ox * s + xoff];
                  if (want_x) {
                    double* gp = gx_i + row_in;
                    for (int ox = xlo; ox < xhi; ++ox) gp[ox * s + xoff] += wv * gr[ox];
                  }
                }
              }
            }
            grad_w[wbase + tap] += wacc;
          }
    }
  }
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor out = x;
  for (double& v : out.data)
    if (!(v > 0.0)) v *= slope;
  return out;
}

void leaky_relu_backward(const Tensor& x, double slope, const Tensor& grad_out, std::span<double> grad_x) {
  for (std::size_t i = 0; i < x.data.size(); ++i) grad_x[i] += x.data[i] > 0.0 ? grad_out.data[i] : slope * grad_out.data[i];
}

namespace {
std::array<int, 3> as3(const std::vector<int>& dims) {
  std::array<int, 3> e{1, 1, 1};
  const int lead = 3 - static_cast<int>(dims.size());
  for (std::size_t a = 0; a < dims.size(); ++a) e[lead + a] = dims[a];
  return e;
}
}  // namespace

Tensor upsample2x(const Tensor& x) {
  const int rank = static_cast<int>(x.dims.size());
  if (rank < 2 || rank > 3) throw GeometryError("upsample2x: spatial rank must be 2 or 3");
  std::vector<int> od = x.dims;
  for (int& d : od) d *= 2;
  Tensor out = Tensor::zeros(od, x.channels);
  const auto in = as3(x.dims);
  const auto oe = as3(od);
  const int zf = rank == 3 ? 2 : 1;
  const std::size_t ivox = x.spatial_size(), ovox = out.spatial_size();
  for (int c = 0; c < x.channels; ++c) {
    const double* src = x.data.data() + c * ivox;
    double* dst = out.data.data() + c * ovox;
    for (int z = 0; z < oe[0]; ++z)
      for (int y = 0; y < oe[1]; ++y) {
        const double* srow = src + (static_cast<std::size_t>(z / zf) * in[1] + y / 2) * in[2];
        double* drow = dst + (static_cast<std::size_t>(z) * oe[1] + y) * oe[2];
        for (int xx = 0; xx < oe[2]; ++xx) drow[xx] = srow[xx / 2];
      }
  }
  return out;
}

void upsample2x_backward(const Tensor& grad_out, std::span<double> grad_x) {
  const int rank = static_cast<int>(grad_out.dims.size());
  const auto oe = as3(grad_out.dims);
  std::array<int, 3> in = oe;
  for (int a = 3 - rank; a < 3; ++a) in[a] /= 2;
  const int zf = rank == 3 ? 2 : 1;
  const std::size_t ivox = static_cast<std::size_t>(in[0]) * in[1] * in[2];
  const std::size_t ovox = grad_out.spatial_size();
  for (int c = 0; c < grad_out.channels; ++c) {
    const double* src = grad_out.data.data() + c * ovox;
    double* dst = grad_x.data() + c * ivox;
    for (int z = 0; z < oe[0]; ++z)
      for (int y = 0; y < oe[1]; ++y) {
        const double* srow = src + (static_cast<std::size_t>(z) * oe[1] + y) * oe[2];
        double* drow = dst + (static_cast<std::size_t>(z / zf) * in[1] + y / 2) * in[2];
        for (int xx = 0; xx < oe[2]; ++xx) drow[xx / 2] += srow[xx];
      }
  }
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.dims != b.dims) throw GeometryError("concat: spatial extents differ");
  Tensor out;
  out.dims = a.dims;
  out.channels = a.channels + b.channels;
  out.data.reserve(a.data.size() + b.data.size());
  out.data.insert(out.data.end(), a.data.begin(), a.data.end());
  out.data.insert(out.data.end(), b.data.begin(), b.data.end());
  return out;
}

}  // namespace layers
}  // namespace voxreg
