#include "voxreg/warp.hpp"

#include <algorithm>
#include <cmath>

#include "voxreg/errors.hpp"

namespace voxreg {

namespace {

// Interpolation setup along one axis.
struct AxisSample {
  std::size_t lo_offset;  // lo * stride
  std::size_t step;       // stride between lo and hi
  double w_lo, w_hi;
  double dw_lo, dw_hi;  // derivative of the weights w.r.t. p'_d
};

inline AxisSample sample_axis(double pos, int extent, std::size_t stride) {
  const double top = static_cast<double>(extent - 1);
  const bool clamped = pos < 0.0 || pos > top;
  const double c = std::clamp(pos, 0.0, top);
  int lo = static_cast<int>(std::floor(c));
  if (lo > extent - 2) lo = extent - 2;
  const double t = c - lo;
  AxisSample s;
  s.lo_offset = static_cast<std::size_t>(lo) * stride;
  s.step = stride;
  s.w_lo = 1.0 - t;
  s.w_hi = t;
  s.dw_lo = clamped ? 0.0 : -1.0;
  s.dw_hi = clamped ? 0.0 : 1.0;
  return s;
}

template <int N>
struct VoxelSample {
  std::array<AxisSample, N> ax;
};

template <int N>
VoxelSample<N> sample_voxel(const GridGeometry& geom, const Coord& p, std::span<const double> u, std::size_t idx) {
  const std::size_t nvox = geom.voxel_count();
  VoxelSample<N> vs;
  for (int a = 0; a < N; ++a)
    vs.ax[a] = sample_axis(p[a] + u[a * nvox + idx], geom.dim(a), geom.stride(a));
  return vs;
}

template <int N>
inline double interpolate(const VoxelSample<N>& vs, const double* src) {
  double acc = 0.0;
  for (int corner = 0; corner < (1 << N); ++corner) {
    std::size_t off = 0;
    double w = 1.0;
    for (int a = 0; a < N; ++a) {
      const bool hi = (corner >> (N - 1 - a)) & 1;
      off += vs.ax[a].lo_offset + (hi ? vs.ax[a].step : 0);
      w *= hi ? vs.ax[a].w_hi : vs.ax[a].w_lo;
    }
    acc += src[off] * w;
  }
  return acc;
}

template <int N>
void warp_impl(const GridGeometry& geom, std::span<const double> src, int channels, std::span<const double> u,
               std::span<double> out) {
  const std::size_t nvox = geom.voxel_count();
  for (std::size_t idx = 0; idx < nvox; ++idx) {
    const auto vs = sample_voxel<N>(geom, geom.coords(idx), u, idx);
    for (int c = 0; c < channels; ++c) out[c * nvox + idx] = interpolate<N>(vs, src.data() + c * nvox);
  }
}

template <int N>
void warp_backward_impl(const GridGeometry& geom, std::span<const double> src, int channels,
                        std::span<const double> u, std::span<const double> upstream, std::span<double> grad_src,
                        std::span<double> grad_u) {
  const std::size_t nvox = geom.voxel_count();
  std::fill(grad_src.begin(), grad_src.end(), 0.0);
  std::fill(grad_u.begin(), grad_u.end(), 0.0);
  for (std::size_t idx = 0; idx < nvox; ++idx) {
    const auto vs = sample_voxel<N>(geom, geom.coords(idx), u, idx);
    std::array<double, N> gu{};
    for (int c = 0; c < channels; ++c) {
      const double g = upstream[c * nvox + idx];
      if (g == 0.0) continue;
      const double* s = src.data() + c * nvox;
      double* gs = grad_src.data() + c * nvox;
      for (int corner = 0; corner < (1 << N); ++corner) {
        std::size_t off = 0;
        std::array<double, N> w;
        std::array<double, N> dw;
        for (int a = 0; a < N; ++a) {
          const bool hi = (corner >> (N - 1 - a)) & 1;
          off += vs.ax[a].lo_offset + (hi ? vs.ax[a].step : 0);
          w[a] = hi ? vs.ax[a].w_hi : vs.ax[a].w_lo;
          dw[a] = hi ? vs.ax[a].dw_hi : vs.ax[a].dw_lo;
        }
        double wprod = 1.0;
        for (int a = 0; a < N; ++a) wprod *= w[a];
        gs[off] += g * wprod;
        const double gv = g * s[off];
        for (int a = 0; a < N; ++a) {
          double partial = dw[a];
          for (int b = 0; b < N; ++b)
            if (b != a) partial *= w[b];
          gu[a] += gv * partial;
        }
      }
    }
    for (int a = 0; a < N; ++a) grad_u[a * nvox + idx] = gu[a];
  }
}

void check_sizes(const GridGeometry& geom, std::size_t src, int channels, std::size_t u) {
  if (src != geom.voxel_count() * static_cast<std::size_t>(channels) ||
      u != geom.voxel_count() * static_cast<std::size_t>(geom.rank()))
    throw GeometryError("warp: buffer sizes do not match geometry");
}

}  // namespace

void warp_channels(const GridGeometry& geom, std::span<const double> src, int channels, std::span<const double> u,
                   std::span<double> out) {
  check_sizes(geom, src.size(), channels, u.size());
  if (out.size() != src.size()) throw GeometryError("warp: output size mismatch");
  if (geom.rank() == 2)
    warp_impl<2>(geom, src, channels, u, out);
  else
    warp_impl<3>(geom, src, channels, u, out);
}

void warp_channels_backward(const GridGeometry& geom, std::span<const double> src, int channels,
                            std::span<const double> u, std::span<const double> upstream, std::span<double> grad_src,
                            std::span<double> grad_u) {
  check_sizes(geom, src.size(), channels, u.size());
  if (upstream.size() != src.size() || grad_src.size() != src.size() || grad_u.size() != u.size())
    throw GeometryError("warp_backward: buffer size mismatch");
  if (geom.rank() == 2)
    warp_backward_impl<2>(geom, src, channels, u, upstream, grad_src, grad_u);
  else
    warp_backward_impl<3>(geom, src, channels, u, upstream, grad_src, grad_u);
}

GridImage warp_image(const GridImage& moving, const DisplacementField& u) {
  require_same_geometry(moving.geometry(), u.geometry(), "warp_image");
  std::vector<double> out(moving.geometry().voxel_count());
  warp_channels(moving.geometry(), moving.values(), 1, u.data(), out);
  return GridImage(moving.geometry(), std::move(out));
}

WarpGradients warp_backward(const GridImage& moving, const DisplacementField& u, const GridImage& upstream) {
  require_same_geometry(moving.geometry(), u.geometry(), "warp_backward");
  require_same_geometry(moving.geometry(), upstream.geometry(), "warp_backward upstream");
  WarpGradients g{GridImage(moving.geometry()), DisplacementField(u.geometry())};
  warp_channels_backward(moving.geometry(), moving.values(), 1, u.data(), upstream.values(), g.moving.values(),
                         g.displacement.data());
  return g;
}

SegmentationMap warp_segmentation(const SegmentationMap& seg, const DisplacementField& u) {
  require_same_geometry(seg.geometry(), u.geometry(), "warp_segmentation");
  SegmentationMap out(seg.geometry(), seg.channels());
  warp_channels(seg.geometry(), seg.data(), seg.channels(), u.data(), out.data());
  return out;
}

SegmentationWarpGradients warp_segmentation_backward(const SegmentationMap& seg, const DisplacementField& u,
                                                     const SegmentationMap& upstream) {
  require_same_geometry(seg.geometry(), u.geometry(), "warp_segmentation_backward");
  require_same_geometry(seg.geometry(), upstream.geometry(), "warp_segmentation_backward upstream");
  if (seg.channels() != upstream.channels()) throw GeometryError("warp_segmentation_backward: channel mismatch");
  SegmentationWarpGradients g{SegmentationMap(seg.geometry(), seg.channels()), DisplacementField(u.geometry())};
  warp_channels_backward(seg.geometry(), seg.data(), seg.channels(), u.data(), upstream.data(), g.seg.data(),
                         g.displacement.data());
  return g;
}

}  // namespace voxreg
