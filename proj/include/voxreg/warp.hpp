#pragma once

// Spatial transformer: [m o phi](p) = sum_{q in Z(p')} m(q) prod_d (1 - |p'_d - q_d|),
// p' = p + u(p), n-linear interpolation over the 2^n grid neighbours of p'.
//
// Out-of-bounds policy: p'_d is clamped to [0, extent_d - 1] before
// interpolation. A clamped axis contributes zero displacement gradient.
// At integer p'_d the neighbour pair is (p'_d, p'_d + 1) (or (p'_d - 1, p'_d)
// on the last sample), so the displacement gradient there is the one-sided
// difference toward the upper neighbour.

#include <span>

#include "voxreg/grid.hpp"

namespace voxreg {

GridImage warp_image(const GridImage& moving, const DisplacementField& u);

struct WarpGradients {
  GridImage moving;            ///< d(loss)/d(moving)
  DisplacementField displacement;  ///< d(loss)/d(u)
};

/// Vector-Jacobian product of warp_image given d(loss)/d(warped).
WarpGradients warp_backward(const GridImage& moving, const DisplacementField& u, const GridImage& upstream);

/// Each channel warped independently by warp_image.
SegmentationMap warp_segmentation(const SegmentationMap& seg, const DisplacementField& u);

struct SegmentationWarpGradients {
  SegmentationMap seg;
  DisplacementField displacement;
};

SegmentationWarpGradients warp_segmentation_backward(const SegmentationMap& seg, const DisplacementField& u,
                                                     const SegmentationMap& upstream);

/// Planar kernels behind the typed API; `src`/`out` hold `channels` planes and
/// `u` holds rank planes. Used directly by the gradient engine.
void warp_channels(const GridGeometry& geom, std::span<const double> src, int channels, std::span<const double> u,
                   std::span<double> out);
/// Overwrites grad_src and grad_u.
void warp_channels_backward(const GridGeometry& geom, std::span<const double> src, int channels,
                            std::span<const double> u, std::span<const double> upstream, std::span<double> grad_src,
                            std::span<double> grad_u);

}  // namespace voxreg
