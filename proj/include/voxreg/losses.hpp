#pragma once

// Registration losses. Every `*_grad` function returns the vector-Jacobian
// product for an upstream scalar cotangent (default 1).
//
// Scale convention for the combined objectives: every term is normalized per
// voxel so that lambda and gamma are resolution independent:
//     L_us = L_sim + lambda * smoothness(u) / |Omega|
//     L_sim = mse(f, m o phi)            (already a mean)
//           | -local_cc(f, m o phi) / |Omega|
//     L_a  = L_us + gamma * seg_loss(s_f, s_m o phi)
// The standalone mse/local_cc/smoothness/soft_dice functions return the raw
// quantities (mean for MSE, sums for CC and smoothness).

#include <vector>

#include "voxreg/grid.hpp"

namespace voxreg {

/// Added to the CC variance product and the Dice denominator.
inline constexpr double kLossEpsilon = 1e-5;

enum class Similarity { mse, cc };

/// Weight of the segmentation term. `seg_only()` drops the image and
/// smoothness terms altogether (the gamma -> infinity regime).
class AuxWeight {
 public:
  constexpr AuxWeight() = default;
  static AuxWeight weight(double gamma);
  static constexpr AuxWeight seg_only() {
    AuxWeight w;
    w.seg_only_ = true;
    return w;
  }

  constexpr bool is_seg_only() const noexcept { return seg_only_; }
  constexpr double value() const noexcept { return value_; }
  /// True when the segmentation term contributes at all.
  constexpr bool active() const noexcept { return seg_only_ || value_ > 0.0; }

 private:
  double value_ = 0.0;
  bool seg_only_ = false;
};

struct LossWeights {
  double lambda = 0.02;
  AuxWeight gamma{};
  int cc_window = 9;

  /// Throws std::invalid_argument on negative lambda or a bad window.
  void validate() const;
};

double mse(const GridImage& fixed, const GridImage& warped);
GridImage mse_grad(const GridImage& fixed, const GridImage& warped, double upstream = 1.0);

/// Per-voxel squared normalized correlation over clamped windows.
GridImage local_cc_terms(const GridImage& fixed, const GridImage& warped, int window);
/// Sum of local_cc_terms.
double local_cc(const GridImage& fixed, const GridImage& warped, int window);
/// d(local_cc)/d(warped) times upstream.
GridImage local_cc_grad(const GridImage& fixed, const GridImage& warped, int window, double upstream = 1.0);

/// Sum over voxels, axes and components of squared forward differences.
double smoothness(const DisplacementField& u);
DisplacementField smoothness_grad(const DisplacementField& u, double upstream = 1.0);

/// Per-channel soft Dice.
std::vector<double> soft_dice(const SegmentationMap& fixed, const SegmentationMap& warped);
/// Negative mean soft Dice.
double seg_loss(const SegmentationMap& fixed, const SegmentationMap& warped);
/// d(seg_loss)/d(warped) times upstream.
SegmentationMap seg_loss_grad(const SegmentationMap& fixed, const SegmentationMap& warped, double upstream = 1.0);

struct LossBreakdown {
  double total = 0.0;
  double similarity = 0.0;    ///< weighted contribution
  double smoothness = 0.0;    ///< weighted contribution
  double segmentation = 0.0;  ///< weighted contribution
};

struct LossWithGrad {
  LossBreakdown loss;
  DisplacementField grad;  ///< d(total)/d(u)
};

LossBreakdown unsup_loss(const GridImage& fixed, const GridImage& moving, const DisplacementField& u,
                         const LossWeights& weights, Similarity sim);
LossWithGrad unsup_loss_grad(const GridImage& fixed, const GridImage& moving, const DisplacementField& u,
                             const LossWeights& weights, Similarity sim);

LossBreakdown aux_loss(const GridImage& fixed, const GridImage& moving, const SegmentationMap& fixed_seg,
                       const SegmentationMap& moving_seg, const DisplacementField& u, const LossWeights& weights,
                       Similarity sim);
LossWithGrad aux_loss_grad(const GridImage& fixed, const GridImage& moving, const SegmentationMap& fixed_seg,
                           const SegmentationMap& moving_seg, const DisplacementField& u, const LossWeights& weights,
                           Similarity sim);

namespace detail {
/// Sums over the clamped (2r+1)^n box around every voxel, separably.
std::vector<double> box_sum(const GridGeometry& geom, std::span<const double> in, int radius);

// Planar kernels shared with the gradient engine.
double mse(std::span<const double> fixed, std::span<const double> warped);
void mse_grad(std::span<const double> fixed, std::span<const double> warped, double upstream, std::span<double> out);
std::vector<double> local_cc_terms(const GridGeometry& geom, std::span<const double> fixed,
                                   std::span<const double> warped, int window);
void local_cc_grad(const GridGeometry& geom, std::span<const double> fixed, std::span<const double> warped,
                   int window, double upstream, std::span<double> out);
double smoothness(const GridGeometry& geom, std::span<const double> u, int components);
void smoothness_grad(const GridGeometry& geom, std::span<const double> u, int components, double upstream,
                     std::span<double> out);
std::vector<double> soft_dice(std::size_t nvox, int channels, std::span<const double> fixed,
                              std::span<const double> warped);
void seg_loss_grad(std::size_t nvox, int channels, std::span<const double> fixed, std::span<const double> warped,
                   double upstream, std::span<double> out);
}  // namespace detail

}  // namespace voxreg
