#pragma once

#include <cstdint>
#include <vector>

#include "voxreg/grid.hpp"

namespace voxreg {

/// Synthetic registration problem recipe. Shapes are ellipses (ellipsoids in
/// 3-D) with distinct intensities painted over a zero background; label 0 is
/// background and labels 1..structures are the shapes.
struct SynthSpec {
  std::vector<int> dims{64, 64};
  int structures = 3;
  /// Largest displacement magnitude of the generating field, in voxels.
  double amplitude = 5.0;
  /// Spacing of the random control points that define the field.
  double control_spacing = 20.0;
  double noise_sigma = 0.01;
  /// Gaussian blur applied to the painted intensities.
  double blur_sigma = 1.5;
  std::uint64_t seed = 0;
};

struct SynthPair {
  GridImage fixed;
  GridImage moving;
  GridImage fixed_labels;
  GridImage moving_labels;
  /// Generating field: moving(p) = base(p + truth(p)).
  DisplacementField truth;
  int num_labels = 0;  ///< structures + 1
};

/// moving = warp(base, truth), fixed = base + N(0, noise_sigma^2) noise.
/// Guarantees: truth has no folding voxel and every structure covers at least
/// 1% of the grid in both label maps (regenerated, bounded retries).
SynthPair generate_pair(const SynthSpec& spec);

/// Separable Gaussian blur with clamped borders.
GridImage gaussian_blur(const GridImage& img, double sigma);

}  // namespace voxreg
