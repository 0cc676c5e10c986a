#include "voxreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "voxreg/eval.hpp"
#include "voxreg/warp.hpp"

namespace voxreg {

GridImage gaussian_blur(const GridImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= norm;

  const GridGeometry& g = img.geometry();
  std::vector<double> cur(img.values().begin(), img.values().end()), next(cur.size());
  for (int a = 0; a < g.rank(); ++a) {
    const int len = g.dim(a);
    const std::size_t st = g.stride(a);
    for (std::size_t idx = 0; idx < cur.size(); ++idx) {
      const int pos = g.coords(idx)[a];
      const std::size_t line0 = idx - static_cast<std::size_t>(pos) * st;
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int q = std::clamp(pos + i, 0, len - 1);
        acc += kernel[i + radius] * cur[line0 + static_cast<std::size_t>(q) * st];
      }
      next[idx] = acc;
    }
    std::swap(cur, next);
  }
  return GridImage(g, std::move(cur));
}

namespace {

constexpr int kMaxAttempts = 200;

GridImage paint_labels(const GridGeometry& g, int structures, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = g.rank();
  const double min_dim = *std::min_element(g.dims().begin(), g.dims().end());
  GridImage labels(g);
  for (int k = 1; k <= structures; ++k) {
    std::array<double, 3> center{}, radius{};
    for (int a = 0; a < n; ++a) {
      center[a] = (0.25 + 0.5 * unit(rng)) * (g.dim(a) - 1);
      radius[a] = (0.12 + 0.12 * unit(rng)) * min_dim;
    }
    const double theta = std::numbers::pi * unit(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t idx = 0; idx < g.voxel_count(); ++idx) {
      const Coord p = g.coords(idx);
      std::array<double, 3> d{};
      for (int a = 0; a < n; ++a) d[a] = p[a] - center[a];
      // rotate within the last two axes
      const double r0 = ct * d[n - 2] + st * d[n - 1];
      const double r1 = -st * d[n - 2] + ct * d[n - 1];
      d[n - 2] = r0;
      d[n - 1] = r1;
      double q = 0.0;
      for (int a = 0; a < n; ++a) q += (d[a] / radius[a]) * (d[a] / radius[a]);
      if (q <= 1.0) labels[idx] = k;
    }
  }
  return labels;
}

bool structures_large_enough(const GridImage& labels, int structures) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(structures) + 1, 0);
  for (double v : labels.values()) ++counts[static_cast<std::size_t>(v)];
  const double min_count = 0.01 * static_cast<double>(labels.geometry().voxel_count());
  for (int k = 1; k <= structures; ++k)
    if (static_cast<double>(counts[k]) < min_count) return false;
  return true;
}

DisplacementField random_field(const GridGeometry& g, double amplitude, double spacing, std::mt19937_64& rng) {
  DisplacementField u(g);
  if (amplitude <= 0.0) return u;
  const int n = g.rank();
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  // Control lattice extends one spacing beyond the grid on each side.
  std::vector<std::array<double, 3>> centers;
  std::vector<std::array<double, 3>> vecs;
  std::array<int, 3> counts{1, 1, 1};
  for (int a = 0; a < n; ++a) counts[a] = static_cast<int>(std::ceil((g.dim(a) - 1) / spacing)) + 3;
  for (int i = 0; i < counts[0]; ++i)
    for (int j = 0; j < counts[1]; ++j)
      for (int k = 0; k < counts[2]; ++k) {
        const std::array<int, 3> ijk{i, j, k};
        std::array<double, 3> c{}, v{};
        for (int a = 0; a < n; ++a) {
          c[a] = (ijk[a] - 1) * spacing;
          v[a] = sym(rng);
        }
        centers.push_back(c);
        vecs.push_back(v);
      }
  const double sigma = 0.5 * spacing;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  double max_mag = 0.0;
  for (std::size_t idx = 0; idx < g.voxel_count(); ++idx) {
    const Coord p = g.coords(idx);
    std::array<double, 3> acc{};
    for (std::size_t c = 0; c < centers.size(); ++c) {
      double r2 = 0.0;
      for (int a = 0; a < n; ++a) r2 += (p[a] - centers[c][a]) * (p[a] - centers[c][a]);
      const double w = std::exp(-r2 * inv2s2);
      for (int a = 0; a < n; ++a) acc[a] += w * vecs[c][a];
    }
    double mag = 0.0;
    for (int a = 0; a < n; ++a) {
      u.component(a)[idx] = acc[a];
      mag += acc[a] * acc[a];
    }
    max_mag = std::max(max_mag, std::sqrt(mag));
  }
  if (max_mag > 0.0) {
    const double s = amplitude / max_mag;
    for (double& v : u.data()) v *= s;
  }
  return u;
}

}  // namespace

SynthPair generate_pair(const SynthSpec& spec) {
  const GridGeometry g(spec.dims);
  if (spec.structures < 1) throw std::invalid_argument("SynthSpec: need at least one structure");
  if (spec.amplitude < 0.0 || spec.control_spacing <= 0.0 || spec.noise_sigma < 0.0)
    throw std::invalid_argument("SynthSpec: amplitude, spacing and noise must be non-negative");
  std::mt19937_64 rng(spec.seed);
  const int num_labels = spec.structures + 1;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const GridImage labels = paint_labels(g, spec.structures, rng);
    if (!structures_large_enough(labels, spec.structures)) continue;

    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    std::vector<double> level(static_cast<std::size_t>(num_labels), 0.0);
    for (int k = 1; k < num_labels; ++k) level[k] = 0.2 + 0.8 * k / spec.structures + jitter(rng);
    GridImage painted(g);
    for (std::size_t i = 0; i < g.voxel_count(); ++i) painted[i] = level[static_cast<std::size_t>(labels[i])];
    const GridImage base = gaussian_blur(painted, spec.blur_sigma);

    DisplacementField truth = random_field(g, spec.amplitude, spec.control_spacing, rng);
    if (jacobian_report(truth).folding_count != 0) continue;

    const GridImage moving_labels = argmax_labels(warp_segmentation(onehot_from_labels(labels, num_labels), truth));
    if (!structures_large_enough(moving_labels, spec.structures)) continue;

    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    GridImage fixed = base;
    if (spec.noise_sigma > 0.0)
      for (double& v : fixed.values()) v += noise(rng);

    return SynthPair{std::move(fixed), warp_image(base, truth), labels, moving_labels, std::move(truth), num_labels};
  }
  throw std::runtime_error("generate_pair: could not satisfy structure-size and folding constraints");
}

}  // namespace voxreg
