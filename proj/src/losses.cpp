#include "voxreg/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "voxreg/errors.hpp"
#include "voxreg/warp.hpp"

namespace voxreg {

AuxWeight AuxWeight::weight(double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be finite and >= 0");
  AuxWeight w;
  w.value_ = gamma;
  return w;
}

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and >= 0");
  if (cc_window < 3 || cc_window % 2 == 0)
    throw std::invalid_argument("cc window must be odd and >= 3, got " + std::to_string(cc_window));
}

namespace detail {

std::vector<double> box_sum(const GridGeometry& geom, std::span<const double> in, int radius) {
  std::vector<double> cur(in.begin(), in.end());
  std::vector<double> next(cur.size());
  std::vector<double> prefix;
  for (int a = 0; a < geom.rank(); ++a) {
    const std::size_t len = static_cast<std::size_t>(geom.dim(a));
    const std::size_t inner = geom.stride(a);
    const std::size_t outer = geom.voxel_count() / (len * inner);
    prefix.assign(len + 1, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        for (std::size_t k = 0; k < len; ++k) prefix[k + 1] = prefix[k] + cur[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t lo = k >= static_cast<std::size_t>(radius) ? k - radius : 0;
          const std::size_t hi = std::min(len - 1, k + radius);
          next[base + k * inner] = prefix[hi + 1] - prefix[lo];
        }
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

double mse(std::span<const double> fixed, std::span<const double> warped) {
  double acc = 0.0;
  for (std::size_t i = 0; i < fixed.size(); ++i) {
    const double d = fixed[i] - warped[i];
    acc += d * d;
  }
  return acc / static_cast<double>(fixed.size());
}

void mse_grad(std::span<const double> fixed, std::span<const double> warped, double upstream, std::span<double> out) {
  const double scale = 2.0 * upstream / static_cast<double>(fixed.size());
  for (std::size_t i = 0; i < fixed.size(); ++i) out[i] = scale * (warped[i] - fixed[i]);
}

namespace {

struct CcStats {
  std::vector<double> count, sf, sw, sff, sww, sfw;
};

CcStats cc_stats(const GridGeometry& geom, std::span<const double> f, std::span<const double> w, int radius) {
  const std::size_t n = geom.voxel_count();
  std::vector<double> ones(n, 1.0), ff(n), ww(n), fw(n);
  for (std::size_t i = 0; i < n; ++i) {
    ff[i] = f[i] * f[i];
    ww[i] = w[i] * w[i];
    fw[i] = f[i] * w[i];
  }
  return CcStats{box_sum(geom, ones, radius), box_sum(geom, f, radius),  box_sum(geom, w, radius),
                 box_sum(geom, ff, radius),   box_sum(geom, ww, radius), box_sum(geom, fw, radius)};
}

void check_window(int window) {
  if (window < 3 || window % 2 == 0)
    throw std::invalid_argument("local_cc: window must be odd and >= 3, got " + std::to_string(window));
}

}  // namespace

std::vector<double> local_cc_terms(const GridGeometry& geom, std::span<const double> fixed,
                                   std::span<const double> warped, int window) {
  check_window(window);
  const CcStats s = cc_stats(geom, fixed, warped, window / 2);
  std::vector<double> terms(geom.voxel_count());
  for (std::size_t p = 0; p < terms.size(); ++p) {
    const double inv_n = 1.0 / s.count[p];
    const double cross = s.sfw[p] - s.sf[p] * s.sw[p] * inv_n;
    const double var_f = s.sff[p] - s.sf[p] * s.sf[p] * inv_n;
    const double var_w = s.sww[p] - s.sw[p] * s.sw[p] * inv_n;
    terms[p] = cross * cross / (var_f * var_w + kLossEpsilon);
  }
  return terms;
}

void local_cc_grad(const GridGeometry& geom, std::span<const double> fixed, std::span<const double> warped,
                   int window, double upstream, std::span<double> out) {
  check_window(window);
  const int radius = window / 2;
  const CcStats s = cc_stats(geom, fixed, warped, radius);
  const std::size_t n = geom.voxel_count();
  // term_p = A^2 / D with D = B*C + eps; for i in W(p):
  //   dA/dw_i = f_i - mean_f(p), dC/dw_i = 2 (w_i - mean_w(p)).
  std::vector<double> alpha(n), alpha_mf(n), beta(n), beta_mw(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double inv_n = 1.0 / s.count[p];
    const double mf = s.sf[p] * inv_n;
    const double mw = s.sw[p] * inv_n;
    const double cross = s.sfw[p] - s.sf[p] * mw;
    const double var_f = s.sff[p] - s.sf[p] * mf;
    const double var_w = s.sww[p] - s.sw[p] * mw;
    const double denom = var_f * var_w + kLossEpsilon;
    const double a = 2.0 * cross / denom;
    const double b = cross * cross * var_f / (denom * denom);
    alpha[p] = a;
    alpha_mf[p] = a * mf;
    beta[p] = b;
    beta_mw[p] = b * mw;
  }
  const auto box_alpha = box_sum(geom, alpha, radius);
  const auto box_alpha_mf = box_sum(geom, alpha_mf, radius);
  const auto box_beta = box_sum(geom, beta, radius);
  const auto box_beta_mw = box_sum(geom, beta_mw, radius);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = fixed[i] * box_alpha[i] - box_alpha_mf[i] - 2.0 * (warped[i] * box_beta[i] - box_beta_mw[i]);
    out[i] = upstream * g;
  }
}

double smoothness(const GridGeometry& geom, std::span<const double> u, int components) {
  const std::size_t n = geom.voxel_count();
  double acc = 0.0;
  for (int c = 0; c < components; ++c) {
    const double* uc = u.data() + c * n;
    for (int a = 0; a < geom.rank(); ++a) {
      const std::size_t st = geom.stride(a);
      for (std::size_t p = 0; p < n; ++p) {
        if (geom.coords(p)[a] + 1 >= geom.dim(a)) continue;
        const double d = uc[p + st] - uc[p];
        acc += d * d;
      }
    }
  }
  return acc;
}

void smoothness_grad(const GridGeometry& geom, std::span<const double> u, int components, double upstream,
                     std::span<double> out) {
  const std::size_t n = geom.voxel_count();
  std::fill(out.begin(), out.end(), 0.0);
  for (int c = 0; c < components; ++c) {
    const double* uc = u.data() + c * n;
    double* gc = out.data() + c * n;
    for (int a = 0; a < geom.rank(); ++a) {
      const std::size_t st = geom.stride(a);
      for (std::size_t p = 0; p < n; ++p) {
        if (geom.coords(p)[a] + 1 >= geom.dim(a)) continue;
        const double g = 2.0 * upstream * (uc[p + st] - uc[p]);
        gc[p + st] += g;
        gc[p] -= g;
      }
    }
  }
}

std::vector<double> soft_dice(std::size_t nvox, int channels, std::span<const double> fixed,
                              std::span<const double> warped) {
  std::vector<double> dice(static_cast<std::size_t>(channels));
  for (int k = 0; k < channels; ++k) {
    const double* a = fixed.data() + k * nvox;
    const double* b = warped.data() + k * nvox;
    double inter = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (std::size_t p = 0; p < nvox; ++p) {
      inter += a[p] * b[p];
      sum_a += a[p];
      sum_b += b[p];
    }
    dice[k] = 2.0 * inter / (sum_a + sum_b + kLossEpsilon);
  }
  return dice;
}

void seg_loss_grad(std::size_t nvox, int channels, std::span<const double> fixed, std::span<const double> warped,
                   double upstream, std::span<double> out) {
  const double scale = -upstream / static_cast<double>(channels);
  for (int k = 0; k < channels; ++k) {
    const double* a = fixed.data() + k * nvox;
    const double* b = warped.data() + k * nvox;
    double inter = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (std::size_t p = 0; p < nvox; ++p) {
      inter += a[p] * b[p];
      sum_a += a[p];
      sum_b += b[p];
    }
    const double denom = sum_a + sum_b + kLossEpsilon;
    const double c1 = 2.0 / denom;
    const double c2 = 2.0 * inter / (denom * denom);
    double* g = out.data() + k * nvox;
    for (std::size_t p = 0; p < nvox; ++p) g[p] = scale * (c1 * a[p] - c2);
  }
}

}  // namespace detail

double mse(const GridImage& fixed, const GridImage& warped) {
  require_same_geometry(fixed.geometry(), warped.geometry(), "mse");
  return detail::mse(fixed.values(), warped.values());
}

GridImage mse_grad(const GridImage& fixed, const GridImage& warped, double upstream) {
  require_same_geometry(fixed.geometry(), warped.geometry(), "mse");
  GridImage g(fixed.geometry());
  detail::mse_grad(fixed.values(), warped.values(), upstream, g.values());
  return g;
}

GridImage local_cc_terms(const GridImage& fixed, const GridImage& warped, int window) {
  require_same_geometry(fixed.geometry(), warped.geometry(), "local_cc");
  return GridImage(fixed.geometry(), detail::local_cc_terms(fixed.geometry(), fixed.values(), warped.values(), window));
}

double local_cc(const GridImage& fixed, const GridImage& warped, int window) {
  const GridImage terms = local_cc_terms(fixed, warped, window);
  double acc = 0.0;
  for (double t : terms.values()) acc += t;
  return acc;
}

GridImage local_cc_grad(const GridImage& fixed, const GridImage& warped, int window, double upstream) {
  require_same_geometry(fixed.geometry(), warped.geometry(), "local_cc");
  GridImage g(fixed.geometry());
  detail::local_cc_grad(fixed.geometry(), fixed.values(), warped.values(), window, upstream, g.values());
  return g;
}

double smoothness(const DisplacementField& u) { return detail::smoothness(u.geometry(), u.data(), u.rank()); }

DisplacementField smoothness_grad(const DisplacementField& u, double upstream) {
  DisplacementField g(u.geometry());
  detail::smoothness_grad(u.geometry(), u.data(), u.rank(), upstream, g.data());
  return g;
}

namespace {
void check_seg_pair(const SegmentationMap& a, const SegmentationMap& b) {
  require_same_geometry(a.geometry(), b.geometry(), "soft_dice");
  if (a.channels() != b.channels())
    throw GeometryError("soft_dice: channel mismatch (" + std::to_string(a.channels()) + " vs " +
                        std::to_string(b.channels()) + ")");
}
}  // namespace

std::vector<double> soft_dice(const SegmentationMap& fixed, const SegmentationMap& warped) {
  check_seg_pair(fixed, warped);
  return detail::soft_dice(fixed.geometry().voxel_count(), fixed.channels(), fixed.data(), warped.data());
}

double seg_loss(const SegmentationMap& fixed, const SegmentationMap& warped) {
  const auto dice = soft_dice(fixed, warped);
  double acc = 0.0;
  for (double d : dice) acc += d;
  return -acc / static_cast<double>(dice.size());
}

SegmentationMap seg_loss_grad(const SegmentationMap& fixed, const SegmentationMap& warped, double upstream) {
  check_seg_pair(fixed, warped);
  SegmentationMap g(fixed.geometry(), fixed.channels());
  detail::seg_loss_grad(fixed.geometry().voxel_count(), fixed.channels(), fixed.data(), warped.data(), upstream,
                        g.data());
  return g;
}

namespace {

struct SimilarityEval {
  double weighted;
  GridImage grad_warped;  // empty unless requested
};

double voxel_norm(const GridGeometry& g) { return 1.0 / static_cast<double>(g.voxel_count()); }

SimilarityEval similarity_term(const GridImage& fixed, const GridImage& warped, const LossWeights& w, Similarity sim,
                               bool want_grad) {
  if (sim == Similarity::mse) {
    SimilarityEval e{mse(fixed, warped), {}};
    if (want_grad) e.grad_warped = mse_grad(fixed, warped, 1.0);
    return e;
  }
  const double coef = -voxel_norm(fixed.geometry());
  SimilarityEval e{coef * local_cc(fixed, warped, w.cc_window), {}};
  if (want_grad) e.grad_warped = local_cc_grad(fixed, warped, w.cc_window, 1.0 * coef);
  return e;
}

void add_into(DisplacementField& acc, const DisplacementField& g) {
  auto a = acc.data();
  auto b = g.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

LossBreakdown unsup_loss(const GridImage& fixed, const GridImage& moving, const DisplacementField& u,
                         const LossWeights& weights, Similarity sim) {
  weights.validate();
  require_same_geometry(fixed.geometry(), moving.geometry(), "unsup_loss");
  const GridImage warped = warp_image(moving, u);
  LossBreakdown out;
  out.similarity = similarity_term(fixed, warped, weights, sim, false).weighted;
  out.smoothness = (weights.lambda * voxel_norm(u.geometry())) * smoothness(u);
  out.total = out.similarity + out.smoothness;
  return out;
}

// Accumulation order mirrors the reverse sweep of the gradient engine:
// smoothness first, then the warp path.
LossWithGrad unsup_loss_grad(const GridImage& fixed, const GridImage& moving, const DisplacementField& u,
                             const LossWeights& weights, Similarity sim) {
  weights.validate();
  require_same_geometry(fixed.geometry(), moving.geometry(), "unsup_loss");
  const GridImage warped = warp_image(moving, u);
  const SimilarityEval s = similarity_term(fixed, warped, weights, sim, true);
  const double smooth_coef = weights.lambda * voxel_norm(u.geometry());
  LossWithGrad out{{}, smoothness_grad(u, 1.0 * smooth_coef)};
  out.loss.similarity = s.weighted;
  out.loss.smoothness = smooth_coef * smoothness(u);
  out.loss.total = out.loss.similarity + out.loss.smoothness;
  add_into(out.grad, warp_backward(moving, u, s.grad_warped).displacement);
  return out;
}

LossBreakdown aux_loss(const GridImage& fixed, const GridImage& moving, const SegmentationMap& fixed_seg,
                       const SegmentationMap& moving_seg, const DisplacementField& u, const LossWeights& weights,
                       Similarity sim) {
  if (!weights.gamma.active()) return unsup_loss(fixed, moving, u, weights, sim);
  const double seg = seg_loss(fixed_seg, warp_segmentation(moving_seg, u));
  if (weights.gamma.is_seg_only()) {
    LossBreakdown out;
    out.segmentation = seg;
    out.total = seg;
    return out;
  }
  LossBreakdown out = unsup_loss(fixed, moving, u, weights, sim);
  out.segmentation = weights.gamma.value() * seg;
  out.total = out.total + out.segmentation;
  return out;
}

LossWithGrad aux_loss_grad(const GridImage& fixed, const GridImage& moving, const SegmentationMap& fixed_seg,
                           const SegmentationMap& moving_seg, const DisplacementField& u, const LossWeights& weights,
                           Similarity sim) {
  if (!weights.gamma.active()) return unsup_loss_grad(fixed, moving, u, weights, sim);
  weights.validate();
  const SegmentationMap warped_seg = warp_segmentation(moving_seg, u);
  const double seg = seg_loss(fixed_seg, warped_seg);
  const double seg_coef = weights.gamma.is_seg_only() ? 1.0 : 1.0 * weights.gamma.value();
  const SegmentationMap seg_grad = seg_loss_grad(fixed_seg, warped_seg, seg_coef);
  DisplacementField grad = warp_segmentation_backward(moving_seg, u, seg_grad).displacement;

  LossWithGrad out{{}, std::move(grad)};
  if (weights.gamma.is_seg_only()) {
    out.loss.segmentation = seg;
    out.loss.total = seg;
    return out;
  }
  require_same_geometry(fixed.geometry(), moving.geometry(), "aux_loss");
  const GridImage warped = warp_image(moving, u);
  const SimilarityEval s = similarity_term(fixed, warped, weights, sim, true);
  const double smooth_coef = weights.lambda * voxel_norm(u.geometry());
  add_into(out.grad, smoothness_grad(u, 1.0 * smooth_coef));
  add_into(out.grad, warp_backward(moving, u, s.grad_warped).displacement);
  out.loss.similarity = s.weighted;
  out.loss.smoothness = smooth_coef * smoothness(u);
  out.loss.segmentation = weights.gamma.value() * seg;
  out.loss.total = (out.loss.similarity + out.loss.smoothness) + out.loss.segmentation;
  return out;
}

}  // namespace voxreg
