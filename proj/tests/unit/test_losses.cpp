#include "doctest.h"
#include "oracles.hpp"
#include "voxreg/errors.hpp"
#include "voxreg/losses.hpp"
#include "voxreg/warp.hpp"

using namespace voxreg;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

std::vector<int> small_dims(int trial) {
  switch (trial % 4) {
    case 0: return {6, 6};
    case 1: return {8, 7};
    case 2: return {4, 5, 4};
    default: return {6, 6, 6};
  }
}

// Voxels whose clamped window lies fully inside the grid.
bool interior(const GridGeometry& g, std::size_t i, int r) {
  const auto p = g.coords(i);
  for (int a = 0; a < g.rank(); ++a)
    if (p[a] < r || p[a] + r >= g.dim(a)) return false;
  return true;
}

}  // namespace

TEST_CASE("weights validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.lambda = -0.1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w.lambda = 0.0;
  w.cc_window = 4;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w.cc_window = 1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  CHECK_THROWS_AS(AuxWeight::weight(-1.0), std::invalid_argument);
  CHECK_FALSE(AuxWeight::weight(0.0).active());
  CHECK(AuxWeight::seg_only().active());
}

TEST_CASE("mse values") {
  const GridGeometry g({2, 2});
  oracle::Rng rng(11);
  const auto f = oracle::random_image(g, rng);
  CHECK(mse(f, f) == 0.0);
  CHECK(mse(GridImage(g), GridImage(g, {1, 1, 1, 1})) == 1.0);
  CHECK_THROWS_AS(mse(GridImage(g), GridImage(GridGeometry({2, 3}))), GeometryError);
  for (int t = 0; t < 20; ++t) {
    const GridGeometry g4({4, 4});
    const auto a = oracle::random_image(g4, rng, -2, 2), b = oracle::random_image(g4, rng, -2, 2);
    CHECK(std::abs(mse(a, b) - oracle::mse(a, b)) < 1e-12);
    CHECK(mse(a, b) > 0.0);
  }
}

TEST_CASE("local cc of an image with itself is one on interior windows") {
  oracle::Rng rng(12);
  for (const auto& dims : {std::vector<int>{9, 9}, std::vector<int>{6, 7, 5}}) {
    const GridGeometry g(dims);
    const auto f = oracle::random_image(g, rng, 0.0, 10.0);
    const auto terms = local_cc_terms(f, f, 3);
    for (std::size_t i = 0; i < g.voxel_count(); ++i)
      if (interior(g, i, 1)) CHECK(terms[i] == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("local cc is invariant to affine intensity changes") {
  // Each term is num^2 / (vf vw + eps). Intensities span [0, 10], so window
  // variance sums are O(10) and the eps shift is far below the tolerance.
  oracle::Rng rng(13);
  const GridGeometry g({9, 9});
  const auto f = oracle::random_image(g, rng, 0.0, 10.0);
  const auto w = oracle::random_image(g, rng, 0.0, 10.0);
  for (const double a : {3.0, 0.5, -2.0}) {
    std::vector<double> v(g.voxel_count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * w[i] + 1.25;
    const auto base = local_cc_terms(f, w, 3);
    const auto moved = local_cc_terms(f, GridImage(g, v), 3);
    const auto self = local_cc_terms(f, f, 3);
    for (std::size_t i = 0; i < g.voxel_count(); ++i) {
      if (!interior(g, i, 1)) continue;
      CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-6));
    }
    std::vector<double> af(g.voxel_count());
    for (std::size_t i = 0; i < af.size(); ++i) af[i] = std::abs(a) * f[i] - 0.5;
    const auto aff = local_cc_terms(f, GridImage(g, af), 3);
    for (std::size_t i = 0; i < g.voxel_count(); ++i)
      if (interior(g, i, 1)) CHECK(aff[i] == doctest::Approx(self[i]).epsilon(1e-6));
  }
}

TEST_CASE("local cc matches the windowed-sum oracle and stays in [0, 1]") {
  oracle::Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    const GridGeometry g(t % 2 ? std::vector<int>{9, 9} : std::vector<int>{5, 4, 6});
    const int window = t % 3 == 2 ? 5 : 3;
    const auto f = oracle::random_image(g, rng), w = oracle::random_image(g, rng);
    const auto terms = local_cc_terms(f, w, window);
    const auto ref = oracle::local_cc_terms(f, w, window);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      REQUIRE(std::abs(terms[i] - ref[i]) < 1e-10);
      CHECK(terms[i] >= 0.0);
      CHECK(terms[i] <= 1.0);
    }
    const double total = local_cc(f, w, window);
    CHECK(std::abs(total - oracle::local_cc(f, w, window)) < 1e-10);
    CHECK(total <= static_cast<double>(g.voxel_count()));
  }
}

TEST_CASE("local cc rejects even or tiny windows and mismatched grids") {
  const GridGeometry g({5, 5});
  CHECK_THROWS_AS(local_cc(GridImage(g), GridImage(g), 4), std::invalid_argument);
  CHECK_THROWS_AS(local_cc(GridImage(g), GridImage(g), 1), std::invalid_argument);
  CHECK_THROWS_AS(local_cc(GridImage(g), GridImage(GridGeometry({5, 6})), 3), GeometryError);
}

TEST_CASE("smoothness values") {
  oracle::Rng rng(15);
  const GridGeometry g({3, 3});
  DisplacementField c(g, std::vector<double>(18, -1.5));
  CHECK(smoothness(c) == 0.0);

  DisplacementField ramp(g);
  for (std::size_t i = 0; i < 9; ++i) ramp.component(1)[i] = g.coords(i)[1];
  CHECK(smoothness(ramp) == 6.0);

  for (int t = 0; t < 20; ++t) {
    const GridGeometry gg(small_dims(t));
    auto u = oracle::random_field(gg, rng, 2.0);
    const double s = smoothness(u);
    CHECK(std::abs(s - oracle::smoothness(u)) < 1e-10 * std::max(1.0, s));
    for (double& v : u.data()) v += 0.75;
    CHECK(smoothness(u) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("soft dice and segmentation loss") {
  const GridGeometry g({2, 4});
  const auto a = onehot_from_labels(GridImage(g, {0, 0, 1, 1, 0, 0, 1, 1}), 2);
  for (double d : soft_dice(a, a)) CHECK(d == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(seg_loss(a, a) == doctest::Approx(-1.0).epsilon(1e-6));

  const auto b = onehot_from_labels(GridImage(g, {1, 1, 0, 0, 1, 1, 0, 0}), 2);
  for (double d : soft_dice(a, b)) CHECK(d == 0.0);
  CHECK(seg_loss(a, b) == 0.0);

  // Channel 1: |sf| = 2, |sw| = 2, one shared voxel.
  const SegmentationMap sf(g, 1, {1, 1, 0, 0, 0, 0, 0, 0});
  const SegmentationMap sw(g, 1, {0, 1, 1, 0, 0, 0, 0, 0});
  CHECK(soft_dice(sf, sw)[0] == doctest::Approx(0.5).epsilon(1e-5));

  // Dice (1, 0.5) -> -0.75.
  const SegmentationMap f2(g, 2, {1, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0});
  const SegmentationMap w2(g, 2, {1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0});
  CHECK(seg_loss(f2, w2) == doctest::Approx(-0.75).epsilon(1e-5));

  CHECK_THROWS_AS(soft_dice(a, SegmentationMap(g, 3)), std::invalid_argument);
}

TEST_CASE("soft dice is symmetric") {
  oracle::Rng rng(16);
  for (int t = 0; t < 10; ++t) {
    const GridGeometry g({5, 6});
    const auto s = onehot_from_labels(oracle::random_labels(g, rng, 3), 3);
    const auto w = warp_segmentation(s, oracle::random_field(g, rng, 2.0));
    const auto ab = soft_dice(s, w), ba = soft_dice(w, s);
    for (std::size_t k = 0; k < ab.size(); ++k) CHECK(ab[k] == doctest::Approx(ba[k]).epsilon(1e-14));
  }
}

TEST_CASE("combined objectives") {
  oracle::Rng rng(17);
  const GridGeometry g({6, 6});
  const auto f = oracle::random_image(g, rng);
  const auto u0 = identity_displacement(g);
  LossWeights w;
  w.lambda = 0.5;
  CHECK(unsup_loss(f, f, u0, w, Similarity::mse).total == 0.0);

  const auto m = oracle::random_image(g, rng);
  const auto u = oracle::random_field(g, rng, 1.5);
  w.lambda = 0.0;
  CHECK(unsup_loss(f, m, u, w, Similarity::mse).total == mse(f, warp_image(m, u)));
  CHECK(unsup_loss(f, m, u, w, Similarity::cc).total ==
        doctest::Approx(-local_cc(f, warp_image(m, u), 9) / 36.0).epsilon(1e-14));

  w.lambda = 0.02;
  const auto lb = unsup_loss(f, m, u, w, Similarity::mse);
  CHECK(lb.smoothness == doctest::Approx(0.02 * smoothness(u) / 36.0).epsilon(1e-14));
  CHECK(lb.total == lb.similarity + lb.smoothness);

  const auto sf = onehot_from_labels(oracle::random_labels(g, rng, 2), 2);
  const auto sm = onehot_from_labels(oracle::random_labels(g, rng, 2), 2);
  w.gamma = AuxWeight::weight(0.0);
  CHECK(aux_loss(f, m, sf, sm, u, w, Similarity::mse).total == lb.total);

  w.gamma = AuxWeight::seg_only();
  CHECK(aux_loss(f, m, sf, sf, u0, w, Similarity::mse).total == doctest::Approx(-1.0).epsilon(1e-6));
  const auto so = aux_loss(f, m, sf, sm, u, w, Similarity::cc);
  CHECK(so.similarity == 0.0);
  CHECK(so.smoothness == 0.0);
  CHECK(so.total == seg_loss(sf, warp_segmentation(sm, u)));
}

TEST_CASE("loss gradients match central finite differences") {
  oracle::Rng rng(18);
  for (int t = 0; t < 20; ++t) {
    const GridGeometry g(small_dims(t));
    const auto f = oracle::random_image(g, rng), w = oracle::random_image(g, rng);
    const std::vector<double> w0 = vec(w.values());
    const double up = 0.7;

    const auto fd_mse = oracle::fd_gradient([&](const auto& x) { return up * mse(f, GridImage(g, x)); }, w0, 1e-4);
    CHECK(oracle::relative_error(vec(mse_grad(f, w, up).values()), fd_mse) < 1e-4);

    const int win = t % 2 ? 3 : 5;
    const auto fd_cc = oracle::fd_gradient([&](const auto& x) { return up * local_cc(f, GridImage(g, x), win); }, w0, 1e-4);
    CHECK(oracle::relative_error(vec(local_cc_grad(f, w, win, up).values()), fd_cc) < 1e-4);

    const auto u = oracle::random_field(g, rng, 2.0);
    const std::vector<double> uv = vec(u.data());
    const auto fd_s = oracle::fd_gradient([&](const auto& x) { return up * smoothness(DisplacementField(g, x)); }, uv, 1e-4);
    CHECK(oracle::relative_error(vec(smoothness_grad(u, up).data()), fd_s) < 1e-6);

    const auto sf = onehot_from_labels(oracle::random_labels(g, rng, 3), 3);
    const auto sw = warp_segmentation(onehot_from_labels(oracle::random_labels(g, rng, 3), 3), u);
    const std::vector<double> s0 = vec(sw.data());
    const auto fd_seg =
        oracle::fd_gradient([&](const auto& x) { return up * seg_loss(sf, SegmentationMap(g, 3, x)); }, s0, 1e-4);
    CHECK(oracle::relative_error(vec(seg_loss_grad(sf, sw, up).data()), fd_seg) < 1e-4);
  }
}

TEST_CASE("combined objective gradients match central finite differences") {
  oracle::Rng rng(19);
  for (int t = 0; t < 20; ++t) {
    const GridGeometry g(t % 2 ? std::vector<int>{6, 6} : std::vector<int>{5, 4, 5});
    const auto f = oracle::random_image(g, rng), m = oracle::random_image(g, rng);
    const auto sf = onehot_from_labels(oracle::random_labels(g, rng, 2), 2);
    const auto sm = onehot_from_labels(oracle::random_labels(g, rng, 2), 2);
    const auto u = oracle::random_field(g, rng, 2.0);
    const auto keep = oracle::away_from_ties(u, 1e-3);
    const std::vector<double> u0 = vec(u.data());
    LossWeights w;
    w.lambda = 0.1;
    w.cc_window = 3;

    for (const auto sim : {Similarity::mse, Similarity::cc}) {
      const auto an = unsup_loss_grad(f, m, u, w, sim);
      CHECK(an.loss.total == unsup_loss(f, m, u, w, sim).total);
      const auto fd = oracle::fd_gradient(
          [&](const auto& x) { return unsup_loss(f, m, DisplacementField(g, x), w, sim).total; }, u0, 1e-4);
      CHECK(oracle::relative_error(vec(an.grad.data()), fd, &keep) < 1e-4);
    }
    for (const auto gamma : {AuxWeight::weight(0.3), AuxWeight::seg_only()}) {
      LossWeights wa = w;
      wa.gamma = gamma;
      const auto sim = t % 3 ? Similarity::mse : Similarity::cc;
      const auto an = aux_loss_grad(f, m, sf, sm, u, wa, sim);
      const auto fd = oracle::fd_gradient(
          [&](const auto& x) { return aux_loss(f, m, sf, sm, DisplacementField(g, x), wa, sim).total; }, u0, 1e-4);
      CHECK(oracle::relative_error(vec(an.grad.data()), fd, &keep) < 1e-4);
    }
  }
}
