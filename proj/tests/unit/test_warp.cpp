#include "doctest.h"
#include "oracles.hpp"
#include "voxreg/errors.hpp"
#include "voxreg/warp.hpp"

using namespace voxreg;

namespace {

// 2 x 4 grid with the ramp along the last axis and a uniform shift along it.
GridImage ramp() { return GridImage(GridGeometry({2, 4}), {0, 1, 2, 3, 0, 1, 2, 3}); }

DisplacementField shift_last(const GridGeometry& g, double s) {
  DisplacementField u(g);
  for (double& v : u.component(g.rank() - 1)) v = s;
  return u;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<int> dims_for(int trial) {
  switch (trial % 4) {
    case 0: return {5, 5};
    case 1: return {7, 6};
    case 2: return {4, 5, 3};
    default: return {5, 5, 5};
  }
}

}  // namespace

TEST_CASE("zero displacement reproduces the image bit-exactly") {
  oracle::Rng rng(1);
  for (const auto& dims : {std::vector<int>{6, 7}, std::vector<int>{3, 4, 5}}) {
    const GridGeometry g(dims);
    const auto m = oracle::random_image(g, rng, -3.0, 5.0);
    CHECK(warp_image(m, identity_displacement(g)) == m);
  }
}

TEST_CASE("ramp under half and whole voxel shifts, clamped at the border") {
  const auto m = ramp();
  const auto half = warp_image(m, shift_last(m.geometry(), 0.5));
  const auto whole = warp_image(m, shift_last(m.geometry(), 1.0));
  const std::vector<double> want_half{0.5, 1.5, 2.5, 3.0, 0.5, 1.5, 2.5, 3.0};
  const std::vector<double> want_whole{1, 2, 3, 3, 1, 2, 3, 3};
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(half[i] == doctest::Approx(want_half[i]).epsilon(1e-15));
    CHECK(whole[i] == want_whole[i]);
  }
}

TEST_CASE("warp matches the tent-weight definition") {
  oracle::Rng rng(2);
  for (int trial = 0; trial < 8; ++trial) {
    const GridGeometry g(dims_for(trial));
    const auto m = oracle::random_image(g, rng);
    const auto u = oracle::random_field(g, rng, 3.0);
    const auto w = warp_image(m, u);
    for (std::size_t i = 0; i < g.voxel_count(); ++i) REQUIRE(w[i] == doctest::Approx(oracle::warp_at(m, u, i)).epsilon(1e-12));
  }
}

TEST_CASE("warped values stay within the source range") {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 8; ++trial) {
    const GridGeometry g(dims_for(trial));
    const auto m = oracle::random_image(g, rng, -2.0, 7.0);
    const auto w = warp_image(m, oracle::random_field(g, rng, 10.0));
    const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
    for (double v : w.values()) {
      CHECK(v >= *lo - 1e-12);
      CHECK(v <= *hi + 1e-12);
    }
  }
}

TEST_CASE("partition of unity: constant images stay constant") {
  oracle::Rng rng(4);
  for (int trial = 0; trial < 8; ++trial) {
    const GridGeometry g(dims_for(trial));
    const GridImage c(g, std::vector<double>(g.voxel_count(), 2.75));
    const auto w = warp_image(c, oracle::random_field(g, rng, 6.0));
    for (double v : w.values()) CHECK(v == doctest::Approx(2.75).epsilon(1e-14));
  }
}

TEST_CASE("locality: a one-voxel change only affects voxels sampling near it") {
  oracle::Rng rng(5);
  const GridGeometry g({7, 7});
  const auto m = oracle::random_image(g, rng);
  const auto u = oracle::random_field(g, rng, 2.0);
  const auto base = warp_image(m, u);
  const std::size_t hit = g.flat_index({3, 4, 0});
  auto m2 = m;
  m2[hit] += 1.0;
  const auto w2 = warp_image(m2, u);
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    const auto p = g.coords(i);
    bool near = true;
    for (int a = 0; a < 2; ++a) {
      const double c = std::clamp(p[a] + u.component(a)[i], 0.0, 6.0);
      near = near && std::abs(c - (a == 0 ? 3 : 4)) < 1.0;
    }
    if (!near) CHECK(w2[i] == base[i]);
  }
}

TEST_CASE("geometry mismatch is rejected") {
  const GridGeometry a({4, 4}), b({4, 5});
  CHECK_THROWS_AS(warp_image(GridImage(a), DisplacementField(b)), GeometryError);
  CHECK_THROWS_AS(warp_backward(GridImage(a), DisplacementField(a), GridImage(b)), GeometryError);
}

TEST_CASE("zero upstream gives zero gradients") {
  oracle::Rng rng(6);
  const GridGeometry g({5, 5});
  const auto gr = warp_backward(oracle::random_image(g, rng), oracle::random_field(g, rng, 2.0), GridImage(g));
  for (double v : gr.moving.values()) CHECK(v == 0.0);
  for (double v : gr.displacement.data()) CHECK(v == 0.0);
}

TEST_CASE("warp gradients match central finite differences") {
  oracle::Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const GridGeometry g(dims_for(trial));
    const auto m = oracle::random_image(g, rng);
    const auto u = oracle::random_field(g, rng, 2.5);
    const auto up = oracle::random_image(g, rng, -1.0, 1.0);
    const auto gr = warp_backward(m, u, up);

    const std::vector<double> u0(u.data().begin(), u.data().end());
    const auto fd_u = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return dot(warp_image(m, DisplacementField(g, x)).values(), up.values()); },
        u0, 1e-4);
    const auto keep = oracle::away_from_ties(u, 1e-3);
    const std::vector<double> an_u(gr.displacement.data().begin(), gr.displacement.data().end());
    CHECK(oracle::relative_error(an_u, fd_u, &keep) < 1e-4);

    const std::vector<double> m0(m.values().begin(), m.values().end());
    const auto fd_m = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return dot(warp_image(GridImage(g, x), u).values(), up.values()); }, m0,
        1e-4);
    const std::vector<double> an_m(gr.moving.values().begin(), gr.moving.values().end());
    CHECK(oracle::relative_error(an_m, fd_m) < 1e-4);
  }
}

TEST_CASE("clamped axes receive no displacement gradient") {
  const GridGeometry g({4, 4});
  oracle::Rng rng(8);
  const auto m = oracle::random_image(g, rng);
  auto u = shift_last(g, 10.0);  // every sample beyond the last column
  const auto gr = warp_backward(m, u, GridImage(g, std::vector<double>(16, 1.0)));
  for (double v : gr.displacement.component(1)) CHECK(v == 0.0);
}

TEST_CASE("at an integer sample the displacement gradient is the upper one-sided slope") {
  const auto m = ramp();
  const GridImage sq(m.geometry(), {0, 1, 4, 9, 0, 1, 4, 9});
  const auto gr = warp_backward(sq, shift_last(sq.geometry(), 1.0), GridImage(sq.geometry(), std::vector<double>(8, 1.0)));
  // p' = 1, 2, 3 (upper slope 3, 5, then clamped) and 4 -> clamped.
  const auto d = gr.displacement.component(1);
  CHECK(d[0] == 3.0);
  CHECK(d[1] == 5.0);
}

TEST_CASE("segmentation warp") {
  const GridGeometry g({2, 4});
  const auto s = onehot_from_labels(GridImage(g, {0, 0, 1, 1, 0, 0, 1, 1}), 2);
  CHECK(warp_segmentation(s, identity_displacement(g)) == s);

  const auto soft = warp_segmentation(s, shift_last(g, 0.5));
  // Column 1 samples halfway between label 0 and label 1.
  CHECK(soft.channel(0)[1] == doctest::Approx(0.5));
  CHECK(soft.channel(1)[1] == doctest::Approx(0.5));
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    const double row = soft.channel(0)[i] + soft.channel(1)[i];
    CHECK(row >= 0.0);
    CHECK(row <= 1.0 + 1e-6);
  }
}

TEST_CASE("integer shift of a one-hot map equals shifting the hard labels") {
  oracle::Rng rng(9);
  const GridGeometry g({6, 6});
  const auto labels = oracle::random_labels(g, rng, 3);
  DisplacementField u(g);
  for (double& v : u.component(0)) v = -1.0;
  for (double& v : u.component(1)) v = 2.0;
  const auto hard = argmax_labels(warp_segmentation(onehot_from_labels(labels, 3), u));
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    const auto p = g.coords(i);
    const Coord q{std::clamp(p[0] - 1, 0, 5), std::clamp(p[1] + 2, 0, 5), 0};
    CHECK(hard[i] == labels.at(q));
  }
}

TEST_CASE("segmentation warp gradients match finite differences") {
  oracle::Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const GridGeometry g(dims_for(trial));
    const auto s = onehot_from_labels(oracle::random_labels(g, rng, 3), 3);
    const auto u = oracle::random_field(g, rng, 2.0);
    std::vector<double> upv(s.data().size());
    for (double& x : upv) x = std::uniform_real_distribution<double>(-1, 1)(rng);
    const SegmentationMap up(g, 3, upv);
    const auto gr = warp_segmentation_backward(s, u, up);
    const std::vector<double> u0(u.data().begin(), u.data().end());
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return dot(warp_segmentation(s, DisplacementField(g, x)).data(), upv); }, u0,
        1e-4);
    const auto keep = oracle::away_from_ties(u, 1e-3);
    const std::vector<double> an(gr.displacement.data().begin(), gr.displacement.data().end());
    CHECK(oracle::relative_error(an, fd, &keep) < 1e-4);
  }
}
