#include "doctest.h"
#include "oracles.hpp"
#include "voxreg/errors.hpp"
#include "voxreg/optimize.hpp"
#include "voxreg/synth.hpp"
#include "voxreg/warp.hpp"

using namespace voxreg;

namespace {

NetConfig small_net() {
  NetConfig c;
  c.encoder_filters = {4, 8};
  c.decoder_filters = {8, 8};
  c.full_res_filters = {4};
  return c;
}

MemoryPairSource synth_source(int count, int size, std::uint64_t seed) {
  std::vector<SynthPair> pairs;
  for (int i = 0; i < count; ++i) {
    SynthSpec s;
    s.dims = {size, size};
    s.control_spacing = 12.0;
    s.amplitude = 3.0;
    s.seed = seed + static_cast<std::uint64_t>(i);
    pairs.push_back(generate_pair(s));
  }
  return MemoryPairSource::from_synth(pairs);
}

}  // namespace

TEST_CASE("adam with a zero gradient leaves parameters but advances t") {
  AdamState s(3, AdamConfig{});
  std::vector<double> p{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  adam_step(s, p, g);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
  CHECK(s.t == 1);
}

TEST_CASE("adam first step by hand") {
  AdamState s(1, AdamConfig{.lr = 1e-4});
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  adam_step(s, p, g);
  // m = 0.1, v = 0.001; bias correction makes both hat values exactly 1.
  CHECK(p[0] == doctest::Approx(-1e-4 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(p[0] == doctest::Approx(-9.9999999e-5).epsilon(1e-12));
}

TEST_CASE("adam matches a scalar reference over several steps") {
  const AdamConfig cfg{.lr = 1e-3};
  AdamState s(1, cfg);
  std::vector<double> p{0.5};
  double ref = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {1.0, 1.0, -0.5, 2.0};
  for (int t = 1; t <= 4; ++t) {
    const double gv = grads[t - 1];
    adam_step(s, p, std::vector<double>{gv});
    m = 0.9 * m + 0.1 * gv;
    v = 0.999 * v + 0.001 * gv * gv;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    ref -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p[0] == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("adam rejects mismatched sizes and non-finite gradients without side effects") {
  AdamState s(2, AdamConfig{});
  std::vector<double> p{1.0, 2.0};
  CHECK_THROWS_AS(adam_step(s, p, std::vector<double>{1.0}), std::invalid_argument);
  CHECK_THROWS_AS(adam_step(s, p, std::vector<double>{1.0, std::nan("")}), NumericalError);
  CHECK(s.t == 0);
  CHECK(p == std::vector<double>{1.0, 2.0});
}

TEST_CASE("instance optimization of an already registered pair stays at zero") {
  oracle::Rng rng(51);
  const GridGeometry g({16, 16});
  const auto f = gaussian_blur(oracle::random_image(g, rng), 1.5);
  const auto r = optimize_instance(f, f, identity_displacement(g), LossWeights{}, Similarity::mse);
  CHECK(r.trace.size() == 101);
  for (double v : r.field.data()) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("instance optimization recovers a two-voxel translation") {
  const GridGeometry g({32, 32});
  GridImage f(g), m(g);
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    const auto p = g.coords(i);
    auto blob = [](double y, double x) { return std::exp(-((y - 15.5) * (y - 15.5) + (x - 15.5) * (x - 15.5)) / 40.0); };
    f[i] = blob(p[0], p[1]);
    m[i] = blob(p[0], p[1] - 2.0);
  }
  const auto r = optimize_instance(f, m, identity_displacement(g), LossWeights{}, Similarity::mse);
  const double before = mse(f, m), after = mse(f, warp_image(m, r.field));
  CHECK(after <= 0.1 * before);
}

TEST_CASE("instance optimization never returns a worse iterate") {
  oracle::Rng rng(52);
  for (int t = 0; t < 10; ++t) {
    const GridGeometry g({12, 12});
    const auto f = gaussian_blur(oracle::random_image(g, rng), 1.0);
    const auto m = gaussian_blur(oracle::random_image(g, rng), 1.0);
    const auto u0 = oracle::random_field(g, rng, 1.0);
    // A huge step size makes individual iterates overshoot.
    const auto r = optimize_instance(f, m, u0, LossWeights{}, t % 2 ? Similarity::cc : Similarity::mse,
                                     InstanceConfig{.iterations = 20, .lr = 5.0});
    CHECK(r.best_loss() <= r.initial_loss());
    LossWeights w;
    CHECK(unsup_loss(f, m, r.field, w, t % 2 ? Similarity::cc : Similarity::mse).total == r.best_loss());
  }
}

TEST_CASE("instance optimization is deterministic") {
  oracle::Rng rng(53);
  const GridGeometry g({16, 16});
  const auto f = gaussian_blur(oracle::random_image(g, rng), 1.5);
  const auto m = gaussian_blur(oracle::random_image(g, rng), 1.5);
  const auto a = optimize_instance(f, m, identity_displacement(g), LossWeights{}, Similarity::cc);
  const auto b = optimize_instance(f, m, identity_displacement(g), LossWeights{}, Similarity::cc);
  CHECK(a.field == b.field);
}

TEST_CASE("training configuration checks") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.iterations = 10;
  c.checkpoint_every = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training overfits a single pair") {
  const auto data = synth_source(1, 32, 61);
  TrainConfig cfg;
  cfg.iterations = 500;
  cfg.seed = 1;
  const auto r = train(small_net(), data, nullptr, cfg);
  const auto& im = data.images(0);
  const double before = unsup_loss(im.fixed, im.moving, forward(init_params(small_net(), 1), im.fixed, im.moving),
                                   cfg.weights, cfg.sim)
                            .total;
  const double after = unsup_loss(im.fixed, im.moving, forward(r.final_params, im.fixed, im.moving), cfg.weights, cfg.sim).total;
  CHECK(after < 0.5 * before);
}

TEST_CASE("unsupervised training never reads segmentations") {
  const auto data = synth_source(3, 32, 62);
  TrainConfig cfg;
  cfg.iterations = 20;
  train(small_net(), data, nullptr, cfg);
  CHECK(data.label_reads() == 0);
  cfg.weights.gamma = AuxWeight::weight(0.01);
  train(small_net(), data, nullptr, cfg);
  CHECK(data.label_reads() == 20);
}

TEST_CASE("fixed seed gives a bit-identical trajectory") {
  const auto data = synth_source(4, 32, 63);
  const auto val = synth_source(2, 32, 163);
  TrainConfig cfg;
  cfg.iterations = 60;
  cfg.validation_every = 20;
  cfg.seed = 5;
  const auto a = train(small_net(), data, &val, cfg);
  const auto b = train(small_net(), data, &val, cfg);
  CHECK(a.final_params == b.final_params);
  CHECK(a.best_params == b.best_params);
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].loss.total == b.steps[i].loss.total);
  CHECK(a.validation.size() == 3);
  cfg.seed = 6;
  CHECK_FALSE(train(small_net(), data, &val, cfg).final_params == a.final_params);
}

TEST_CASE("best-on-validation parameters are the highest-scoring snapshot") {
  const auto data = synth_source(4, 32, 64);
  const auto val = synth_source(2, 32, 164);
  TrainConfig cfg;
  cfg.iterations = 40;
  cfg.validation_every = 10;
  const auto r = train(small_net(), data, &val, cfg);
  double best = -1.0;
  for (const auto& e : r.validation) best = std::max(best, e.mean_dice);
  CHECK(validation_dice(r.best_params, val) == best);
}

TEST_CASE("training loss trends downward") {
  // Moving average over 50 iterations, sampled every 10: no checkpoint may
  // exceed 1.5x the lowest earlier average (single-pair SGD is noisy), and
  // the final average must be below half the first.
  const auto data = synth_source(20, 32, 65);
  TrainConfig cfg;
  cfg.iterations = 1500;
  cfg.seed = 2;
  const auto r = train(small_net(), data, nullptr, cfg);
  std::vector<double> ma;
  for (std::size_t k = 50; k <= r.steps.size(); k += 10) {
    double s = 0.0;
    for (std::size_t i = k - 50; i < k; ++i) s += r.steps[i].loss.total;
    ma.push_back(s / 50.0);
  }
  double running_min = ma.front();
  for (double v : ma) {
    CHECK(v <= 1.5 * running_min);
    running_min = std::min(running_min, v);
  }
  CHECK(ma.back() < 0.5 * ma.front());
}
