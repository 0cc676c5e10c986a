#include "voxreg/optimize.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>

#include "voxreg/errors.hpp"
#include "voxreg/eval.hpp"
#include "voxreg/tape.hpp"

namespace voxreg {

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: parameter, gradient and moment sizes differ");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericalError("adam_step: non-finite gradient at index " + std::to_string(i) + " (step " +
                           std::to_string(state.t + 1) + ")");
  const AdamConfig& c = state.config;
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

InstanceResult optimize_instance(const GridImage& fixed, const GridImage& moving, const DisplacementField& u_init,
                                 const LossWeights& weights, Similarity sim, const InstanceConfig& config) {
  if (config.iterations < 0) throw std::invalid_argument("optimize_instance: negative iteration count");
  require_same_geometry(fixed.geometry(), moving.geometry(), "optimize_instance images");
  require_same_geometry(fixed.geometry(), u_init.geometry(), "optimize_instance field");

  DisplacementField u = u_init;
  AdamState adam(u.data().size(), AdamConfig{.lr = config.lr});
  InstanceResult r;
  r.field = u;
  r.trace.reserve(static_cast<std::size_t>(config.iterations) + 1);
  for (int it = 0;; ++it) {
    LossWithGrad lg = unsup_loss_grad(fixed, moving, u, weights, sim);
    if (!std::isfinite(lg.loss.total))
      throw NumericalError("optimize_instance: non-finite loss at iteration " + std::to_string(it));
    r.trace.push_back(lg.loss);
    if (lg.loss.total < r.trace[r.best_index].total) {
      r.best_index = r.trace.size() - 1;
      r.field = u;
    }
    if (it == config.iterations) break;
    adam_step(adam, u.data(), lg.grad.data());
  }
  return r;
}

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
  if (validation_every < 0 || log_every < 0 || checkpoint_every < 0)
    throw std::invalid_argument("TrainConfig: cadences must be non-negative");
  if (checkpoint_every > 0 && checkpoint_path.empty())
    throw std::invalid_argument("TrainConfig: checkpoint cadence without a checkpoint path");
  if (!(adam.lr > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
  weights.validate();
}

std::vector<double> flatten_params(const NetParams& params) {
  std::vector<double> flat;
  flat.reserve(params.parameter_count());
  for (const auto& l : params.layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void unflatten_params(std::span<const double> flat, NetParams& params) {
  if (flat.size() != params.parameter_count()) throw std::invalid_argument("unflatten_params: size mismatch");
  std::size_t k = 0;
  for (auto& l : params.layers) {
    for (double& w : l.weights) w = flat[k++];
    for (double& b : l.bias) b = flat[k++];
  }
}

NetLossGrad net_loss_grad(const NetParams& params, const GridImage& fixed, const GridImage& moving,
                          const SegmentationMap* fixed_seg, const SegmentationMap* moving_seg,
                          const LossWeights& weights, Similarity sim) {
  weights.validate();
  const bool use_seg = weights.gamma.active();
  if (use_seg && (!fixed_seg || !moving_seg))
    throw std::invalid_argument("net_loss_grad: segmentation term active but segmentations missing");
  const double vox = 1.0 / static_cast<double>(fixed.geometry().voxel_count());

  Tape tape;
  const auto vars = record_parameters(tape, params);
  const auto f = tape.input(image_tensor(fixed));
  const auto m = tape.input(image_tensor(moving));
  const auto u = record_network(tape, params, vars, f, m);

  NetLossGrad out;
  std::optional<Tape::Var> total;
  if (!weights.gamma.is_seg_only()) {
    const auto warped = tape.warp(m, u);
    const auto s = sim == Similarity::mse ? tape.mse(f, warped)
                                          : tape.scale(tape.local_cc(f, warped, weights.cc_window), -vox);
    const auto r = tape.scale(tape.smoothness(u), weights.lambda * vox);
    total = tape.add(s, r);
    out.loss.similarity = tape.value(s).data[0];
    out.loss.smoothness = tape.value(r).data[0];
  }
  if (use_seg) {
    const auto sf = tape.input(seg_tensor(*fixed_seg));
    const auto sm = tape.input(seg_tensor(*moving_seg));
    const auto raw = tape.seg_loss(sf, tape.warp(sm, u));
    const auto term = weights.gamma.is_seg_only() ? raw : tape.scale(raw, weights.gamma.value());
    out.loss.segmentation = tape.value(term).data[0];
    total = total ? tape.add(*total, term) : term;
  }
  out.loss.total = tape.value(*total).data[0];
  if (!std::isfinite(out.loss.total)) throw NumericalError("net_loss_grad: non-finite loss");
  tape.backward(*total);

  out.grad.reserve(params.parameter_count());
  for (const auto& v : vars) {
    const auto& g = tape.grad(v).data;
    out.grad.insert(out.grad.end(), g.begin(), g.end());
  }
  return out;
}

double validation_dice(const NetParams& params, const PairSource& pairs) {
  if (pairs.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const ImagePair& im = pairs.images(i);
    const LabelPair& lb = pairs.labels(i);
    const DisplacementField u = forward(params, im.fixed, im.moving);
    acc += dice_eval(lb.fixed, lb.moving, u, pairs.num_labels()).mean;
  }
  return acc / static_cast<double>(pairs.size());
}

namespace {

std::vector<std::vector<int>> default_groups(int num_labels) {
  std::vector<std::vector<int>> g;
  for (int k = 1; k < num_labels; ++k) g.push_back({k});
  return g;
}

std::string fmt_step(const TrainStep& s, double seconds) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "iter=%d total=%.9g sim=%.9g smooth=%.9g seg=%.9g seconds=%.3f", s.iteration,
                s.loss.total, s.loss.similarity, s.loss.smoothness, s.loss.segmentation, seconds);
  return buf;
}

}  // namespace

TrainResult train(const NetConfig& net, const PairSource& data, const PairSource* validation,
                  const TrainConfig& config, std::ostream* log) {
  config.validate();
  net.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  const GridGeometry& geom = data.images(0).fixed.geometry();
  net.check_extents(geom);
  if (geom.rank() != net.spatial_dims) throw GeometryError("train: dataset rank differs from the network rank");

  const bool use_seg = config.weights.gamma.active();
  const auto groups = config.seg_groups.empty() ? default_groups(data.num_labels()) : config.seg_groups;

  TrainResult result;
  result.final_params = init_params(net, config.seed);
  std::vector<double> flat = flatten_params(result.final_params);
  AdamState adam(flat.size(), config.adam);
  std::mt19937_64 sampler(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  double best_dice = -1.0;
  result.best_params = result.final_params;
  auto run_validation = [&](int it) {
    const double d = validation_dice(result.final_params, *validation);
    result.validation.push_back({it, d});
    if (log) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "val iter=%d dice=%.9g", it, d);
      *log << buf << '\n';
    }
    if (d > best_dice) {
      best_dice = d;
      result.best_params = result.final_params;
      result.best_iteration = it;
    }
  };

  result.steps.reserve(static_cast<std::size_t>(config.iterations));
  for (int it = 1; it <= config.iterations; ++it) {
    const std::size_t idx = pick(sampler);
    const ImagePair& im = data.images(idx);
    require_same_geometry(geom, im.fixed.geometry(), "train fixed image");
    require_same_geometry(geom, im.moving.geometry(), "train moving image");

    NetLossGrad lg;
    if (use_seg) {
      const LabelPair& lb = data.labels(idx);
      const SegmentationMap sf = structure_channels(lb.fixed, groups);
      const SegmentationMap sm = structure_channels(lb.moving, groups);
      lg = net_loss_grad(result.final_params, im.fixed, im.moving, &sf, &sm, config.weights, config.sim);
    } else {
      lg = net_loss_grad(result.final_params, im.fixed, im.moving, nullptr, nullptr, config.weights, config.sim);
    }
    try {
      adam_step(adam, flat, lg.grad);
    } catch (const NumericalError& e) {
      throw NumericalError("train: iteration " + std::to_string(it) + ": " + e.what());
    }
    unflatten_params(flat, result.final_params);

    const TrainStep step{it, lg.loss};
    result.steps.push_back(step);
    if (log && config.log_every > 0 && (it % config.log_every == 0 || it == 1))
      *log << fmt_step(step, elapsed()) << '\n';
    if (validation && config.validation_every > 0 && it % config.validation_every == 0) run_validation(it);
    if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0)
      write_params(config.checkpoint_path, result.final_params);
  }
  if (validation && config.validation_every > 0 && config.iterations % config.validation_every != 0)
    run_validation(config.iterations);
  if (!validation || config.validation_every == 0) {
    result.best_params = result.final_params;
    result.best_iteration = config.iterations;
  }
  return result;
}

}  // namespace voxreg
