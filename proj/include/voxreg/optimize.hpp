#pragma once

// Two optimization regimes: per-pair refinement of a displacement field, and
// amortized training of network parameters over a pair collection.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "voxreg/dataset.hpp"
#include "voxreg/grid.hpp"
#include "voxreg/losses.hpp"
#include "voxreg/net.hpp"

namespace voxreg {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<double> m;  ///< first moment
  std::vector<double> v;  ///< second moment

  AdamState() = default;
  AdamState(std::size_t size, AdamConfig cfg) : config(cfg), m(size, 0.0), v(size, 0.0) {}
};

/// Bias-corrected ADAM update, in place. Throws std::invalid_argument on a
/// size mismatch and NumericalError (naming the first offending index) on a
/// non-finite gradient; nothing is modified in either case.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

struct InstanceConfig {
  int iterations = 100;
  /// ADAM step size; the field is in voxels, so this is roughly the largest
  /// per-iteration move of a displacement component.
  double lr = 0.1;
};

struct InstanceResult {
  DisplacementField field;  ///< best-seen iterate
  /// Loss at every visited iterate: trace[0] is u_init, trace[k] follows k steps.
  std::vector<LossBreakdown> trace;
  std::size_t best_index = 0;
  double initial_loss() const { return trace.front().total; }
  double best_loss() const { return trace[best_index].total; }
};

/// ADAM on u itself, minimizing unsup_loss. Returns the iterate with the
/// lowest loss, so the result never scores worse than u_init.
InstanceResult optimize_instance(const GridImage& fixed, const GridImage& moving, const DisplacementField& u_init,
                                 const LossWeights& weights, Similarity sim, const InstanceConfig& config = {});

struct TrainConfig {
  int iterations = 5000;
  LossWeights weights;
  Similarity sim = Similarity::mse;
  /// Segmentation channels used by the auxiliary term; each group of labels
  /// forms one channel. Empty means one channel per structure 1..K-1.
  std::vector<std::vector<int>> seg_groups;
  /// Desk-scale default; 1e-4 at the full 150k-iteration schedule.
  AdamConfig adam{.lr = 1e-3};
  std::uint64_t seed = 0;
  /// Validation Dice every this many iterations (and at the end); 0 disables.
  int validation_every = 0;
  /// Loss line every this many iterations; 0 disables.
  int log_every = 100;
  /// Checkpoint of the current parameters every this many iterations.
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;

  void validate() const;
};

struct TrainStep {
  int iteration = 0;
  LossBreakdown loss;
};

struct ValidationEntry {
  int iteration = 0;
  double mean_dice = 0.0;
};

struct TrainResult {
  NetParams final_params;
  /// Highest mean validation Dice; equals final_params without validation.
  NetParams best_params;
  int best_iteration = 0;
  std::vector<TrainStep> steps;  ///< one per iteration
  std::vector<ValidationEntry> validation;
};

/// Mean over pairs of the mean hard Dice of forward(params) registrations.
double validation_dice(const NetParams& params, const PairSource& pairs);

/// Single-pair stochastic training with pairs drawn uniformly at random.
/// Segmentations are read only when the auxiliary term is active. Log lines
/// (when `log` is given) are "iter=<i> total=.. sim=.. smooth=.. seg=..
/// seconds=.." and "val iter=<i> dice=..".
TrainResult train(const NetConfig& net, const PairSource& data, const PairSource* validation,
                  const TrainConfig& config, std::ostream* log = nullptr);

/// Loss and gradient of one training example; exposed for gradient checks.
struct NetLossGrad {
  LossBreakdown loss;
  std::vector<double> grad;  ///< flattened in layer order, weights then bias
};
NetLossGrad net_loss_grad(const NetParams& params, const GridImage& fixed, const GridImage& moving,
                          const SegmentationMap* fixed_seg, const SegmentationMap* moving_seg,
                          const LossWeights& weights, Similarity sim);

std::vector<double> flatten_params(const NetParams& params);
void unflatten_params(std::span<const double> flat, NetParams& params);

}  // namespace voxreg
