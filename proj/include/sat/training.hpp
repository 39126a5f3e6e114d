#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "sat/model.hpp"
#include "sat/objective.hpp"
#include "sat/optim.hpp"
#include "sat/synthdata.hpp"

namespace sat {

struct EpochStats {
  LossBreakdown loss;              // mean over the epoch's optimizer steps
  std::vector<double> region_mae;  // train MAE per region, from the step's first forward pass
  std::size_t steps = 0;
  double last_lr = 0.0;
};

// Everything that must survive a checkpoint for a resumed run to match an
// uninterrupted one.
struct TrainState {
  int epoch = 0;  // completed epochs
  std::size_t global_step = 0;
  std::mt19937_64 rng;
};

std::size_t steps_per_epoch(std::size_t num_samples, const OptimConfig& cfg);

// [B, R, C, H, W] images and [B, R] labels for the given sample indices.
Tensor<float> stack_images(const std::vector<RegionSample>& samples, const std::vector<std::size_t>& indices);
LabelMatrix stack_labels(const std::vector<RegionSample>& samples, const std::vector<std::size_t>& indices);

// One pass over `data`: shuffle, batch, augment, SAM step per batch with the
// cosine rate for the current global step. Throws NumericalError on a
// non-finite loss.
EpochStats train_epoch(SatParams<float>& params, const SatConfig& model_cfg, MomentumSgd<float>& base,
                       const std::vector<RegionSample>& data, const OptimConfig& optim_cfg,
                       const LossWeights& weights, TrainState& state, bool use_augmentation = true);

struct Predictions {
  LabelMatrix scores;  // [N, R]
  std::vector<AttentionRecord> records;
};

// Inference over a dataset in fixed-size chunks; sample order is preserved.
Predictions predict_dataset(const SatParams<float>& params, const SatConfig& model_cfg,
                            const std::vector<RegionSample>& data, bool record_attention = false,
                            std::size_t chunk = 64);

}  // namespace sat
