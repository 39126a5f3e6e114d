#include "sat/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sat {

std::size_t steps_per_epoch(std::size_t num_samples, const OptimConfig& cfg) {
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  return (num_samples + batch - 1) / batch;
}

Tensor<float> stack_images(const std::vector<RegionSample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("stack_images: empty batch");
  const Shape& one = samples[indices[0]].images.shape();
  std::vector<float> values;
  values.reserve(indices.size() * numel(one));
  for (std::size_t i : indices) {
    const auto& img = samples[i].images;
    if (img.shape() != one) throw DimensionError("stack_images: samples have different shapes");
    values.insert(values.end(), img.data().begin(), img.data().end());
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), one.begin(), one.end());
  return Tensor<float>(std::move(shape), std::move(values));
}

LabelMatrix stack_labels(const std::vector<RegionSample>& samples, const std::vector<std::size_t>& indices) {
  const std::size_t regions = samples[indices.at(0)].labels.size();
  LabelMatrix m(indices.size(), regions);
  for (std::size_t b = 0; b < indices.size(); ++b)
    for (std::size_t r = 0; r < regions; ++r) m.at(b, r) = samples[indices[b]].labels[r];
  return m;
}

EpochStats train_epoch(SatParams<float>& params, const SatConfig& model_cfg, MomentumSgd<float>& base,
                       const std::vector<RegionSample>& data, const OptimConfig& optim_cfg,
                       const LossWeights& weights, TrainState& state, bool use_augmentation) {
  if (data.empty()) throw DataError("train_epoch: empty dataset");
  const std::size_t regions = model_cfg.regions();
  const std::size_t per_epoch = steps_per_epoch(data.size(), optim_cfg);
  const std::size_t total_steps = per_epoch * static_cast<std::size_t>(optim_cfg.epochs);
  const auto batch_size = static_cast<std::size_t>(optim_cfg.batch_size);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.rng);

  std::vector<Tensor<float>> tensors = params.tensors();
  EpochStats stats;
  stats.region_mae.assign(regions, 0.0);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<RegionSample> batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(use_augmentation ? augment(data[order[i]], state.rng) : data[order[i]]);
    }
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    const Tensor<float> images = stack_images(batch, idx);
    const LabelMatrix labels = stack_labels(batch, idx);

    ForwardOptions opts;
    if (model_cfg.dropout > 0.0) opts.dropout_rng = &state.rng;
    LabelMatrix first_scores;
    auto closure = [&]() -> LossBreakdown {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      ForwardResult<float> out = forward(images, params, model_cfg, opts);
      LossTerms<float> terms = total_loss(out.logits, labels, weights);
      if (!std::isfinite(terms.total.item())) {
        throw NumericalError("non-finite loss at step " + std::to_string(state.global_step));
      }
      tape.backward(terms.total);
      if (first_scores.rows == 0) first_scores = predict_scores(out.logits);
      return terms.breakdown();
    };

    const double lr = cosine_lr(std::min(state.global_step, total_steps), total_steps, optim_cfg);
    const LossBreakdown loss = sam_step(tensors, closure, lr, optim_cfg, base);
    stats.loss.ce += loss.ce;
    stats.loss.mean += loss.mean;
    stats.loss.variance += loss.variance;
    stats.loss.total += loss.total;
    for (std::size_t b = 0; b < labels.rows; ++b)
      for (std::size_t r = 0; r < regions; ++r)
        stats.region_mae[r] += std::abs(first_scores.at(b, r) - labels.at(b, r));
    stats.last_lr = lr;
    ++stats.steps;
    ++state.global_step;
  }
  const auto steps = static_cast<double>(stats.steps);
  stats.loss.ce /= steps;
  stats.loss.mean /= steps;
  stats.loss.variance /= steps;
  stats.loss.total /= steps;
  for (auto& m : stats.region_mae) m /= static_cast<double>(data.size());
  (void)per_epoch;
  return stats;
}

Predictions predict_dataset(const SatParams<float>& params, const SatConfig& model_cfg,
                            const std::vector<RegionSample>& data, bool record_attention, std::size_t chunk) {
  if (data.empty()) throw DataError("predict_dataset: empty dataset");
  NoGradScope<float> no_grad;
  Predictions out;
  out.scores = LabelMatrix(data.size(), model_cfg.regions());
  ForwardOptions opts;
  opts.record_attention = record_attention;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    ForwardResult<float> res = forward(stack_images(data, idx), params, model_cfg, opts);
    const LabelMatrix scores = predict_scores(res.logits);
    for (std::size_t b = 0; b < scores.rows; ++b)
      for (std::size_t r = 0; r < scores.cols; ++r) out.scores.at(start + b, r) = scores.at(b, r);
    for (auto& rec : res.records) {
      rec.sample += start;
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace sat
