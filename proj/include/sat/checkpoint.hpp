#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sat/config.hpp"
#include "sat/model.hpp"
#include "sat/objective.hpp"

namespace sat {

// One line of metrics.csv.
struct MetricsRow {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  LossBreakdown loss;
  std::vector<double> train_mae;               // per region
  std::optional<std::vector<double>> val_mae;  // per region, when a validation set is used
  std::optional<double> val_sum_mae;
};

struct Checkpoint {
  RunConfig config;
  int epoch = 0;  // completed epochs
  std::size_t global_step = 0;
  std::string rng_state;  // textual engine state
  SatParams<float> params;
  std::vector<std::vector<float>> momentum;  // parallel to params.tensors(), or empty before the first step
  std::vector<MetricsRow> history;
  std::optional<double> best_metric;
  int best_epoch = 0;
};

inline constexpr std::array<char, 8> kCheckpointMagic = {'S', 'A', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, u32 version, u64 header length, JSON header (config,
// counters, rng state, metrics history and a tensor table of name, kind,
// shape, offset, count), then little-endian f32 payloads in table order.
// The file is written to a temporary name and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sat
