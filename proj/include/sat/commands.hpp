#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sat/checkpoint.hpp"
#include "sat/config.hpp"
#include "sat/logging.hpp"
#include "sat/scoring.hpp"
#include "sat/synthdata.hpp"

namespace sat {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitNumerical = 3 };

// Throws ConfigError when the dataset's regions, classes or image size do not
// fit the model.
void check_compatible(const SatConfig& model, const SynthConfig& data);

struct TrainRunOptions {
  std::filesystem::path out_dir;
  const Dataset* val = nullptr;
  std::optional<Checkpoint> resume;
  std::optional<int> halt_after;  // stop after this many completed epochs
  bool write_artifacts = true;
  std::shared_ptr<spdlog::logger> logger;  // defaults to spdlog's default logger
};

struct TrainRunResult {
  Checkpoint final_state;
  bool halted = false;
};

// Full training loop with metrics.csv, ckpt_final.bin (refreshed every
// epoch) and ckpt_best.bin under out_dir. A resumed run continues from the
// checkpoint's parameters, momentum buffers, counters and rng state.
TrainRunResult train_run(const RunConfig& cfg, const Dataset& train, const TrainRunOptions& opts);

std::string metrics_csv(const std::vector<MetricsRow>& history, std::size_t regions);

EvalReport evaluate(const SatParams<float>& params, const RunConfig& cfg, const Dataset& data,
                    const std::vector<double>& thetas, const AgeMap& age_map);

struct CompareResult {
  WilcoxonResult test;
  std::vector<double> region_mae_delta;  // a - b, canonical region order
  std::optional<double> sum_mae_delta;
  std::optional<double> baa_mae_delta;
};

CompareResult compare_reports(const EvalReport& a, const EvalReport& b);

// Command entry points. Each returns a process exit code and reports errors
// through the logger rather than throwing.
struct GenOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_samples;
};
int cmd_gen(const GenOptions& opts, std::ostream& out);

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::optional<std::filesystem::path> val;
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<int> halt_after;
};
int cmd_train(const TrainOptions& opts, std::ostream& out);

struct EvalOptions {
  std::filesystem::path ckpt;
  std::filesystem::path data;
  std::optional<std::filesystem::path> out;
  std::vector<double> thetas{1.0};
  std::optional<std::filesystem::path> agemap;
};
int cmd_eval(const EvalOptions& opts, std::ostream& out);

struct CompareOptions {
  std::filesystem::path report_a;
  std::filesystem::path report_b;
};
int cmd_compare(const CompareOptions& opts, std::ostream& out);

struct InspectOptions {
  std::filesystem::path ckpt;
  std::filesystem::path data;
  std::optional<std::filesystem::path> out;
  long long sample = 0;
};
int cmd_inspect(const InspectOptions& opts, std::ostream& out);

}  // namespace sat
