#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "sat/model.hpp"
#include "sat/objective.hpp"
#include "sat/optim.hpp"
#include "sat/synthdata.hpp"

namespace sat {

// Everything a run depends on. The variant owns the token-replay and RAB
// flags; the model section cannot set them directly.
struct RunConfig {
  SatConfig model;
  OptimConfig optim;
  SynthConfig data;
  LossWeights loss;
  Variant variant = Variant::sat;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  void validate() const;
};

// Desk-scale defaults: R=5, d=32, L=2, 2 heads, 32x32 images, 2000 samples.
RunConfig default_run_config();

// Sections: model, optim, data, loss; top-level variant, seed, output_dir.
// Missing keys keep their defaults, unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// Synth config sections on their own (used by dataset manifests).
nlohmann::json to_json(const SynthConfig& cfg);

}  // namespace sat
