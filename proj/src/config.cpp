#include "sat/config.hpp"

#include <fstream>
#include <set>

#include "sat/errors.hpp"

namespace sat {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + section);
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for " + section + "." + key);
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  optim.validate();
  data.validate();
  loss.validate();
  if (data.class_counts != model.class_counts) throw ConfigError("config: data.class_counts differs from model");
  if (data.image_size != model.image_size) throw ConfigError("config: data.image_size differs from model");
  if (model.in_channels != 1) throw ConfigError("config: synthetic data is single-channel");
  SatConfig expected = model;
  expected.apply_variant(variant);
  if (expected.token_replay != model.token_replay || expected.rab != model.rab) {
    throw ConfigError("config: model flags disagree with variant " + to_string(variant));
  }
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.model.apply_variant(cfg.variant);
  return cfg;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg = default_run_config();
  reject_unknown(j, "config", {"model", "optim", "data", "loss", "variant", "seed", "output_dir"});
  std::string variant = to_string(cfg.variant);
  read(j, "variant", variant, "config");
  cfg.variant = parse_variant(variant);
  read(j, "seed", cfg.seed, "config");
  read(j, "output_dir", cfg.output_dir, "config");

  bool data_counts = false, data_size = false;
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, "model",
                   {"num_regions", "embed_dim", "depth", "num_heads", "class_counts", "mlp_ratio", "dropout",
                    "layernorm_eps", "shared_embedder", "in_channels", "image_size", "channel_widths"});
    read(m, "num_regions", cfg.model.num_regions, "model");
    read(m, "embed_dim", cfg.model.embed_dim, "model");
    read(m, "depth", cfg.model.depth, "model");
    read(m, "num_heads", cfg.model.num_heads, "model");
    read(m, "class_counts", cfg.model.class_counts, "model");
    read(m, "mlp_ratio", cfg.model.mlp_ratio, "model");
    read(m, "dropout", cfg.model.dropout, "model");
    read(m, "layernorm_eps", cfg.model.layernorm_eps, "model");
    read(m, "shared_embedder", cfg.model.shared_embedder, "model");
    read(m, "in_channels", cfg.model.in_channels, "model");
    read(m, "image_size", cfg.model.image_size, "model");
    read(m, "channel_widths", cfg.model.channel_widths, "model");
  }
  if (j.contains("optim")) {
    const json& o = j.at("optim");
    reject_unknown(o, "optim", {"base_lr", "rho", "epochs", "batch_size", "momentum", "min_lr", "augment"});
    read(o, "base_lr", cfg.optim.base_lr, "optim");
    read(o, "rho", cfg.optim.rho, "optim");
    read(o, "epochs", cfg.optim.epochs, "optim");
    read(o, "batch_size", cfg.optim.batch_size, "optim");
    read(o, "momentum", cfg.optim.momentum, "optim");
    read(o, "min_lr", cfg.optim.min_lr, "optim");
    read(o, "augment", cfg.optim.augment, "optim");
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, "data",
                   {"num_samples", "image_size", "class_counts", "label_noise_sigma", "pixel_noise_sigma", "seed"});
    read(d, "num_samples", cfg.data.num_samples, "data");
    data_size = d.contains("image_size");
    read(d, "image_size", cfg.data.image_size, "data");
    data_counts = d.contains("class_counts");
    read(d, "class_counts", cfg.data.class_counts, "data");
    read(d, "label_noise_sigma", cfg.data.label_noise_sigma, "data");
    read(d, "pixel_noise_sigma", cfg.data.pixel_noise_sigma, "data");
    read(d, "seed", cfg.data.seed, "data");
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, "loss", {"lambda_mu", "lambda_var"});
    read(l, "lambda_mu", cfg.loss.lambda_mu, "loss");
    read(l, "lambda_var", cfg.loss.lambda_var, "loss");
  }
  // The data section follows the model's geometry unless it says otherwise.
  if (!data_counts) cfg.data.class_counts = cfg.model.class_counts;
  if (!data_size) cfg.data.image_size = cfg.model.image_size;
  cfg.model.apply_variant(cfg.variant);
  cfg.validate();
  return cfg;
}

json to_json(const SynthConfig& d) {
  return {{"num_samples", d.num_samples},
          {"image_size", d.image_size},
          {"class_counts", d.class_counts},
          {"label_noise_sigma", d.label_noise_sigma},
          {"pixel_noise_sigma", d.pixel_noise_sigma},
          {"seed", d.seed}};
}

json to_json(const RunConfig& cfg) {
  const SatConfig& m = cfg.model;
  const OptimConfig& o = cfg.optim;
  json j;
  j["variant"] = to_string(cfg.variant);
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["model"] = {{"num_regions", m.num_regions},     {"embed_dim", m.embed_dim},
                {"depth", m.depth},                 {"num_heads", m.num_heads},
                {"class_counts", m.class_counts},   {"mlp_ratio", m.mlp_ratio},
                {"dropout", m.dropout},             {"layernorm_eps", m.layernorm_eps},
                {"shared_embedder", m.shared_embedder}, {"in_channels", m.in_channels},
                {"image_size", m.image_size},       {"channel_widths", m.channel_widths}};
  j["optim"] = {{"base_lr", o.base_lr},     {"rho", o.rho},           {"epochs", o.epochs},
                {"batch_size", o.batch_size}, {"momentum", o.momentum}, {"min_lr", o.min_lr},
                {"augment", o.augment}};
  j["data"] = to_json(cfg.data);
  j["loss"] = {{"lambda_mu", cfg.loss.lambda_mu}, {"lambda_var", cfg.loss.lambda_var}};
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace sat
