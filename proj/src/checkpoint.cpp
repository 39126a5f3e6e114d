#include "sat/checkpoint.hpp"

#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "sat/binary_io.hpp"
#include "sat/errors.hpp"

namespace sat {

using nlohmann::json;

namespace {

json row_to_json(const MetricsRow& r) {
  json j = {{"epoch", r.epoch},
            {"lr", r.lr},
            {"ce", r.loss.ce},
            {"mean", r.loss.mean},
            {"variance", r.loss.variance},
            {"total", r.loss.total},
            {"train_mae", r.train_mae}};
  j["val_mae"] = r.val_mae ? json(*r.val_mae) : json(nullptr);
  j["val_sum_mae"] = r.val_sum_mae ? json(*r.val_sum_mae) : json(nullptr);
  return j;
}

MetricsRow row_from_json(const json& j) {
  MetricsRow r;
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<double>();
  r.loss.ce = j.at("ce").get<double>();
  r.loss.mean = j.at("mean").get<double>();
  r.loss.variance = j.at("variance").get<double>();
  r.loss.total = j.at("total").get<double>();
  r.train_mae = j.at("train_mae").get<std::vector<double>>();
  if (!j.at("val_mae").is_null()) r.val_mae = j.at("val_mae").get<std::vector<double>>();
  if (!j.at("val_sum_mae").is_null()) r.val_sum_mae = j.at("val_sum_mae").get<double>();
  return r;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto named = ckpt.params.named();
  if (!ckpt.momentum.empty() && ckpt.momentum.size() != named.size()) {
    throw ContractError("checkpoint: momentum buffers do not match the parameter list");
  }
  json table = json::array();
  std::size_t offset = 0;
  auto add_entry = [&](const std::string& name, const char* kind, const Shape& shape) {
    const std::size_t count = numel(shape);
    table.push_back({{"name", name}, {"kind", kind}, {"shape", shape}, {"offset", offset}, {"count", count}});
    offset += count;
  };
  for (const auto& nt : named) add_entry(nt.name, "param", nt.tensor.shape());
  for (std::size_t i = 0; i < ckpt.momentum.size(); ++i) {
    if (ckpt.momentum[i].size() != named[i].tensor.size()) {
      throw ContractError("checkpoint: momentum buffer size differs for " + named[i].name);
    }
    add_entry(named[i].name, "momentum", named[i].tensor.shape());
  }

  json header;
  header["config"] = to_json(ckpt.config);
  // Where a run writes its files is not part of its state; leaving it out
  // keeps checkpoints of identical runs byte-identical.
  header["config"].erase("output_dir");
  header["epoch"] = ckpt.epoch;
  header["global_step"] = ckpt.global_step;
  header["rng_state"] = ckpt.rng_state;
  header["best_metric"] = ckpt.best_metric ? json(*ckpt.best_metric) : json(nullptr);
  header["best_epoch"] = ckpt.best_epoch;
  json history = json::array();
  for (const auto& row : ckpt.history) history.push_back(row_to_json(row));
  header["history"] = history;
  header["tensors"] = table;
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    io::write_u32(os, kCheckpointVersion);
    io::write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& nt : named) io::write_f32(os, nt.tensor.data());
    for (const auto& buf : ckpt.momentum) io::write_f32(os, buf);
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Checkpoint ckpt;
  try {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw IoError("not a checkpoint file");
    const std::uint32_t version = io::read_u32(is);
    if (version != kCheckpointVersion) {
      throw IoError("checkpoint version " + std::to_string(version) + " is not supported");
    }
    const std::uint64_t length = io::read_u64(is);
    if (length > (std::uint64_t{1} << 30)) throw IoError("implausible header length");
    std::string text(length, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(length))) throw IoError("truncated header");
    const json header = json::parse(text);

    ckpt.config = run_config_from_json(header.at("config"));
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.global_step = header.at("global_step").get<std::size_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    if (!header.at("best_metric").is_null()) ckpt.best_metric = header.at("best_metric").get<double>();
    ckpt.best_epoch = header.at("best_epoch").get<int>();
    for (const auto& row : header.at("history")) ckpt.history.push_back(row_from_json(row));

    // The parameter skeleton comes from the config; values come from the file.
    ckpt.params = init_params<float>(ckpt.config.model, 0);
    auto named = ckpt.params.named();
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < named.size(); ++i) index[named[i].name] = i;

    std::vector<bool> seen(named.size(), false);
    std::vector<std::vector<float>> momentum;
    std::size_t expected_offset = 0;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto kind = entry.at("kind").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      auto it = index.find(name);
      if (it == index.end()) throw IoError("unexpected tensor '" + name + "'");
      Tensor<float>& target = named[it->second].tensor;
      if (shape != target.shape() || count != numel(shape)) {
        throw IoError("tensor '" + name + "' has shape " + to_string(shape) + ", model expects " +
                      to_string(target.shape()));
      }
      if (offset != expected_offset) throw IoError("tensor table offsets are not contiguous at '" + name + "'");
      expected_offset += count;
      std::vector<float> values = io::read_f32(is, count);
      if (kind == "param") {
        if (seen[it->second]) throw IoError("duplicate tensor '" + name + "'");
        seen[it->second] = true;
        std::copy(values.begin(), values.end(), target.data().begin());
      } else if (kind == "momentum") {
        if (momentum.size() != it->second) throw IoError("momentum buffers out of order at '" + name + "'");
        momentum.push_back(std::move(values));
      } else {
        throw IoError("unknown tensor kind '" + kind + "'");
      }
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      if (!seen[i]) throw IoError("missing tensor '" + named[i].name + "'");
    }
    if (!momentum.empty() && momentum.size() != named.size()) throw IoError("incomplete momentum buffers");
    ckpt.momentum = std::move(momentum);
    if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes");
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": corrupt checkpoint header: " + e.what());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace sat
