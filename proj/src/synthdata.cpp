#include "sat/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "sat/binary_io.hpp"

namespace sat {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (num_samples < 1) throw ConfigError("data: num_samples must be positive");
  if (image_size < 8) throw ConfigError("data: image_size must be at least 8");
  if (class_counts.empty()) throw ConfigError("data: class_counts must not be empty");
  for (int k : class_counts) {
    if (k < 2) throw ConfigError("data: every region needs at least 2 classes");
  }
  if (label_noise_sigma < 0.0 || pixel_noise_sigma < 0.0) throw ConfigError("data: noise sigmas must be >= 0");
}

int ordinal_label(double t, double eta, int classes) {
  const double raw = std::round(1.0 + (classes - 1) * (t + eta));
  return static_cast<int>(std::clamp(raw, 1.0, static_cast<double>(classes)));
}

namespace {

// Supersampling grid per pixel edge for anti-aliased coverage.
constexpr int kSubsamples = 4;

bool inside_glyph(std::size_t region, double u, double v, double half) {
  const double au = std::abs(u), av = std::abs(v);
  switch (region % 5) {
    case 0: return u * u + v * v <= half * half;  // disk
    case 1: return au <= 0.85 * half && av <= 0.85 * half;  // square
    case 2: {  // ring
      const double r = std::sqrt(u * u + v * v);
      return r <= half && r >= 0.55 * half;
    }
    case 3: return (au <= half && av <= 0.3 * half) || (av <= half && au <= 0.3 * half);  // cross
    default: return au + av <= half;  // diamond
  }
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index) {
  const auto idx = static_cast<std::uint64_t>(index);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(idx), static_cast<std::uint32_t>(idx >> 32)};
  return std::mt19937_64(seq);
}

std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06zu.bin", index);
  return buf;
}

}  // namespace

std::vector<float> render_glyph(std::size_t region, int label, int classes, int image_size) {
  const double frac = static_cast<double>(label - 1) / static_cast<double>(classes - 1);
  const double size = static_cast<double>(image_size);
  // at most a quarter of the side, so the glyph spans at most half the frame
  const double half = size * (0.10 + 0.14 * frac);
  const double intensity = 0.35 + 0.65 * frac;
  const double centre = size / 2.0;
  std::vector<float> pixels(static_cast<std::size_t>(image_size * image_size), 0.0f);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSubsamples; ++sy)
        for (int sx = 0; sx < kSubsamples; ++sx) {
          const double u = x + (sx + 0.5) / kSubsamples - centre;
          const double v = y + (sy + 0.5) / kSubsamples - centre;
          if (inside_glyph(region, u, v, half)) ++hits;
        }
      pixels[static_cast<std::size_t>(y * image_size + x)] =
          static_cast<float>(intensity * hits / (kSubsamples * kSubsamples));
    }
  }
  return pixels;
}

RegionSample generate_sample(const SynthConfig& cfg, std::size_t index) {
  std::mt19937_64 rng = sample_rng(cfg.seed, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> label_noise(0.0, 1.0);
  std::normal_distribution<double> pixel_noise(0.0, 1.0);
  const std::size_t regions = cfg.regions();
  const auto side = static_cast<std::size_t>(cfg.image_size);

  RegionSample s;
  s.latent_t = unit(rng);
  for (std::size_t r = 0; r < regions; ++r) {
    const double eta = cfg.label_noise_sigma * label_noise(rng);
    s.labels.push_back(ordinal_label(s.latent_t, eta, cfg.class_counts[r]));
  }
  std::vector<float> pixels;
  pixels.reserve(regions * side * side);
  for (std::size_t r = 0; r < regions; ++r) {
    std::vector<float> glyph = render_glyph(r, s.labels[r], cfg.class_counts[r], cfg.image_size);
    if (cfg.pixel_noise_sigma > 0.0) {
      for (auto& p : glyph) p += static_cast<float>(cfg.pixel_noise_sigma * pixel_noise(rng));
    }
    pixels.insert(pixels.end(), glyph.begin(), glyph.end());
  }
  s.images = Tensor<float>({regions, 1, side, side}, std::move(pixels));
  return s;
}

std::vector<RegionSample> generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<RegionSample> out;
  out.reserve(static_cast<std::size_t>(cfg.num_samples));
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.num_samples); ++i) out.push_back(generate_sample(cfg, i));
  return out;
}

LabelMatrix label_table(const std::vector<RegionSample>& samples) {
  if (samples.empty()) return {};
  LabelMatrix m(samples.size(), samples[0].labels.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t r = 0; r < m.cols; ++r) m.at(i, r) = samples[i].labels[r];
  return m;
}

std::vector<std::vector<double>> label_correlation(const LabelMatrix& labels) {
  if (labels.rows == 0) throw DataError("label_correlation: no samples");
  const std::size_t n = labels.rows, m = labels.cols;
  std::vector<double> mean(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c) mean[c] += labels.at(i, c);
  for (auto& v : mean) v /= static_cast<double>(n);
  std::vector<std::vector<double>> cov(m, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < m; ++a) {
      const double da = labels.at(i, a) - mean[a];
      for (std::size_t b = 0; b < m; ++b) cov[a][b] += da * (labels.at(i, b) - mean[b]);
    }
  }
  std::vector<std::vector<double>> corr(m, std::vector<double>(m, 0.0));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      const double denom = std::sqrt(cov[a][a] * cov[b][b]);
      if (a == b) corr[a][b] = 1.0;
      else corr[a][b] = denom > 0.0 ? cov[a][b] / denom : 0.0;
    }
  }
  return corr;
}

AugmentParams draw_augment(std::mt19937_64& rng, int image_size) {
  const int max_shift = image_size / 12;
  std::uniform_real_distribution<double> angle(-15.0, 15.0);
  std::uniform_int_distribution<int> shift(-max_shift, max_shift);
  std::bernoulli_distribution flip(0.5);
  AugmentParams p;
  p.angle_deg = angle(rng);
  p.shift_x = shift(rng);
  p.shift_y = shift(rng);
  p.flip = flip(rng);
  return p;
}

std::vector<float> apply_augment(std::span<const float> image, int image_size, const AugmentParams& params) {
  const int n = image_size;
  if (image.size() != static_cast<std::size_t>(n * n)) throw DimensionError("apply_augment: image size mismatch");
  auto at = [&](const std::vector<float>& img, int y, int x) -> float {
    return (x < 0 || y < 0 || x >= n || y >= n) ? 0.0f : img[static_cast<std::size_t>(y * n + x)];
  };
  std::vector<float> current(image.begin(), image.end());

  if (params.angle_deg != 0.0) {
    const double theta = params.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double centre = (n - 1) / 2.0;
    std::vector<float> rotated(current.size(), 0.0f);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        // inverse map: output pixel -> source position
        const double dx = x - centre, dy = y - centre;
        const double sx = c * dx + s * dy + centre;
        const double sy = -s * dx + c * dy + centre;
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        const double v = (1 - fy) * ((1 - fx) * at(current, y0, x0) + fx * at(current, y0, x0 + 1)) +
                         fy * ((1 - fx) * at(current, y0 + 1, x0) + fx * at(current, y0 + 1, x0 + 1));
        rotated[static_cast<std::size_t>(y * n + x)] = static_cast<float>(v);
      }
    }
    current = std::move(rotated);
  }

  if (params.shift_x != 0 || params.shift_y != 0) {
    std::vector<float> shifted(current.size(), 0.0f);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        shifted[static_cast<std::size_t>(y * n + x)] = at(current, y - params.shift_y, x - params.shift_x);
    current = std::move(shifted);
  }

  if (params.flip) {
    for (int y = 0; y < n; ++y) {
      auto row = current.begin() + y * n;
      std::reverse(row, row + n);
    }
  }
  return current;
}

RegionSample augment(const RegionSample& sample, std::mt19937_64& rng) {
  const std::size_t regions = sample.images.dim(0);
  const std::size_t channels = sample.images.dim(1);
  const auto side = static_cast<int>(sample.images.dim(2));
  const std::size_t plane = static_cast<std::size_t>(side * side);
  std::vector<float> out;
  out.reserve(sample.images.size());
  for (std::size_t r = 0; r < regions; ++r) {
    const AugmentParams p = draw_augment(rng, side);
    for (std::size_t c = 0; c < channels; ++c) {
      auto src = sample.images.data().subspan((r * channels + c) * plane, plane);
      auto moved = apply_augment(src, side, p);
      out.insert(out.end(), moved.begin(), moved.end());
    }
  }
  RegionSample result;
  result.images = Tensor<float>(sample.images.shape(), std::move(out));
  result.labels = sample.labels;
  result.latent_t = sample.latent_t;
  return result;
}

void write_dataset(const std::vector<RegionSample>& samples, const SynthConfig& cfg, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest;
  manifest["version"] = kDatasetVersion;
  manifest["regions"] = cfg.regions();
  manifest["class_counts"] = cfg.class_counts;
  manifest["image_size"] = cfg.image_size;
  manifest["count"] = samples.size();
  manifest["seed"] = cfg.seed;
  manifest["label_noise_sigma"] = cfg.label_noise_sigma;
  manifest["pixel_noise_sigma"] = cfg.pixel_noise_sigma;
  nlohmann::json records = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.labels.size() != cfg.regions()) throw DataError("write_dataset: sample label count differs from config");
    const std::string file = sample_file_name(i);
    io::write_tensor_file(dir / file, s.images);
    records.push_back({{"file", file}, {"labels", s.labels}, {"latent_t", s.latent_t}});
  }
  manifest["samples"] = std::move(records);
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(1) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw IoError("missing manifest " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    const int version = m.at("version").get<int>();
    if (version != kDatasetVersion) {
      throw IoError("dataset version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kDatasetVersion) + ")");
    }
    ds.config.class_counts = m.at("class_counts").get<std::vector<int>>();
    ds.config.image_size = m.at("image_size").get<int>();
    ds.config.seed = m.at("seed").get<std::uint64_t>();
    ds.config.label_noise_sigma = m.value("label_noise_sigma", 0.0);
    ds.config.pixel_noise_sigma = m.value("pixel_noise_sigma", 0.0);
    const auto count = m.at("count").get<std::size_t>();
    const auto regions = m.at("regions").get<std::size_t>();
    if (regions != ds.config.class_counts.size()) throw IoError("manifest region count disagrees with class_counts");
    const auto& records = m.at("samples");
    if (records.size() != count) {
      throw IoError("manifest lists " + std::to_string(records.size()) + " samples but count is " +
                    std::to_string(count));
    }
    std::size_t on_disk = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("sample_", 0) == 0 && entry.path().extension() == ".bin") ++on_disk;
    }
    if (on_disk != count) {
      throw IoError("manifest count " + std::to_string(count) + " does not match " + std::to_string(on_disk) +
                    " sample files in " + dir.string());
    }
    ds.config.num_samples = static_cast<int>(count);
    const auto side = static_cast<std::size_t>(ds.config.image_size);
    for (const auto& rec : records) {
      RegionSample s;
      const auto file = rec.at("file").get<std::string>();
      s.images = io::read_tensor_file(dir / file);
      if (s.images.shape() != Shape{regions, 1, side, side}) {
        throw IoError(file + ": shape " + to_string(s.images.shape()) + " does not match manifest");
      }
      s.labels = rec.at("labels").get<std::vector<int>>();
      if (s.labels.size() != regions) throw IoError(file + ": wrong number of labels");
      for (std::size_t r = 0; r < regions; ++r) {
        if (s.labels[r] < 1 || s.labels[r] > ds.config.class_counts[r]) throw IoError(file + ": label out of range");
      }
      s.latent_t = rec.at("latent_t").get<double>();
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt manifest " + manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace sat
