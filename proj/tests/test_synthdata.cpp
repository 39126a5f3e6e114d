#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "sat/binary_io.hpp"
#include "sat/errors.hpp"
#include "sat/synthdata.hpp"

using namespace sat;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sat_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

double image_mean(std::span<const float> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("ordinal label mapping") {
  CHECK(ordinal_label(0.0, 0.0, 9) == 1);
  CHECK(ordinal_label(1.0, 0.0, 9) == 9);
  CHECK(ordinal_label(0.5, 0.0, 9) == 5);
  CHECK(ordinal_label(0.5, 0.0, 6) == 4);  // 1 + 2.5 rounds away from zero
  CHECK(ordinal_label(0.9, 0.5, 5) == 5);
  CHECK(ordinal_label(0.1, -0.5, 5) == 1);
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.label_noise_sigma = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.class_counts = {9, 1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.num_samples = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("noise-free labels are monotone functions of the latent") {
  SynthConfig cfg;
  cfg.num_samples = 500;
  cfg.image_size = 16;
  cfg.label_noise_sigma = 0.0;
  auto samples = generate(cfg);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return samples[a].latent_t < samples[b].latent_t; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    for (std::size_t r = 0; r < 5; ++r) CHECK(samples[order[i]].labels[r] >= samples[order[i - 1]].labels[r]);
  }
  for (const auto& s : samples) {
    for (std::size_t r = 0; r < 5; ++r) CHECK(s.labels[r] == ordinal_label(s.latent_t, 0.0, cfg.class_counts[r]));
  }
}

TEST_CASE("default noise keeps labels strongly correlated and covers every class") {
  SynthConfig cfg;
  cfg.num_samples = 10000;
  cfg.image_size = 8;
  auto samples = generate(cfg);
  auto corr = label_correlation(label_table(samples));
  for (std::size_t a = 0; a < 5; ++a) {
    CHECK(corr[a][a] == 1.0);
    for (std::size_t b = 0; b < 5; ++b) {
      CHECK(corr[a][b] == corr[b][a]);
      if (a != b) CHECK(corr[a][b] > 0.8);
    }
  }
  for (std::size_t r = 0; r < 5; ++r) {
    std::set<int> seen;
    for (const auto& s : samples) seen.insert(s.labels[r]);
    CHECK(seen.size() == static_cast<std::size_t>(cfg.class_counts[r]));
    CHECK(*seen.begin() == 1);
  }
}

TEST_CASE("generation is seed-deterministic and index-addressable") {
  SynthConfig cfg;
  cfg.num_samples = 6;
  cfg.image_size = 16;
  cfg.seed = 17;
  auto a = generate(cfg);
  auto b = generate(cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].images.values() == b[i].images.values());
    CHECK(a[i].labels == b[i].labels);
    auto single = generate_sample(cfg, i);
    CHECK(single.images.values() == a[i].images.values());
  }
  cfg.seed = 18;
  CHECK(generate(cfg)[0].images.values() != a[0].images.values());
}

TEST_CASE("glyphs grow with the label and differ by region") {
  for (std::size_t r = 0; r < 5; ++r) {
    double prev = -1.0;
    for (int y = 1; y <= 6; ++y) {
      auto g = render_glyph(r, y, 6, 32);
      const double m = image_mean(g);
      CHECK(m > prev);
      prev = m;
      for (float v : g) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
  }
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) CHECK(render_glyph(a, 4, 6, 32) != render_glyph(b, 4, 6, 32));
}

TEST_CASE("augmentation identities") {
  SynthConfig cfg;
  cfg.num_samples = 1;
  auto s = generate(cfg)[0];
  const int n = cfg.image_size;
  auto region0 = std::span<const float>(s.images.data().data(), static_cast<std::size_t>(n * n));
  CHECK(apply_augment(region0, n, AugmentParams{}) == std::vector<float>(region0.begin(), region0.end()));

  AugmentParams flip;
  flip.flip = true;
  auto once = apply_augment(region0, n, flip);
  CHECK(once != std::vector<float>(region0.begin(), region0.end()));
  CHECK(apply_augment(once, n, flip) == std::vector<float>(region0.begin(), region0.end()));

  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    auto out = augment(s, rng);
    CHECK(out.labels == s.labels);
    CHECK(out.images.shape() == s.images.shape());
    CHECK(out.latent_t == s.latent_t);
  }
}

TEST_CASE("augmentation draws stay in range") {
  std::mt19937_64 rng(5);
  int flips = 0;
  for (int i = 0; i < 2000; ++i) {
    auto p = draw_augment(rng, 32);
    CHECK(std::abs(p.angle_deg) <= 15.0);
    CHECK(std::abs(p.shift_x) <= 2);
    CHECK(std::abs(p.shift_y) <= 2);
    flips += p.flip ? 1 : 0;
  }
  CHECK(flips > 850);
  CHECK(flips < 1150);
}

TEST_CASE("shifting a centred glyph preserves mean intensity") {
  for (std::size_t r = 0; r < 5; ++r) {
    auto g = render_glyph(r, 4, 6, 32);
    const double base = image_mean(g);
    for (int dx = -2; dx <= 2; ++dx) {
      for (int dy = -2; dy <= 2; ++dy) {
        AugmentParams p;
        p.shift_x = dx;
        p.shift_y = dy;
        CHECK(std::abs(image_mean(apply_augment(g, 32, p)) - base) <= 0.05 * base);
      }
    }
  }
}

TEST_CASE("rotation keeps a centred disk nearly unchanged") {
  auto g = render_glyph(0, 5, 6, 32);
  AugmentParams p;
  p.angle_deg = 12.0;
  auto rotated = apply_augment(g, 32, p);
  double diff = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) diff += std::abs(rotated[i] - g[i]);
  CHECK(diff / static_cast<double>(g.size()) < 0.02);
  auto square = render_glyph(1, 5, 6, 32);
  auto turned = apply_augment(square, 32, p);
  CHECK(turned != square);
  CHECK(std::abs(image_mean(turned) - image_mean(square)) <= 0.05 * image_mean(square));
}

TEST_CASE("dataset round trip is lossless and byte-stable") {
  SynthConfig cfg;
  cfg.num_samples = 5;
  cfg.image_size = 16;
  cfg.seed = 9;
  auto samples = generate(cfg);
  auto dir = scratch_dir("roundtrip");
  write_dataset(samples, cfg, dir);
  auto ds = read_dataset(dir);
  REQUIRE(ds.samples.size() == samples.size());
  CHECK(ds.config.class_counts == cfg.class_counts);
  CHECK(ds.config.image_size == cfg.image_size);
  CHECK(ds.config.seed == cfg.seed);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(ds.samples[i].images.values() == samples[i].images.values());
    CHECK(ds.samples[i].images.shape() == samples[i].images.shape());
    CHECK(ds.samples[i].labels == samples[i].labels);
    CHECK(ds.samples[i].latent_t == samples[i].latent_t);
  }
  auto dir2 = scratch_dir("roundtrip2");
  write_dataset(generate(cfg), cfg, dir2);
  for (const auto& entry : fs::directory_iterator(dir)) {
    CHECK(slurp(entry.path()) == slurp(dir2 / entry.path().filename()));
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("dataset reader rejects inconsistent directories") {
  SynthConfig cfg;
  cfg.num_samples = 3;
  cfg.image_size = 8;
  auto samples = generate(cfg);

  SUBCASE("extra sample file") {
    auto dir = scratch_dir("extra");
    write_dataset(samples, cfg, dir);
    fs::copy_file(dir / "sample_000000.bin", dir / "sample_000003.bin");
    CHECK_THROWS_AS(read_dataset(dir), IoError);
    fs::remove_all(dir);
  }
  SUBCASE("missing sample file") {
    auto dir = scratch_dir("missing");
    write_dataset(samples, cfg, dir);
    fs::remove(dir / "sample_000001.bin");
    CHECK_THROWS_AS(read_dataset(dir), IoError);
    fs::remove_all(dir);
  }
  SUBCASE("truncated tensor names the sample") {
    auto dir = scratch_dir("truncated");
    write_dataset(samples, cfg, dir);
    const auto victim = dir / "sample_000002.bin";
    fs::resize_file(victim, fs::file_size(victim) - 7);
    try {
      read_dataset(dir);
      FAIL("expected an error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("sample_000002.bin") != std::string::npos);
    }
    fs::remove_all(dir);
  }
  SUBCASE("bad magic") {
    auto dir = scratch_dir("magic");
    write_dataset(samples, cfg, dir);
    {
      std::fstream f(dir / "sample_000000.bin", std::ios::in | std::ios::out | std::ios::binary);
      f.write("XXXXXXXX", 8);
    }
    CHECK_THROWS_AS(read_dataset(dir), IoError);
    fs::remove_all(dir);
  }
  SUBCASE("version mismatch") {
    auto dir = scratch_dir("version");
    write_dataset(samples, cfg, dir);
    std::string manifest = slurp(dir / "manifest.json");
    const auto pos = manifest.find("\"version\": 1");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, 12, "\"version\": 7");
    std::ofstream(dir / "manifest.json", std::ios::binary) << manifest;
    CHECK_THROWS_AS(read_dataset(dir), IoError);
    fs::remove_all(dir);
  }
  SUBCASE("corrupt manifest") {
    auto dir = scratch_dir("corrupt");
    write_dataset(samples, cfg, dir);
    std::ofstream(dir / "manifest.json", std::ios::binary) << "{ not json";
    CHECK_THROWS_AS(read_dataset(dir), IoError);
    fs::remove_all(dir);
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(read_dataset(scratch_dir("nowhere")), IoError);
  }
}

TEST_CASE("tensor file round trip") {
  auto dir = scratch_dir("tensor");
  fs::create_directories(dir);
  Tensor<float> t({2, 3}, {1.5f, -2.0f, 0.0f, 3.25f, 1e-20f, -7.0f});
  io::write_tensor_file(dir / "t.bin", t);
  auto back = io::read_tensor_file(dir / "t.bin");
  CHECK(back.shape() == t.shape());
  CHECK(back.values() == t.values());
  CHECK(fs::file_size(dir / "t.bin") == 8 + 4 + 2 * 4 + 6 * 4);
  fs::remove_all(dir);
}
