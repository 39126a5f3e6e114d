#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "sat/labels.hpp"
#include "sat/tensor.hpp"

namespace sat {

// Synthetic multi-view ordinal task. One latent maturity t ~ U(0,1) per
// sample drives every region's label, so labels are strongly correlated
// across regions; each region is rendered as its own glyph whose size and
// brightness grow with the label.
struct SynthConfig {
  int num_samples = 2000;
  int image_size = 32;
  std::vector<int> class_counts{9, 5, 6, 7, 6};
  double label_noise_sigma = 0.08;
  double pixel_noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t regions() const { return class_counts.size(); }
};

struct RegionSample {
  Tensor<float> images;     // [R, 1, H, W]
  std::vector<int> labels;  // R labels, label r in [1, K_r]
  double latent_t = 0.0;
};

// Label for latent t and noise eta: clamp(round(1 + (K-1)(t + eta)), 1, K).
int ordinal_label(double t, double eta, int classes);

// Noise-free glyph for `region` showing `label` out of `classes`.
std::vector<float> render_glyph(std::size_t region, int label, int classes, int image_size);

// Sample `index` of the dataset; depends only on (cfg, index).
RegionSample generate_sample(const SynthConfig& cfg, std::size_t index);
std::vector<RegionSample> generate(const SynthConfig& cfg);

// Row-major [samples, regions] label table.
LabelMatrix label_table(const std::vector<RegionSample>& samples);

// Pearson correlation between label columns; a constant column correlates
// 1 with itself and 0 with everything else.
std::vector<std::vector<double>> label_correlation(const LabelMatrix& labels);

struct AugmentParams {
  double angle_deg = 0.0;
  int shift_x = 0;
  int shift_y = 0;
  bool flip = false;
};

// Rotation in +-15 degrees, integer shift in +-floor(size/12) per axis,
// horizontal flip with probability 1/2.
AugmentParams draw_augment(std::mt19937_64& rng, int image_size);

// Rotate about the centre (bilinear, zero fill), then shift (zero fill), then
// mirror left-right.
std::vector<float> apply_augment(std::span<const float> image, int image_size, const AugmentParams& params);

// Independent draw per region; labels are untouched.
RegionSample augment(const RegionSample& sample, std::mt19937_64& rng);

struct Dataset {
  SynthConfig config;  // num_samples reflects the samples actually stored
  std::vector<RegionSample> samples;
};

inline constexpr int kDatasetVersion = 1;

// Writes manifest.json plus one binary tensor file per sample.
void write_dataset(const std::vector<RegionSample>& samples, const SynthConfig& cfg, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace sat
