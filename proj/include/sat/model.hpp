#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sat/embedder.hpp"
#include "sat/init.hpp"
#include "sat/labels.hpp"
#include "sat/tensor.hpp"

namespace sat {

// Model variants; each fixes the token-replay / RAB flags.
enum class Variant { sat, sat_no_tr, sat_no_rab, mvmt_vit };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct SatConfig {
  int num_regions = 5;
  int embed_dim = 32;
  int depth = 2;
  int num_heads = 2;
  std::vector<int> class_counts{9, 5, 6, 7, 6};
  bool token_replay = true;
  bool rab = true;
  int mlp_ratio = 4;
  double dropout = 0.0;
  double layernorm_eps = 1e-6;
  bool shared_embedder = true;
  // embedder geometry
  int in_channels = 1;
  int image_size = 32;
  std::vector<int> channel_widths{8, 16, 32};

  void validate() const;
  void apply_variant(Variant v);
  EmbedderConfig embedder() const;
  std::size_t regions() const { return static_cast<std::size_t>(num_regions); }
  std::size_t tokens() const { return 2 * regions(); }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <typename T>
struct EncoderLayerParams {
  NormParams<T> norm1;
  Linear<T> query, key, value, out;
  NormParams<T> norm2;
  Linear<T> fc1, fc2;
};

template <typename T>
struct SatParams {
  std::vector<EmbedderParams<T>> embedders;  // one shared, or one per region
  Tensor<T> cls_tokens;                      // [R, d]
  std::vector<EncoderLayerParams<T>> layers;
  Tensor<T> rab_scalars;  // [L, R]; undefined when RAB is off
  NormParams<T> final_norm;
  std::vector<Linear<T>> heads;  // head r: d -> K_r

  // Every parameter in a fixed canonical order with a stable name.
  std::vector<NamedTensor<T>> named() const;
  std::vector<Tensor<T>> tensors() const;
};

// Truncated-normal(0.02) projections and CLS tokens, zero biases, unit norm
// gains, b_r = -1 (zero attention bias at start).
template <typename T>
SatParams<T> init_params(const SatConfig& cfg, std::uint64_t seed);

template <typename U, typename T>
SatParams<U> cast_params(const SatParams<T>& p);

struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t sample = 0;
  Tensor<double> pre_softmax;   // [2R, 2R], includes the attention bias
  Tensor<double> post_softmax;  // [2R, 2R]
};

struct ForwardOptions {
  bool record_attention = false;
  std::mt19937_64* dropout_rng = nullptr;  // dropout is active only when set
};

template <typename T>
struct ForwardResult {
  std::vector<Tensor<T>> logits;  // R tensors of shape [B, K_r]
  Tensor<T> cls_features;         // [B, R, d], CLS half after the last layer, before the final norm
  std::vector<AttentionRecord> records;
};

// tanh(b + 1) / 2, always inside (-0.5, 0.5).
double rab_value(double b);
template <typename T> Tensor<T> rab_values(const Tensor<T>& b);

// [2R, 2R] matrix with d[i] at (i, R + i) and zeros elsewhere.
template <typename T> Tensor<T> build_bias_matrix(const Tensor<T>& d, std::size_t regions);

// tokens [B, 2R, d] (or [2R, d]); bias [2R, 2R] or undefined.
template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& tokens, const EncoderLayerParams<T>& layer, const Tensor<T>& bias,
                        const SatConfig& cfg, std::size_t layer_index, const ForwardOptions& opts,
                        std::vector<AttentionRecord>* records);

// Runs the encoder on embedded regional tokens z0 [B, R, d].
template <typename T>
ForwardResult<T> forward_tokens(const Tensor<T>& z0, const SatParams<T>& params, const SatConfig& cfg,
                                const ForwardOptions& opts = {});

// Embeds images [B, R, C, H, W] and runs the encoder.
template <typename T>
ForwardResult<T> forward(const Tensor<T>& images, const SatParams<T>& params, const SatConfig& cfg,
                         const ForwardOptions& opts = {});

enum class ScoreMode { expected, argmax };

// Per region: softmax, then either the expected score rounded half away from
// zero and clamped to [1, K_r], or the argmax class (lowest index on ties).
template <typename T>
LabelMatrix predict_scores(const std::vector<Tensor<T>>& logits, ScoreMode mode = ScoreMode::expected);

}  // namespace sat
