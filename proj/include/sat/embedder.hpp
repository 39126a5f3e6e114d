#pragma once

#include <random>
#include <span>
#include <vector>

#include "sat/init.hpp"
#include "sat/tensor.hpp"

namespace sat {

// Small convolutional stand-in for the hybrid-ViT image encoder: a stack of
// 3x3 stride-2 convolutions (GELU between), global average pooling, and a
// dense projection to one d-dimensional token per region image.
struct EmbedderConfig {
  int in_channels = 1;
  int image_size = 32;
  std::vector<int> channel_widths{8, 16, 32};
  int embed_dim = 32;

  void validate() const;
};

template <typename T>
struct EmbedderParams {
  std::vector<Tensor<T>> conv_kernels;  // [out, in, 3, 3]
  std::vector<Tensor<T>> conv_biases;   // [out]
  Tensor<T> proj_weight;                // [last width, d]
  Tensor<T> proj_bias;                  // [d]

  void append_named(const std::string& prefix, std::vector<NamedTensor<T>>& out) const;
};

template <typename T>
EmbedderParams<T> init_embedder(const EmbedderConfig& cfg, std::mt19937_64& rng);

// image [C, H, W] -> token [d]
template <typename T>
Tensor<T> embed(const Tensor<T>& image, const EmbedderParams<T>& params, const EmbedderConfig& cfg);

// images [B, R, C, H, W] -> tokens [B, R, d]. `params` holds either one
// embedder shared by every region or one per region.
template <typename T>
Tensor<T> embed_batch(const Tensor<T>& images, std::span<const EmbedderParams<T>> params,
                      const EmbedderConfig& cfg, std::size_t num_regions);

}  // namespace sat
