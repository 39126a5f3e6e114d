#include "sat/embedder.hpp"

#include <cmath>
#include <string>

#include "sat/ops.hpp"

namespace sat {

void EmbedderConfig::validate() const {
  if (in_channels <= 0) throw ConfigError("embedder: in_channels must be positive");
  if (embed_dim <= 0) throw ConfigError("embedder: embed_dim must be positive");
  if (channel_widths.empty()) throw ConfigError("embedder: need at least one conv stage");
  for (int w : channel_widths) {
    if (w <= 0) throw ConfigError("embedder: channel widths must be positive");
  }
  const int factor = 1 << channel_widths.size();
  if (image_size <= 0 || image_size % factor != 0) {
    throw ConfigError("embedder: image_size " + std::to_string(image_size) + " must be divisible by 2^" +
                      std::to_string(channel_widths.size()));
  }
}

template <typename T>
void EmbedderParams<T>::append_named(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    out.push_back({prefix + "conv" + std::to_string(i) + ".weight", conv_kernels[i]});
    out.push_back({prefix + "conv" + std::to_string(i) + ".bias", conv_biases[i]});
  }
  out.push_back({prefix + "proj.weight", proj_weight});
  out.push_back({prefix + "proj.bias", proj_bias});
}

template <typename T>
EmbedderParams<T> init_embedder(const EmbedderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  EmbedderParams<T> p;
  std::size_t in = static_cast<std::size_t>(cfg.in_channels);
  for (int width : cfg.channel_widths) {
    const auto out = static_cast<std::size_t>(width);
    const double fan_in = static_cast<double>(in * 9);
    p.conv_kernels.push_back(trunc_normal_parameter<T>({out, in, 3, 3}, std::sqrt(2.0 / fan_in), rng));
    p.conv_biases.push_back(constant_parameter<T>({out}, 0.0));
    in = out;
  }
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  p.proj_weight = trunc_normal_parameter<T>({in, d}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  p.proj_bias = constant_parameter<T>({d}, 0.0);
  return p;
}

namespace {

// images [N, C, H, W] -> [N, d]
template <typename T>
Tensor<T> embed_stack(const Tensor<T>& images, const EmbedderParams<T>& params) {
  Tensor<T> x = images;
  for (std::size_t i = 0; i < params.conv_kernels.size(); ++i) {
    x = gelu(conv2d(x, params.conv_kernels[i], params.conv_biases[i], 2, 1));
  }
  return add(matmul(avgpool_global(x), params.proj_weight), params.proj_bias);
}

void check_image_shape(const Shape& tail, const EmbedderConfig& cfg) {
  const auto c = static_cast<std::size_t>(cfg.in_channels);
  const auto s = static_cast<std::size_t>(cfg.image_size);
  if (tail != Shape{c, s, s}) {
    throw DimensionError("embedder expects images of shape " + to_string({c, s, s}) + ", got " + to_string(tail));
  }
}

}  // namespace

template <typename T>
Tensor<T> embed(const Tensor<T>& image, const EmbedderParams<T>& params, const EmbedderConfig& cfg) {
  if (image.rank() != 3) throw DimensionError("embed expects [C, H, W], got " + to_string(image.shape()));
  check_image_shape(image.shape(), cfg);
  Tensor<T> batched = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
  return reshape(embed_stack(batched, params), {static_cast<std::size_t>(cfg.embed_dim)});
}

template <typename T>
Tensor<T> embed_batch(const Tensor<T>& images, std::span<const EmbedderParams<T>> params, const EmbedderConfig& cfg,
                      std::size_t num_regions) {
  if (images.rank() != 5) throw DimensionError("embed_batch expects [B, R, C, H, W], got " + to_string(images.shape()));
  if (images.dim(1) != num_regions) {
    throw ConfigError("embed_batch: images carry " + std::to_string(images.dim(1)) + " regions, model has " +
                      std::to_string(num_regions));
  }
  if (params.size() != 1 && params.size() != num_regions) {
    throw ConfigError("embed_batch: need one shared embedder or one per region");
  }
  check_image_shape(Shape(images.shape().begin() + 2, images.shape().end()), cfg);
  const std::size_t b = images.dim(0), c = images.dim(2), h = images.dim(3), w = images.dim(4);
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  if (params.size() == 1) {
    Tensor<T> flat = reshape(images, {b * num_regions, c, h, w});
    return reshape(embed_stack(flat, params[0]), {b, num_regions, d});
  }
  std::vector<Tensor<T>> per_region;
  for (std::size_t r = 0; r < num_regions; ++r) {
    Tensor<T> region = reshape(slice(images, 1, r, 1), {b, c, h, w});
    per_region.push_back(reshape(embed_stack(region, params[r]), {b, 1, d}));
  }
  return concat(per_region, 1);
}

template struct EmbedderParams<float>;
template struct EmbedderParams<double>;
template EmbedderParams<float> init_embedder<float>(const EmbedderConfig&, std::mt19937_64&);
template EmbedderParams<double> init_embedder<double>(const EmbedderConfig&, std::mt19937_64&);
template Tensor<float> embed(const Tensor<float>&, const EmbedderParams<float>&, const EmbedderConfig&);
template Tensor<double> embed(const Tensor<double>&, const EmbedderParams<double>&, const EmbedderConfig&);
template Tensor<float> embed_batch(const Tensor<float>&, std::span<const EmbedderParams<float>>,
                                   const EmbedderConfig&, std::size_t);
template Tensor<double> embed_batch(const Tensor<double>&, std::span<const EmbedderParams<double>>,
                                    const EmbedderConfig&, std::size_t);

}  // namespace sat
