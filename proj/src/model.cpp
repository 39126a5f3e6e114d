#include "sat/model.hpp"

#include <algorithm>
#include <cmath>

#include "sat/ops.hpp"

namespace sat {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::sat: return "sat";
    case Variant::sat_no_tr: return "sat_no_tr";
    case Variant::sat_no_rab: return "sat_no_rab";
    case Variant::mvmt_vit: return "mvmt_vit";
  }
  return "sat";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::sat, Variant::sat_no_tr, Variant::sat_no_rab, Variant::mvmt_vit}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "' (expected sat, sat_no_tr, sat_no_rab or mvmt_vit)");
}

void SatConfig::validate() const {
  if (num_regions < 1) throw ConfigError("model: num_regions must be >= 1");
  if (depth < 1) throw ConfigError("model: depth must be >= 1");
  if (embed_dim <= 0 || num_heads <= 0) throw ConfigError("model: embed_dim and num_heads must be positive");
  if (embed_dim % num_heads != 0) throw ConfigError("model: embed_dim must be divisible by num_heads");
  if (class_counts.size() != regions()) throw ConfigError("model: class_counts needs one entry per region");
  for (int k : class_counts) {
    if (k < 2) throw ConfigError("model: every region needs at least 2 classes");
  }
  if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
  if (!(layernorm_eps > 0.0)) throw ConfigError("model: layernorm_eps must be positive");
  embedder().validate();
}

void SatConfig::apply_variant(Variant v) {
  token_replay = v == Variant::sat || v == Variant::sat_no_rab;
  rab = v == Variant::sat || v == Variant::sat_no_tr;
}

EmbedderConfig SatConfig::embedder() const {
  return EmbedderConfig{in_channels, image_size, channel_widths, embed_dim};
}

namespace {

template <typename T>
void append_linear(const std::string& name, const Linear<T>& l, std::vector<NamedTensor<T>>& out) {
  out.push_back({name + ".weight", l.weight});
  out.push_back({name + ".bias", l.bias});
}

template <typename T>
void append_norm(const std::string& name, const NormParams<T>& n, std::vector<NamedTensor<T>>& out) {
  out.push_back({name + ".gain", n.gain});
  out.push_back({name + ".bias", n.bias});
}

template <typename T>
Linear<T> init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {trunc_normal_parameter<T>({in, out}, 0.02, rng), constant_parameter<T>({out}, 0.0)};
}

template <typename T>
NormParams<T> init_norm(std::size_t d) {
  return {constant_parameter<T>({d}, 1.0), constant_parameter<T>({d}, 0.0)};
}

template <typename U, typename T>
Linear<U> cast_linear(const Linear<T>& l) {
  return {cast_tensor<U>(l.weight), cast_tensor<U>(l.bias)};
}

template <typename U, typename T>
NormParams<U> cast_norm(const NormParams<T>& n) {
  return {cast_tensor<U>(n.gain), cast_tensor<U>(n.bias)};
}

// x [..., in] -> [..., out]
template <typename T>
Tensor<T> apply_linear(const Tensor<T>& x, const Linear<T>& l) {
  const std::size_t in = x.shape().back();
  const std::size_t rows = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = l.weight.dim(1);
  Tensor<T> y = add(matmul(reshape(x, {rows, in}), l.weight), l.bias);
  return reshape(y, out_shape);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, const ForwardOptions& opts) {
  if (rate <= 0.0 || opts.dropout_rng == nullptr) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale_kept = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = keep(*opts.dropout_rng) ? scale_kept : T(0);
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

template <typename T>
Tensor<double> to_double_matrix(const Tensor<T>& src, std::size_t offset, std::size_t n) {
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n * n; ++i) v[i] = static_cast<double>(src[offset + i]);
  return Tensor<double>({n, n}, std::move(v));
}

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> SatParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  if (embedders.size() == 1) {
    embedders[0].append_named("embedder.", out);
  } else {
    for (std::size_t r = 0; r < embedders.size(); ++r) {
      embedders[r].append_named("embedder" + std::to_string(r) + ".", out);
    }
  }
  out.push_back({"cls_tokens", cls_tokens});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const auto& layer = layers[l];
    append_norm(p + "norm1", layer.norm1, out);
    append_linear(p + "query", layer.query, out);
    append_linear(p + "key", layer.key, out);
    append_linear(p + "value", layer.value, out);
    append_linear(p + "out", layer.out, out);
    append_norm(p + "norm2", layer.norm2, out);
    append_linear(p + "fc1", layer.fc1, out);
    append_linear(p + "fc2", layer.fc2, out);
  }
  if (rab_scalars.defined()) out.push_back({"rab_scalars", rab_scalars});
  append_norm("final_norm", final_norm, out);
  for (std::size_t r = 0; r < heads.size(); ++r) append_linear("head" + std::to_string(r), heads[r], out);
  return out;
}

template <typename T>
std::vector<Tensor<T>> SatParams<T>::tensors() const {
  std::vector<Tensor<T>> out;
  for (auto& nt : named()) out.push_back(nt.tensor);
  return out;
}

template <typename T>
SatParams<T> init_params(const SatConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  SatParams<T> p;
  const std::size_t regions = cfg.regions();
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t embedder_count = cfg.shared_embedder ? 1 : regions;
  for (std::size_t i = 0; i < embedder_count; ++i) p.embedders.push_back(init_embedder<T>(cfg.embedder(), rng));
  p.cls_tokens = trunc_normal_parameter<T>({regions, d}, 0.02, rng);
  const std::size_t hidden = d * static_cast<std::size_t>(cfg.mlp_ratio);
  for (int l = 0; l < cfg.depth; ++l) {
    EncoderLayerParams<T> layer;
    layer.norm1 = init_norm<T>(d);
    layer.query = init_linear<T>(d, d, rng);
    layer.key = init_linear<T>(d, d, rng);
    layer.value = init_linear<T>(d, d, rng);
    layer.out = init_linear<T>(d, d, rng);
    layer.norm2 = init_norm<T>(d);
    layer.fc1 = init_linear<T>(d, hidden, rng);
    layer.fc2 = init_linear<T>(hidden, d, rng);
    p.layers.push_back(std::move(layer));
  }
  if (cfg.rab) p.rab_scalars = constant_parameter<T>({static_cast<std::size_t>(cfg.depth), regions}, -1.0);
  p.final_norm = init_norm<T>(d);
  for (std::size_t r = 0; r < regions; ++r) {
    p.heads.push_back(init_linear<T>(d, static_cast<std::size_t>(cfg.class_counts[r]), rng));
  }
  return p;
}

template <typename U, typename T>
SatParams<U> cast_params(const SatParams<T>& p) {
  SatParams<U> out;
  for (const auto& e : p.embedders) {
    EmbedderParams<U> ce;
    for (const auto& k : e.conv_kernels) ce.conv_kernels.push_back(cast_tensor<U>(k));
    for (const auto& b : e.conv_biases) ce.conv_biases.push_back(cast_tensor<U>(b));
    ce.proj_weight = cast_tensor<U>(e.proj_weight);
    ce.proj_bias = cast_tensor<U>(e.proj_bias);
    out.embedders.push_back(std::move(ce));
  }
  out.cls_tokens = cast_tensor<U>(p.cls_tokens);
  for (const auto& l : p.layers) {
    out.layers.push_back({cast_norm<U>(l.norm1), cast_linear<U>(l.query), cast_linear<U>(l.key),
                          cast_linear<U>(l.value), cast_linear<U>(l.out), cast_norm<U>(l.norm2),
                          cast_linear<U>(l.fc1), cast_linear<U>(l.fc2)});
  }
  out.rab_scalars = cast_tensor<U>(p.rab_scalars);
  out.final_norm = cast_norm<U>(p.final_norm);
  for (const auto& h : p.heads) out.heads.push_back(cast_linear<U>(h));
  return out;
}

double rab_value(double b) {
  return std::tanh(b + 1.0) * 0.5;
}

template <typename T>
Tensor<T> rab_values(const Tensor<T>& b) {
  return scale(tanh(add_scalar(b, T(1))), T(0.5));
}

template <typename T>
Tensor<T> build_bias_matrix(const Tensor<T>& d, std::size_t regions) {
  if (d.size() != regions) {
    throw DimensionError("build_bias_matrix: expected " + std::to_string(regions) + " values, got " +
                         std::to_string(d.size()));
  }
  const std::size_t n = 2 * regions;
  std::vector<std::size_t> positions(regions);
  for (std::size_t i = 0; i < regions; ++i) positions[i] = i * n + regions + i;
  return scatter(reshape(d, {regions}), {n, n}, positions);
}

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& tokens, const EncoderLayerParams<T>& layer, const Tensor<T>& bias,
                        const SatConfig& cfg, std::size_t layer_index, const ForwardOptions& opts,
                        std::vector<AttentionRecord>* records) {
  const std::size_t n = cfg.tokens();
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  if (tokens.rank() == 2) {
    Tensor<T> batched = reshape(tokens, {1, tokens.dim(0), tokens.dim(1)});
    return reshape(encoder_layer(batched, layer, bias, cfg, layer_index, opts, records), tokens.shape());
  }
  if (tokens.rank() != 3 || tokens.dim(1) != n || tokens.dim(2) != d) {
    throw ContractError("encoder_layer: expected " + std::to_string(n) + " tokens of width " + std::to_string(d) +
                        ", got " + to_string(tokens.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{n, n}) {
    throw DimensionError("encoder_layer: bias must be " + to_string({n, n}));
  }
  const std::size_t batch = tokens.dim(0);
  const auto heads = static_cast<std::size_t>(cfg.num_heads);
  const std::size_t head_dim = d / heads;
  const T eps = static_cast<T>(cfg.layernorm_eps);

  auto split = [&](const Tensor<T>& x) { return permute(reshape(x, {batch, n, heads, head_dim}), {0, 2, 1, 3}); };

  Tensor<T> h = layernorm(tokens, layer.norm1.gain, layer.norm1.bias, eps);
  Tensor<T> q = split(apply_linear(h, layer.query));
  Tensor<T> k = split(apply_linear(h, layer.key));
  Tensor<T> v = split(apply_linear(h, layer.value));
  Tensor<T> scores = scale(bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim))));
  if (bias.defined()) scores = add(scores, bias);
  Tensor<T> attn = softmax_rows(scores);
  if (records != nullptr && opts.record_attention) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const std::size_t offset = (b * heads + hd) * n * n;
        records->push_back({layer_index, hd, b, to_double_matrix(scores, offset, n), to_double_matrix(attn, offset, n)});
      }
    }
  }
  Tensor<T> mixed = reshape(permute(bmm(attn, v), {0, 2, 1, 3}), {batch, n, d});
  Tensor<T> x = add(tokens, dropout(apply_linear(mixed, layer.out), cfg.dropout, opts));

  Tensor<T> h2 = layernorm(x, layer.norm2.gain, layer.norm2.bias, eps);
  Tensor<T> mlp = apply_linear(gelu(apply_linear(h2, layer.fc1)), layer.fc2);
  return add(x, dropout(mlp, cfg.dropout, opts));
}

template <typename T>
ForwardResult<T> forward_tokens(const Tensor<T>& z0, const SatParams<T>& params, const SatConfig& cfg,
                                const ForwardOptions& opts) {
  const std::size_t regions = cfg.regions();
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  if (z0.rank() != 3 || z0.dim(1) != regions || z0.dim(2) != d) {
    throw ContractError("forward: regional tokens must be [B, " + std::to_string(regions) + ", " + std::to_string(d) +
                        "], got " + to_string(z0.shape()));
  }
  if (params.layers.size() != static_cast<std::size_t>(cfg.depth) || params.heads.size() != regions) {
    throw ContractError("forward: parameters do not match the model configuration");
  }
  if (cfg.rab != params.rab_scalars.defined()) {
    throw ContractError("forward: rab_scalars must be present exactly when RAB is enabled");
  }
  const std::size_t batch = z0.dim(0);
  ForwardResult<T> result;
  Tensor<T> x = concat<T>({expand(params.cls_tokens, batch), z0}, 1);
  Tensor<T> replay;
  if (cfg.token_replay) replay = concat<T>({z0, Tensor<T>::zeros({batch, regions, d})}, 1);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Tensor<T> bias;
    if (cfg.rab) bias = build_bias_matrix(rab_values(slice(params.rab_scalars, 0, l, 1)), regions);
    x = encoder_layer(x, params.layers[l], bias, cfg, l, opts, &result.records);
    if (cfg.token_replay) x = add(x, replay);
  }
  result.cls_features = slice(x, 1, 0, regions);
  Tensor<T> cls = layernorm(result.cls_features, params.final_norm.gain, params.final_norm.bias,
                            static_cast<T>(cfg.layernorm_eps));
  for (std::size_t r = 0; r < regions; ++r) {
    Tensor<T> feature = reshape(slice(cls, 1, r, 1), {batch, d});
    result.logits.push_back(add(matmul(feature, params.heads[r].weight), params.heads[r].bias));
  }
  return result;
}

template <typename T>
ForwardResult<T> forward(const Tensor<T>& images, const SatParams<T>& params, const SatConfig& cfg,
                         const ForwardOptions& opts) {
  Tensor<T> z0 = embed_batch<T>(images, params.embedders, cfg.embedder(), cfg.regions());
  return forward_tokens(z0, params, cfg, opts);
}

template <typename T>
LabelMatrix predict_scores(const std::vector<Tensor<T>>& logits, ScoreMode mode) {
  if (logits.empty()) return {};
  const std::size_t batch = logits[0].dim(0);
  LabelMatrix scores(batch, logits.size());
  for (std::size_t r = 0; r < logits.size(); ++r) {
    const Tensor<T>& lg = logits[r];
    if (lg.rank() != 2 || lg.dim(0) != batch) throw DimensionError("predict_scores: logits must be [B, K_r]");
    const std::size_t k = lg.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = lg.data().data() + b * k;
      if (mode == ScoreMode::argmax) {
        scores.at(b, r) = static_cast<int>(std::max_element(row, row + k) - row) + 1;
        continue;
      }
      const double mx = static_cast<double>(*std::max_element(row, row + k));
      double total = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double e = std::exp(static_cast<double>(row[j]) - mx);
        total += e;
        weighted += static_cast<double>(j + 1) * e;
      }
      const double mu = weighted / total;
      scores.at(b, r) = static_cast<int>(std::clamp(std::round(mu), 1.0, static_cast<double>(k)));
    }
  }
  return scores;
}

template struct SatParams<float>;
template struct SatParams<double>;
template SatParams<float> init_params<float>(const SatConfig&, std::uint64_t);
template SatParams<double> init_params<double>(const SatConfig&, std::uint64_t);
template SatParams<double> cast_params<double, float>(const SatParams<float>&);
template SatParams<float> cast_params<float, double>(const SatParams<double>&);
template SatParams<float> cast_params<float, float>(const SatParams<float>&);
template SatParams<double> cast_params<double, double>(const SatParams<double>&);

#define SAT_INSTANTIATE_MODEL(T)                                                                              \
  template Tensor<T> rab_values(const Tensor<T>&);                                                            \
  template Tensor<T> build_bias_matrix(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> encoder_layer(const Tensor<T>&, const EncoderLayerParams<T>&, const Tensor<T>&,          \
                                   const SatConfig&, std::size_t, const ForwardOptions&,                     \
                                   std::vector<AttentionRecord>*);                                           \
  template ForwardResult<T> forward_tokens(const Tensor<T>&, const SatParams<T>&, const SatConfig&,           \
                                           const ForwardOptions&);                                           \
  template ForwardResult<T> forward(const Tensor<T>&, const SatParams<T>&, const SatConfig&,                  \
                                    const ForwardOptions&);                                                  \
  template LabelMatrix predict_scores(const std::vector<Tensor<T>>&, ScoreMode);

SAT_INSTANTIATE_MODEL(float)
SAT_INSTANTIATE_MODEL(double)

#undef SAT_INSTANTIATE_MODEL

}  // namespace sat
