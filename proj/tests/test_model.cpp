#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "reference_model.hpp"
#include "sat/errors.hpp"
#include "sat/model.hpp"
#include "sat/objective.hpp"
#include "sat/ops.hpp"

using namespace sat;
using sat::testing::random_tensor;

namespace {

SatConfig small_config(int regions = 3, int d = 8) {
  SatConfig cfg;
  cfg.num_regions = regions;
  cfg.embed_dim = d;
  cfg.depth = 2;
  cfg.num_heads = 2;
  cfg.class_counts.clear();
  for (int r = 0; r < regions; ++r) cfg.class_counts.push_back(3 + r);
  cfg.image_size = 8;
  cfg.channel_widths = {2, 3, 4};
  return cfg;
}

// Adds uniform noise to every parameter so that biases, gains and RAB
// scalars sit at generic values rather than their initial constants.
void jitter(SatParams<double>& params, std::mt19937_64& rng, double amount = 0.3) {
  std::uniform_real_distribution<double> dist(-amount, amount);
  for (auto& t : params.tensors())
    for (auto& v : t.data()) v += dist(rng);
}

std::vector<testing::Matrix> as_matrices(const Tensor<double>& z0) {
  std::vector<testing::Matrix> out(z0.dim(0), testing::Matrix(z0.dim(1), std::vector<double>(z0.dim(2))));
  for (std::size_t b = 0; b < z0.dim(0); ++b)
    for (std::size_t r = 0; r < z0.dim(1); ++r)
      for (std::size_t j = 0; j < z0.dim(2); ++j) out[b][r][j] = z0[(b * z0.dim(1) + r) * z0.dim(2) + j];
  return out;
}

// Pre-softmax scores of one layer as recorded by the forward pass.
std::vector<AttentionRecord> layer_records(const Tensor<double>& tokens, const EncoderLayerParams<double>& layer,
                                           const Tensor<double>& bias, const SatConfig& cfg) {
  std::vector<AttentionRecord> records;
  ForwardOptions opts;
  opts.record_attention = true;
  encoder_layer(tokens, layer, bias, cfg, 0, opts, &records);
  return records;
}

}  // namespace

TEST_CASE("rab_value examples") {
  CHECK(rab_value(-1.0) == 0.0);
  CHECK(rab_value(0.0) == doctest::Approx(0.380797077977882444).epsilon(1e-15));
  double previous = rab_value(0.0);
  for (double b = 1.0; b <= 15.0; b += 1.0) {
    const double v = rab_value(b);
    CHECK(v > previous);
    CHECK(v < 0.5);
    previous = v;
  }
  CHECK(rab_value(15.0) > 0.4999999);
  for (double b = -40.0; b <= 40.0; b += 0.5) CHECK(std::abs(rab_value(b)) <= 0.5);
}

TEST_CASE("rab_values matches the scalar form") {
  auto b = Tensor<double>({4}, {-1.0, 0.0, 2.5, -3.0});
  auto d = rab_values(b);
  for (std::size_t i = 0; i < 4; ++i) CHECK(d[i] == doctest::Approx(rab_value(b[i])).epsilon(1e-15));
}

TEST_CASE("bias matrix structure") {
  auto B = build_bias_matrix(Tensor<double>({2}, {0.1, 0.2}), 2);
  REQUIRE(B.shape() == Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double expected = 0.0;
      if (i == 0 && j == 2) expected = 0.1;
      if (i == 1 && j == 3) expected = 0.2;
      CHECK(B[i * 4 + j] == expected);
    }
  }
  auto Z = build_bias_matrix(Tensor<double>::zeros({3}), 3);
  for (double v : Z.data()) CHECK(v == 0.0);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t R = 1 + static_cast<std::size_t>(trial % 5);
    auto M = build_bias_matrix(random_tensor({R}, rng, -0.5, 0.5, false), R);
    for (std::size_t i = R; i < 2 * R; ++i)
      for (std::size_t j = 0; j < 2 * R; ++j) CHECK(M[i * 2 * R + j] == 0.0);
  }
  CHECK_THROWS_AS(build_bias_matrix(Tensor<double>::zeros({2}), 3), DimensionError);
}

TEST_CASE("encoder layer: absent bias equals zero bias") {
  auto cfg = small_config();
  std::mt19937_64 rng(5);
  auto params = init_params<double>(cfg, 1);
  jitter(params, rng);
  auto tokens = random_tensor({2, 6, 8}, rng, -1.0, 1.0, false);
  ForwardOptions opts;
  auto a = encoder_layer(tokens, params.layers[0], Tensor<double>(), cfg, 0, opts, nullptr);
  auto b = encoder_layer(tokens, params.layers[0], Tensor<double>::zeros({6, 6}), cfg, 0, opts, nullptr);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-7);
}

TEST_CASE("encoder layer: bias only moves CLS-to-own-region logits") {
  auto cfg = small_config();
  const std::size_t R = 3, n = 6;
  std::mt19937_64 rng(7);
  auto params = init_params<double>(cfg, 2);
  jitter(params, rng);
  for (int trial = 0; trial < 5; ++trial) {
    auto tokens = random_tensor({n, 8}, rng, -1.0, 1.0, false);
    auto b = random_tensor({R}, rng, -2.0, 2.0, false);
    auto d = rab_values(b);
    auto biased = layer_records(tokens, params.layers[0], build_bias_matrix(d, R), cfg);
    auto plain = layer_records(tokens, params.layers[0], Tensor<double>(), cfg);
    REQUIRE(biased.size() == 2);
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double diff = biased[h].pre_softmax[i * n + j] - plain[h].pre_softmax[i * n + j];
          if (i < R && j == R + i) {
            CHECK(diff == doctest::Approx(d[i]).epsilon(1e-12));
          } else {
            CHECK(diff == 0.0);
          }
        }
      }
    }
  }
}

TEST_CASE("encoder layer requires exactly 2R tokens") {
  auto cfg = small_config();
  auto params = init_params<double>(cfg, 3);
  ForwardOptions opts;
  CHECK_THROWS_AS(encoder_layer(Tensor<double>::zeros({5, 8}), params.layers[0], Tensor<double>(), cfg, 0, opts,
                                nullptr),
                  ContractError);
  CHECK_THROWS_AS(encoder_layer(Tensor<double>::zeros({1, 7, 8}), params.layers[0], Tensor<double>(), cfg, 0, opts,
                                nullptr),
                  ContractError);
}

TEST_CASE("forward matches a loop-based reference for every flag combination") {
  for (Variant v : {Variant::sat, Variant::sat_no_tr, Variant::sat_no_rab, Variant::mvmt_vit}) {
    auto cfg = small_config(3, 8);
    cfg.apply_variant(v);
    std::mt19937_64 rng(11);
    auto params = init_params<double>(cfg, 4);
    jitter(params, rng);
    auto z0 = random_tensor({2, 3, 8}, rng, -1.0, 1.0, false);
    ForwardOptions opts;
    opts.record_attention = true;
    auto out = forward_tokens(z0, params, cfg, opts);
    auto ref = testing::reference_forward(as_matrices(z0), params, cfg);
    for (std::size_t r = 0; r < 3; ++r) {
      const std::size_t K = static_cast<std::size_t>(cfg.class_counts[r]);
      REQUIRE(out.logits[r].shape() == Shape{2, K});
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < K; ++k) CHECK(out.logits[r][b * K + k] == doctest::Approx(ref.logits[b][r][k]).epsilon(1e-10));
    }
    for (const auto& rec : out.records) {
      if (rec.sample != 0) continue;
      for (std::size_t i = 0; i < 36; ++i)
        CHECK(rec.pre_softmax[i] == doctest::Approx(ref.scores[rec.layer][rec.head][i / 6][i % 6]).epsilon(1e-10));
    }
  }
}

TEST_CASE("token replay hand trace with silenced residual branches") {
  auto cfg = small_config(3, 8);
  cfg.depth = 3;
  std::mt19937_64 rng(13);
  auto params = init_params<double>(cfg, 5);
  jitter(params, rng);
  for (auto& layer : params.layers) {
    for (auto* t : {&layer.out.weight, &layer.out.bias, &layer.fc2.weight, &layer.fc2.bias})
      for (auto& v : t->data()) v = 0.0;
  }
  auto z0 = random_tensor({2, 3, 8}, rng, -1.0, 1.0, false);
  auto out = forward_tokens(z0, params, cfg);
  REQUIRE(out.cls_features.shape() == Shape{2, 3, 8});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t j = 0; j < 8; ++j) {
        const double expected = params.cls_tokens[r * 8 + j] + 3.0 * z0[(b * 3 + r) * 8 + j];
        CHECK(out.cls_features[(b * 3 + r) * 8 + j] == doctest::Approx(expected).epsilon(1e-12));
      }

  cfg.token_replay = false;
  auto plain = forward_tokens(z0, params, cfg);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 24; ++i) CHECK(plain.cls_features[b * 24 + i] == params.cls_tokens[i]);
}

TEST_CASE("initial RAB scalars reproduce unbiased attention") {
  auto cfg = small_config();
  auto params = init_params<double>(cfg, 6);
  for (double v : params.rab_scalars.data()) CHECK(v == -1.0);
  std::mt19937_64 rng(17);
  auto z0 = random_tensor({3, 3, 8}, rng, -1.0, 1.0, false);
  ForwardOptions opts;
  opts.record_attention = true;
  auto with = forward_tokens(z0, params, cfg, opts);
  auto off_cfg = cfg;
  off_cfg.rab = false;
  auto off_params = params;
  off_params.rab_scalars = Tensor<double>();
  auto without = forward_tokens(z0, off_params, off_cfg, opts);
  REQUIRE(with.records.size() == without.records.size());
  for (std::size_t i = 0; i < with.records.size(); ++i)
    for (std::size_t j = 0; j < 36; ++j)
      CHECK(std::abs(with.records[i].pre_softmax[j] - without.records[i].pre_softmax[j]) <= 1e-7);
}

TEST_CASE("attention records cover every layer, head and sample") {
  auto cfg = small_config();
  auto params = init_params<float>(cfg, 7);
  std::mt19937_64 rng(19);
  auto z0 = cast_tensor<float>(random_tensor({4, 3, 8}, rng, -1.0, 1.0, false));
  ForwardOptions opts;
  opts.record_attention = true;
  auto out = forward_tokens(z0, params, cfg, opts);
  CHECK(out.records.size() == 2 * 2 * 4);
  for (const auto& rec : out.records) {
    REQUIRE(rec.post_softmax.shape() == Shape{6, 6});
    for (std::size_t i = 0; i < 6; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        const double p = rec.post_softmax[i * 6 + j];
        CHECK(p > 0.0);
        total += p;
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
  CHECK(forward_tokens(z0, params, cfg).records.empty());
}

TEST_CASE("logits shapes and parameter contract") {
  SatConfig cfg;
  cfg.image_size = 16;
  auto params = init_params<float>(cfg, 8);
  auto images = Tensor<float>::zeros({3, 5, 1, 16, 16});
  auto out = forward(images, params, cfg);
  REQUIRE(out.logits.size() == 5);
  for (std::size_t r = 0; r < 5; ++r) CHECK(out.logits[r].shape() == Shape{3, static_cast<std::size_t>(cfg.class_counts[r])});
  CHECK(params.heads.size() == 5);
  CHECK(params.cls_tokens.shape() == Shape{5, 32});
  CHECK(params.rab_scalars.shape() == Shape{2, 5});

  cfg.apply_variant(Variant::mvmt_vit);
  auto vit = init_params<float>(cfg, 8);
  CHECK_FALSE(vit.rab_scalars.defined());
  for (const auto& nt : vit.named()) CHECK(nt.name != "rab_scalars");
  CHECK_THROWS_AS(forward_tokens(Tensor<float>::zeros({1, 4, 32}), vit, cfg), ContractError);
  CHECK_THROWS_AS(forward_tokens(Tensor<float>::zeros({1, 5, 32}), params, cfg), ContractError);
}

TEST_CASE("parameter names are unique and stable") {
  SatConfig cfg;
  auto params = init_params<float>(cfg, 9);
  auto named = params.named();
  std::set<std::string> names;
  for (const auto& nt : named) names.insert(nt.name);
  CHECK(names.size() == named.size());
  CHECK(names.count("cls_tokens") == 1);
  CHECK(names.count("rab_scalars") == 1);
  CHECK(names.count("layer1.fc2.weight") == 1);
  CHECK(names.count("head4.bias") == 1);
  CHECK(names.count("final_norm.gain") == 1);
  CHECK(params.tensors().size() == named.size());
}

TEST_CASE("initialisation is seed-deterministic") {
  SatConfig cfg;
  auto a = init_params<float>(cfg, 42).tensors();
  auto b = init_params<float>(cfg, 42).tensors();
  auto c = init_params<float>(cfg, 43).tensors();
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].values() == b[i].values());
    differs = differs || a[i].values() != c[i].values();
  }
  CHECK(differs);
  for (const auto& nt : init_params<float>(cfg, 42).named()) {
    if (nt.name == "cls_tokens" || nt.name.find("query.weight") != std::string::npos) {
      for (float v : nt.tensor.data()) CHECK(std::abs(v) <= 0.04f + 1e-7f);
    }
    if (nt.name.find(".bias") != std::string::npos)
      for (float v : nt.tensor.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("config validation and variants") {
  SatConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.class_counts[2] = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.class_counts.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  struct Case { Variant v; bool replay; bool rab; };
  for (auto c : {Case{Variant::sat, true, true}, Case{Variant::sat_no_tr, false, true},
                 Case{Variant::sat_no_rab, true, false}, Case{Variant::mvmt_vit, false, false}}) {
    SatConfig x;
    x.apply_variant(c.v);
    CHECK(x.token_replay == c.replay);
    CHECK(x.rab == c.rab);
    CHECK(parse_variant(to_string(c.v)) == c.v);
  }
  CHECK_THROWS_AS(parse_variant("sat_plus"), ConfigError);
}

TEST_CASE("predict_scores examples") {
  // one-hot-like at class 3
  std::vector<Tensor<double>> logits{Tensor<double>({1, 5}, {0.0, 0.0, 100.0, 0.0, 0.0})};
  CHECK(predict_scores(logits).at(0, 0) == 3);
  CHECK(predict_scores(logits, ScoreMode::argmax).at(0, 0) == 3);

  // p = (0.2, 0.5, 0.3) -> mu 2.1 -> 2
  logits = {Tensor<double>({1, 3}, {std::log(0.2), std::log(0.5), std::log(0.3)})};
  CHECK(predict_scores(logits).at(0, 0) == 2);

  // uniform over 4 -> mu 2.5 -> 3
  logits = {Tensor<double>({1, 4}, {0.7, 0.7, 0.7, 0.7})};
  CHECK(predict_scores(logits).at(0, 0) == 3);
  CHECK(predict_scores(logits, ScoreMode::argmax).at(0, 0) == 1);

  // multiple regions and rows
  logits = {Tensor<double>({2, 2}, {50.0, 0.0, 0.0, 50.0}), Tensor<double>({2, 3}, {0.0, 0.0, 60.0, 60.0, 0.0, 0.0})};
  auto s = predict_scores(logits);
  CHECK(s.rows == 2);
  CHECK(s.cols == 2);
  CHECK(s.at(0, 0) == 1);
  CHECK(s.at(1, 0) == 2);
  CHECK(s.at(0, 1) == 3);
  CHECK(s.at(1, 1) == 1);
}

TEST_CASE("full model gradients match finite differences") {
  auto cfg = small_config(3, 8);
  std::mt19937_64 rng(23);
  auto params = init_params<double>(cfg, 10);
  jitter(params, rng, 0.2);
  auto images = random_tensor({2, 3, 1, 8, 8}, rng, 0.0, 1.0, false);
  LabelMatrix labels(2, 3);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t r = 0; r < 3; ++r) labels.at(b, r) = 1 + static_cast<int>((b + 2 * r) % static_cast<std::size_t>(cfg.class_counts[r]));
  auto result = testing::gradcheck(
      [&] { return total_loss(forward(images, params, cfg).logits, labels, LossWeights{}).total; }, params.tensors());
  CHECK(result.checked == [&] { std::size_t n = 0; for (auto& t : params.tensors()) n += t.size(); return n; }());
  CHECK(result.max_rel_err < 1e-4);
}
