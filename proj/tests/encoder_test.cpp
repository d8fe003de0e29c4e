#include <doctest.h>

#include <numeric>

#include "gradient_suite.hpp"
#include "transunet/encoder.hpp"

using namespace transunet;
using namespace transunet::testing;

namespace {

ModelConfig vit_config(std::size_t size, std::size_t patch) {
  ModelConfig c;
  c.encoder = EncoderKind::ViT;
  c.decoder = DecoderKind::None;
  c.skip_count = 0;
  c.height = c.width = size;
  c.patch_size = patch;
  return c;
}

template <typename T>
void zero_out(Linear<T>& l) {
  for (auto& v : l.weight.data()) v = T(0);
  for (auto& v : l.bias.data()) v = T(0);
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t d = x.size(1);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < perm.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[perm[r] * d + c];
  return out;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("sequence length law") {
  for (auto [p, n] : {std::pair<std::size_t, std::size_t>{16, 196}, {32, 49}, {8, 784}}) {
    CHECK(vit_config(224, p).tokens() == n);
    CHECK(sequentialize(Tensor<float>({1, 224, 224}), p).shape() == Shape{n, p * p});
  }
  for (std::size_t h : {16, 32, 48})
    for (std::size_t w : {16, 64})
      for (std::size_t p : {1, 2, 4, 8, 16})
        CHECK(sequentialize(Tensor<float>({3, h, w}), p).size(0) == h * w / (p * p));
  CHECK_THROWS_AS(sequentialize(Tensor<float>({1, 30, 32}), 16), ConfigError);
}

TEST_CASE("sequentialize ordering and inverse") {
  Rng rng(4);
  auto x = random_tensor<double>({2, 8, 12}, rng, 1.0, false);
  const std::size_t p = 4;
  auto s = sequentialize(x, p);
  CHECK(s.shape() == Shape{6, 32});
  // Patch i sits at grid (i / 3, i % 3); each row is (c, py, px).
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px) {
          const std::size_t y = (i / 3) * p + py, xx = (i % 3) * p + px;
          CHECK(s[i * 32 + (c * p + py) * p + px] == x[(c * 8 + y) * 12 + xx]);
        }
  auto back = unsequentialize(s, 2, 8, 12, p);
  CHECK(back.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
}

TEST_CASE("embedding") {
  const std::size_t n = 4, in = 3, d = 5;
  Rng rng(6);
  auto patches = random_tensor<double>({n, in}, rng, 1.0, false);

  PatchEmbedding<double> id{Tensor<double>({in, d}), Tensor<double>({n, d}), 1, n};
  for (std::size_t i = 0; i < in; ++i) id.projection[i * d + i] = 1.0;
  auto z = embed(patches, id);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) CHECK(z[r * d + c] == (c < in ? patches[r * in + c] : 0.0));

  PatchEmbedding<double> pe{random_tensor<double>({in, d}, rng), random_tensor<double>({n, d}, rng),
                            1, n};
  auto z0 = embed(Tensor<double>({n, in}), pe);
  for (std::size_t i = 0; i < z0.numel(); ++i) CHECK(z0[i] == pe.position[i]);

  auto total = sum(embed(patches, pe));
  backward(total);
  auto nonzero = [](const Tensor<double>& t) {
    return std::any_of(t.grad().begin(), t.grad().end(), [](double g) { return g != 0.0; });
  };
  CHECK(nonzero(pe.projection));
  CHECK(nonzero(pe.position));

  CHECK_THROWS_AS(embed(Tensor<double>({n + 1, in}), pe), ConfigError);
  CHECK_THROWS_AS(embed(Tensor<double>({n, in + 1}), pe), ConfigError);
}

TEST_CASE("msa block") {
  Rng rng(10);
  auto layer = TransformerLayer<float>::create(16, 4, 32, rng);
  auto z = random_tensor<float>({6, 16}, rng, 1.0, false);

  SUBCASE("attention rows sum to one") {
    std::vector<Tensor<float>> attn;
    msa_block(z, layer, &attn);
    REQUIRE(attn.size() == 4);
    for (const auto& a : attn) {
      CHECK(a.shape() == Shape{6, 6});
      for (std::size_t r = 0; r < 6; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 6; ++c) s += a[r * 6 + c];
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }

  SUBCASE("zero projections give the identity") {
    zero_out(layer.query);
    zero_out(layer.key);
    zero_out(layer.value);
    zero_out(layer.out);
    auto y = msa_block(z, layer);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(y[i] == z[i]);
  }

  SUBCASE("single token") {
    auto one = random_tensor<float>({1, 16}, rng, 1.0, false);
    std::vector<Tensor<float>> attn;
    auto y = msa_block(one, layer, &attn);
    for (const auto& a : attn) CHECK(a[0] == 1.0f);
    auto expected = add(layer.out(layer.value(layer.attn_norm(one))), one);
    for (std::size_t i = 0; i < 16; ++i) CHECK(y[i] == doctest::Approx(expected[i]).epsilon(1e-6));
  }

  SUBCASE("row permutation commutes") {
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    auto a = permute_rows(msa_block(z, layer), perm);
    auto b = msa_block(permute_rows(z, perm), layer);
    CHECK(max_abs_diff(a, b) < 1e-5);
  }
}

TEST_CASE("mlp block") {
  Rng rng(12);
  for (std::size_t dm : {1, 7, 64}) {
    auto layer = TransformerLayer<float>::create(8, 2, dm, rng);
    auto z = random_tensor<float>({5, 8}, rng, 1.0, false);
    CHECK(mlp_block(z, layer).shape() == Shape{5, 8});
    zero_out(layer.fc1);
    zero_out(layer.fc2);
    auto y = mlp_block(z, layer);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(y[i] == z[i]);
  }
  Rng init(13);
  auto layer = TransformerLayer<double>::create(6, 2, 10, init);
  auto z = random_tensor<double>({4, 6}, init);
  auto r = check_gradients([=] { return weighted_sum(mlp_block(z, layer)); },
                           {z, layer.fc1.weight, layer.fc1.bias, layer.fc2.weight, layer.fc2.bias},
                           init);
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.unprobed == 0);
}

TEST_CASE("transformer stack properties") {
  Rng rng(20);
  std::vector<TransformerLayer<float>> layers;
  for (int i = 0; i < 3; ++i) layers.push_back(TransformerLayer<float>::create(16, 4, 32, rng));
  auto norm = LayerNorm<float>::create(16);
  auto z0 = random_tensor<float>({7, 16}, rng, 1.0, false);

  SUBCASE("empty stack is the final norm") {
    auto y = transformer_stack(z0, {}, norm);
    auto expected = layer_norm(z0, norm.gain, norm.bias);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == expected[i]);
  }

  SUBCASE("zero weights reduce the stack to the final norm") {
    for (auto& l : layers) {
      zero_out(l.query);
      zero_out(l.key);
      zero_out(l.value);
      zero_out(l.out);
      zero_out(l.fc1);
      zero_out(l.fc2);
    }
    auto y = transformer_stack(z0, layers, norm);
    auto expected = layer_norm(z0, norm.gain, norm.bias);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == expected[i]);
  }

  SUBCASE("permutation equivariance") {
    const std::vector<std::size_t> perm{6, 2, 0, 4, 1, 5, 3};
    auto a = permute_rows(transformer_stack(z0, layers, norm), perm);
    auto b = transformer_stack(permute_rows(z0, perm), layers, norm);
    CHECK(max_abs_diff(a, b) < 1e-5);
  }
}

TEST_CASE("position embedding breaks permutation symmetry") {
  auto cfg = vit_config(32, 8);
  Rng rng(30);
  Encoder<float> enc(cfg, rng);
  for (auto& v : enc.embedding().position.data()) v = static_cast<float>(rng.normal());
  auto image = random_tensor<float>({1, 32, 32}, rng, 1.0, false);
  auto patches = sequentialize(image, 8);
  const std::vector<std::size_t> perm{1, 0, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  auto plain = transformer_stack(embed(patches, enc.embedding()), enc.layers(), enc.final_norm());
  auto swapped = transformer_stack(embed(permute_rows(patches, perm), enc.embedding()),
                                   enc.layers(), enc.final_norm());
  CHECK(max_abs_diff(permute_rows(plain, perm), swapped) > 1e-3);
}

TEST_CASE("vit encoder") {
  SUBCASE("no layers") {
    auto cfg = vit_config(32, 16);
    cfg.layers = 0;
    Rng rng(1);
    Encoder<double> enc(cfg, rng);
    auto image = random_tensor<double>({1, 32, 32}, rng, 1.0, false);
    auto out = enc(image);
    auto expected = layer_norm(embed(sequentialize(image, 16), enc.embedding()),
                               enc.final_norm().gain, enc.final_norm().bias);
    for (std::size_t i = 0; i < expected.numel(); ++i) CHECK(out.tokens[i] == expected[i]);
    CHECK(out.skips.empty());
  }

  SUBCASE("deterministic") {
    auto cfg = vit_config(64, 16);
    Rng a(3), b(3);
    Encoder<float> e1(cfg, a), e2(cfg, b);
    Rng img(4);
    auto image = random_tensor<float>({1, 64, 64}, img, 1.0, false);
    auto o1 = e1(image), o2 = e2(image);
    for (std::size_t i = 0; i < o1.tokens.numel(); ++i) CHECK(o1.tokens[i] == o2.tokens[i]);
  }

  SUBCASE("base at 224 emits 196 x 768") {
    auto cfg = vit_config(224, 16);
    cfg.apply_preset(ScalePreset::Base);
    Rng rng(2);
    Encoder<float> enc(cfg, rng);
    NoGradGuard guard;
    auto out = enc(Tensor<float>::full({1, 224, 224}, 0.5f));
    CHECK(out.tokens.shape() == Shape{196, 768});
    CHECK(std::all_of(out.tokens.data().begin(), out.tokens.data().end(),
                      [](float v) { return std::isfinite(v); }));
  }
}

TEST_CASE("vit base parameter count has a closed form") {
  auto cfg = vit_config(224, 16);
  cfg.apply_preset(ScalePreset::Base);
  Rng rng(1);
  Encoder<float> enc(cfg, rng);
  ParameterList<float> params;
  enc.collect("encoder", params);
  std::size_t counted = 0;
  for (const auto& p : params) counted += p.tensor.numel();
  const std::size_t P = 16, C = 1, D = 768, N = 196, L = 12, Dm = 3072;
  const std::size_t expected =
      P * P * C * D + N * D + L * (4 * D * D + 4 * D + 4 * D + 2 * D * Dm + Dm + D) + 2 * D;
  CHECK(counted == expected);
}

TEST_CASE("hybrid encoder") {
  SUBCASE("tiny 64") {
    ModelConfig cfg;
    Rng rng(5);
    Encoder<float> enc(cfg, rng);
    Rng img(6);
    auto out = enc(random_tensor<float>({1, 64, 64}, img, 1.0, false));
    CHECK(out.tokens.shape() == Shape{16, 64});
    CHECK(out.grid_height == 4);
    CHECK(out.grid_width == 4);
    REQUIRE(out.skips.size() == 3);
    CHECK(out.skips[0].shape() == Shape{16, 32, 32});
    CHECK(out.skips[1].shape() == Shape{32, 16, 16});
    CHECK(out.skips[2].shape() == Shape{64, 8, 8});
  }

  SUBCASE("224 gives skips at 112, 56, 28 and 196 tokens") {
    ModelConfig cfg;
    cfg.height = cfg.width = 224;
    Rng rng(5);
    Encoder<float> enc(cfg, rng);
    NoGradGuard guard;
    auto out = enc(Tensor<float>::full({1, 224, 224}, 0.1f));
    CHECK(out.tokens.shape() == Shape{196, 64});
    CHECK(out.skips[0].size(1) == 112);
    CHECK(out.skips[1].size(1) == 56);
    CHECK(out.skips[2].size(1) == 28);
  }

  SUBCASE("gradient reaches the stem") {
    ModelConfig cfg;
    Rng rng(7);
    Encoder<double> enc(cfg, rng);
    auto image = random_tensor<double>({1, 64, 64}, rng, 1.0, false);
    auto loss = weighted_sum(enc(image).tokens);
    backward(loss);
    const auto& stem = enc.backbone()->stem.weight;
    REQUIRE(stem.has_grad());
    CHECK(std::any_of(stem.grad().begin(), stem.grad().end(), [](double g) { return g != 0.0; }));
  }

  SUBCASE("wrong channel count") {
    ModelConfig cfg;
    Rng rng(7);
    Encoder<float> enc(cfg, rng);
    CHECK_THROWS_AS(enc(Tensor<float>({2, 64, 64})), DimensionError);
  }
}

TEST_CASE("backbone taps at 1/2, 1/4, 1/8, 1/16") {
  Rng rng(8);
  auto net = CnnBackbone<float>::create(2, {4, 8, 8, 16}, rng);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {64, 96}, {16, 48}}) {
    auto f = net(Tensor<float>::full({2, h, w}, 1.0f));
    for (std::size_t s = 0; s < 4; ++s) {
      CHECK(f[s].size(1) == h >> (s + 1));
      CHECK(f[s].size(2) == w >> (s + 1));
    }
  }
}

TEST_CASE("residual block with zero final gain is an identity on its shortcut") {
  Rng rng(9);
  auto x = relu(random_tensor<float>({8, 6, 6}, rng, 1.0, false));
  auto same = ResidualBlock<float>::create(8, 8, 1, rng);
  auto y = same(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  auto down = ResidualBlock<float>::create(8, 16, 2, rng);
  auto shortcut = relu((*down.projection_norm)((*down.projection)(x)));
  auto yd = down(x);
  CHECK(yd.shape() == Shape{16, 3, 3});
  for (std::size_t i = 0; i < yd.numel(); ++i) CHECK(yd[i] == shortcut[i]);
}

TEST_CASE("position table resizing") {
  Rng rng(14);
  auto pos = random_tensor<double>({12, 5}, rng, 1.0, false);
  auto same = resize_position_embedding(pos, 3, 4, 3, 4);
  for (std::size_t i = 0; i < pos.numel(); ++i) CHECK(same[i] == doctest::Approx(pos[i]).epsilon(1e-14));
  auto flat = Tensor<double>::full({4, 3}, 0.25);
  auto big = resize_position_embedding(flat, 2, 2, 5, 7);
  CHECK(big.shape() == Shape{35, 3});
  for (auto v : big.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_THROWS_AS(resize_position_embedding(pos, 3, 3, 4, 4), DimensionError);
}
