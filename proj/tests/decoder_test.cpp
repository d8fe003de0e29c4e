#include <doctest.h>

#include "support.hpp"
#include "transunet/decoder.hpp"
#include "transunet/model.hpp"

using namespace transunet;
using namespace transunet::testing;

namespace {

ModelConfig hybrid_config(std::size_t size, std::size_t skips, std::size_t hidden = 64) {
  ModelConfig c;
  c.height = c.width = size;
  c.skip_count = skips;
  c.hidden = hidden;
  return c;
}

template <typename T>
void randomize_head(Decoder<T>& d, Rng& rng) {
  for (auto& v : d.head().weight.data()) v = static_cast<T>(0.3 * rng.normal());
}

std::vector<Tensor<float>> encoder_skips(const ModelConfig& c, Rng& rng) {
  std::vector<Tensor<float>> out;
  for (std::size_t level = 0; level < 3; ++level) {
    const std::size_t s = std::size_t{2} << level;
    out.push_back(random_tensor<float>({c.backbone_widths[level], c.height / s, c.width / s}, rng,
                                       1.0, false));
  }
  return out;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("reshape hidden") {
  CHECK(reshape_hidden(Tensor<float>({196, 768}), 14, 14).shape() == Shape{768, 14, 14});
  CHECK(reshape_hidden(Tensor<float>({16, 64}), 4, 4).shape() == Shape{64, 4, 4});
  Rng rng(1);
  auto tokens = random_tensor<double>({6, 5}, rng, 1.0, false);
  auto grid = reshape_hidden(tokens, 2, 3);
  for (std::size_t n = 0; n < 6; ++n)
    for (std::size_t d = 0; d < 5; ++d) CHECK(grid[(d * 2 + n / 3) * 3 + n % 3] == tokens[n * 5 + d]);
  // Flattening the grid back to tokens is the identity.
  auto flat = transpose(reshape(grid, {5, 6}));
  for (std::size_t i = 0; i < tokens.numel(); ++i) CHECK(flat[i] == tokens[i]);
  CHECK_THROWS_AS(reshape_hidden(Tensor<float>({15, 8}), 4, 4), ContractError);
}

TEST_CASE("naive head") {
  Rng rng(2);
  auto head = Conv2d<float>::create(768, 9, 1, 1, true, rng);
  auto out = naive_head(random_tensor<float>({196, 768}, rng, 1.0, false), head, 14, 14, 224, 224);
  CHECK(out.shape() == Shape{9, 224, 224});

  auto small = Conv2d<float>::create(8, 3, 1, 1, true, rng);
  Tensor<float> constant({16, 8});
  for (std::size_t n = 0; n < 16; ++n)
    for (std::size_t d = 0; d < 8; ++d) constant[n * 8 + d] = 0.1f * static_cast<float>(d);
  auto logits = naive_head(constant, small, 4, 4, 32, 32);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 32 * 32; ++i) CHECK(logits[k * 1024 + i] == logits[k * 1024]);

  auto cfg = hybrid_config(64, 0);
  cfg.encoder = EncoderKind::ViT;
  cfg.decoder = DecoderKind::None;
  Decoder<double> dec(cfg, rng);
  auto tokens = random_tensor<double>({16, 64}, rng, 1.0, false);
  auto loss = weighted_sum(dec(tokens, 4, 4, {}));
  backward(loss);
  const auto& w = dec.head().weight;
  REQUIRE(w.has_grad());
  CHECK(std::any_of(w.grad().begin(), w.grad().end(), [](double g) { return g != 0.0; }));
}

TEST_CASE("cup block doubles extents") {
  Rng rng(3);
  CupBlock<float> block{Conv2d<float>::create(6, 4, 3, 1, false, rng), GroupNorm<float>::create(4)};
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 5}, {14, 14}}) {
    auto y = block(random_tensor<float>({6, h, w}, rng, 1.0, false), nullptr);
    CHECK(y.shape() == Shape{4, 2 * h, 2 * w});
  }
}

TEST_CASE("cascaded upsampler at 224") {
  auto cfg = hybrid_config(224, 3, 768);
  cfg.heads = 12;
  cfg.classes = 9;
  Rng rng(4);
  Decoder<float> dec(cfg, rng);
  CHECK(dec.blocks().size() == 4);
  auto skips = encoder_skips(cfg, rng);
  NoGradGuard guard;
  auto out = dec(random_tensor<float>({196, 768}, rng, 1.0, false), 14, 14, skips);
  CHECK(out.shape() == Shape{9, 224, 224});
}

TEST_CASE("block count follows the patch size") {
  for (auto [p, n] : {std::pair<std::size_t, std::size_t>{8, 3}, {16, 4}, {32, 5}}) {
    auto cfg = hybrid_config(64, 0);
    cfg.encoder = EncoderKind::ViT;
    cfg.patch_size = p;
    CHECK(cfg.cup_block_count() == n);
    Rng rng(5);
    Decoder<float> dec(cfg, rng);
    CHECK(dec.blocks().size() == n);
    const std::size_t g = 64 / p;
    NoGradGuard guard;
    CHECK(dec(Tensor<float>({g * g, 64}), g, g, {}).shape() == Shape{4, 64, 64});
  }
}

TEST_CASE("zero skips match a decoder whose skip columns are zero") {
  auto with = hybrid_config(32, 3);
  auto without = hybrid_config(32, 0);
  Rng rng(6);
  Decoder<float> d3(with, rng);
  Decoder<float> d0(without, rng);
  randomize_head(d3, rng);
  // Copy the upsampled-path columns of every conv into the skip-free decoder.
  for (std::size_t b = 0; b < 4; ++b) {
    const auto& src = d3.blocks()[b].conv.weight;
    auto& dst = d0.blocks()[b].conv.weight;
    const std::size_t out = src.size(0), in_src = src.size(1), in_dst = dst.size(1);
    REQUIRE(in_src == in_dst + d3.blocks()[b].skip_channels);
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < in_dst * 9; ++i) dst[o * in_dst * 9 + i] = src[o * in_src * 9 + i];
  }
  std::copy(d3.head().weight.data().begin(), d3.head().weight.data().end(),
            d0.head().weight.data().begin());
  auto tokens = random_tensor<float>({4, 64}, rng, 1.0, false);
  auto zero_skips = encoder_skips(with, rng);
  for (auto& s : zero_skips)
    for (auto& v : s.data()) v = 0.0f;
  auto a = d3(tokens, 2, 2, zero_skips);
  auto b = d0(tokens, 2, 2, {});
  CHECK(max_abs_diff(a, b) < 1e-5);
}

TEST_CASE("skip influence") {
  Rng rng(7);
  auto tokens = random_tensor<float>({4, 64}, rng, 1.0, false);

  SUBCASE("three skips are all read") {
    auto cfg = hybrid_config(32, 3);
    Decoder<float> dec(cfg, rng);
    randomize_head(dec, rng);
    auto skips = encoder_skips(cfg, rng);
    auto base = dec(tokens, 2, 2, skips);
    for (std::size_t level = 0; level < 3; ++level) {
      auto changed = skips;
      changed[level] = random_tensor<float>(skips[level].shape(), rng, 1.0, false);
      CHECK(max_abs_diff(base, dec(tokens, 2, 2, changed)) > 1e-4);
    }
  }

  SUBCASE("one skip reads only the quarter scale") {
    auto cfg = hybrid_config(32, 1);
    Decoder<float> dec(cfg, rng);
    randomize_head(dec, rng);
    auto skips = encoder_skips(cfg, rng);
    auto base = dec(tokens, 2, 2, skips);
    for (std::size_t level = 0; level < 3; ++level) {
      auto changed = skips;
      changed[level] = random_tensor<float>(skips[level].shape(), rng, 1.0, false);
      const double diff = max_abs_diff(base, dec(tokens, 2, 2, changed));
      if (level == 1) {
        CHECK(diff > 1e-4);
      } else {
        CHECK(diff == 0.0);
      }
    }
  }

  SUBCASE("no skips reads none") {
    auto cfg = hybrid_config(32, 0);
    Decoder<float> dec(cfg, rng);
    randomize_head(dec, rng);
    auto base = dec(tokens, 2, 2, {});
    const std::vector<Tensor<float>> junk{Tensor<float>({1, 1, 1}), Tensor<float>({2, 2, 2}),
                                          Tensor<float>({3, 3, 3})};
    CHECK(max_abs_diff(base, dec(tokens, 2, 2, junk)) == 0.0);
  }
}

TEST_CASE("skip shape mismatch names the scale") {
  auto cfg = hybrid_config(32, 3);
  Rng rng(8);
  Decoder<float> dec(cfg, rng);
  auto skips = encoder_skips(cfg, rng);
  skips[1] = Tensor<float>({cfg.backbone_widths[1], 4, 4});
  try {
    dec(Tensor<float>({4, 64}), 2, 2, skips);
    FAIL("expected a configuration error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("1/4") != std::string::npos);
  }
  CHECK_THROWS_AS(dec(Tensor<float>({4, 64}), 2, 2, {}), ConfigError);
  const auto selected = dec.select_skips(encoder_skips(cfg, rng));
  CHECK_THROWS_AS(cup_decode<float>(Tensor<float>({4, 64}), 2, 2,
                                    std::span(selected).first(2), dec.blocks(), dec.head()),
                  ConfigError);
}

TEST_CASE("every variant emits K x H x W logits") {
  for (const auto& name : variant_names()) {
    INFO(name);
    auto cfg = variant_config(name);
    TransUNet<float> model(cfg, 9);
    Rng rng(10);
    NoGradGuard guard;
    auto logits = model(random_tensor<float>({1, cfg.height, cfg.width}, rng, 1.0, false));
    CHECK(logits.shape() == Shape{cfg.classes, cfg.height, cfg.width});
  }
}

TEST_CASE("zero head gives uniform first predictions") {
  TransUNet<float> model(ModelConfig{}, 11);
  Rng rng(12);
  NoGradGuard guard;
  auto logits = model(random_tensor<float>({1, 64, 64}, rng, 1.0, false));
  for (auto v : logits.data()) CHECK(v == 0.0f);
}
