#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace transunet {

enum class EncoderKind { ViT, Hybrid };
enum class DecoderKind { None, Cup };
enum class ScalePreset { Tiny, Base, Large, Custom };

std::string_view to_string(EncoderKind kind);
std::string_view to_string(DecoderKind kind);
std::string_view to_string(ScalePreset preset);
EncoderKind parse_encoder_kind(std::string_view text);
DecoderKind parse_decoder_kind(std::string_view text);
ScalePreset parse_scale_preset(std::string_view text);

// Full architecture description. Defaults are the desk-scale TransUNet:
// hybrid encoder, cascaded upsampler with three skips, Tiny transformer,
// 64x64 single-channel input, four classes.
struct ModelConfig {
  EncoderKind encoder = EncoderKind::Hybrid;
  DecoderKind decoder = DecoderKind::Cup;
  std::size_t skip_count = 3;
  std::size_t patch_size = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 1;
  std::size_t classes = 4;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_dim = 128;
  ScalePreset scale = ScalePreset::Tiny;
  std::array<std::size_t, 4> backbone_widths{16, 32, 64, 128};
  // Output widths of the upsampling blocks at 1/8, 1/4, 1/2, 1/1 for P=16.
  std::vector<std::size_t> decoder_widths{256, 128, 64, 16};

  // Sets hidden/layers/mlp_dim/heads from a named preset.
  void apply_preset(ScalePreset preset);

  std::size_t grid_height() const { return height / patch_size; }
  std::size_t grid_width() const { return width / patch_size; }
  std::size_t tokens() const { return grid_height() * grid_width(); }
  // Number of 2x blocks needed to climb from the token grid to full size.
  std::size_t cup_block_count() const;
  // Block output widths for cup_block_count() blocks.
  std::vector<std::size_t> cup_widths() const;
  // Scale denominators (8, 4, 2) of the skip features the decoder consumes.
  std::vector<std::size_t> skip_scales() const;

  // Throws ConfigError naming the offending field.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  // Keys are the same as to_map(); missing keys keep their defaults.
  static ModelConfig from_map(const std::map<std::string, std::string>& values);

  bool operator==(const ModelConfig&) const = default;
};

// Encoder/decoder pairings of the variant comparison:
// "vit-none", "vit-cup", "r50-vit-cup" (hybrid, no skips), "transunet".
ModelConfig variant_config(std::string_view name);
std::vector<std::string> variant_names();

}  // namespace transunet
