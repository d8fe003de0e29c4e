#include "transunet/model_config.hpp"

#include <charconv>
#include <sstream>

#include "transunet/errors.hpp"

namespace transunet {

namespace {

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("model." + key + ": expected a non-negative integer, got '" + text + "'");
  }
  return value;
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_size(key, item));
  return out;
}

template <typename Range>
std::string join(const Range& values) {
  std::string out;
  for (auto v : values) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw ConfigError("model." + field + ": " + why);
}

}  // namespace

std::string_view to_string(EncoderKind kind) {
  return kind == EncoderKind::ViT ? "vit" : "hybrid";
}

std::string_view to_string(DecoderKind kind) {
  return kind == DecoderKind::None ? "none" : "cup";
}

std::string_view to_string(ScalePreset preset) {
  switch (preset) {
    case ScalePreset::Tiny: return "tiny";
    case ScalePreset::Base: return "base";
    case ScalePreset::Large: return "large";
    case ScalePreset::Custom: break;
  }
  return "custom";
}

EncoderKind parse_encoder_kind(std::string_view text) {
  if (text == "vit") return EncoderKind::ViT;
  if (text == "hybrid" || text == "r50-vit") return EncoderKind::Hybrid;
  throw ConfigError("model.encoder: unknown encoder kind '" + std::string(text) + "'");
}

DecoderKind parse_decoder_kind(std::string_view text) {
  if (text == "none") return DecoderKind::None;
  if (text == "cup") return DecoderKind::Cup;
  throw ConfigError("model.decoder: unknown decoder kind '" + std::string(text) + "'");
}

ScalePreset parse_scale_preset(std::string_view text) {
  if (text == "tiny") return ScalePreset::Tiny;
  if (text == "base") return ScalePreset::Base;
  if (text == "large") return ScalePreset::Large;
  if (text == "custom") return ScalePreset::Custom;
  throw ConfigError("model.scale: unknown preset '" + std::string(text) + "'");
}

void ModelConfig::apply_preset(ScalePreset preset) {
  scale = preset;
  switch (preset) {
    case ScalePreset::Tiny:
      hidden = 64, layers = 2, mlp_dim = 128, heads = 4;
      break;
    case ScalePreset::Base:
      hidden = 768, layers = 12, mlp_dim = 3072, heads = 12;
      break;
    case ScalePreset::Large:
      hidden = 1024, layers = 24, mlp_dim = 4096, heads = 16;
      break;
    case ScalePreset::Custom:
      break;
  }
}

std::size_t ModelConfig::cup_block_count() const {
  std::size_t blocks = 0;
  for (std::size_t p = patch_size; p > 1; p >>= 1) ++blocks;
  return blocks;
}

std::vector<std::size_t> ModelConfig::cup_widths() const {
  const std::size_t n = cup_block_count();
  std::vector<std::size_t> widths = decoder_widths;
  while (widths.size() < n) widths.insert(widths.begin(), widths.front() * 2);
  return {widths.end() - static_cast<std::ptrdiff_t>(n), widths.end()};
}

std::vector<std::size_t> ModelConfig::skip_scales() const {
  if (skip_count == 3) return {8, 4, 2};
  if (skip_count == 1) return {4};
  return {};
}

void ModelConfig::validate() const {
  if (channels == 0) invalid("channels", "must be positive");
  if (classes < 2) invalid("classes", "need at least two classes (background + one)");
  if (classes > 255) invalid("classes", "at most 255 classes are supported");
  if (hidden == 0) invalid("hidden", "must be positive");
  if (heads == 0) invalid("heads", "must be positive");
  if (hidden % heads != 0) {
    invalid("heads", std::to_string(heads) + " heads do not divide hidden size " +
                         std::to_string(hidden));
  }
  if (mlp_dim == 0) invalid("mlp_dim", "must be positive");
  if (patch_size == 0) invalid("patch_size", "must be positive");
  if (height % patch_size != 0 || width % patch_size != 0) {
    invalid("patch_size", "input " + std::to_string(height) + "x" + std::to_string(width) +
                              " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (encoder == EncoderKind::Hybrid) {
    if (patch_size % 16 != 0) {
      invalid("patch_size", "hybrid encoder tokenizes the 1/16 feature map, so the patch size "
                            "must be a multiple of 16");
    }
    for (std::size_t i = 0; i < backbone_widths.size(); ++i)
      if (backbone_widths[i] == 0) invalid("backbone_widths", "widths must be positive");
  }
  if (decoder == DecoderKind::Cup) {
    if (!is_power_of_two(patch_size) || patch_size < 2) {
      invalid("patch_size", "cascaded upsampler needs a power-of-two patch size >= 2");
    }
    if (decoder_widths.empty()) invalid("decoder_widths", "must not be empty");
    for (auto w : decoder_widths)
      if (w == 0) invalid("decoder_widths", "widths must be positive");
  }
  if (skip_count != 0 && skip_count != 1 && skip_count != 3) {
    invalid("skips", "skip count must be 0, 1 or 3, got " + std::to_string(skip_count));
  }
  if (skip_count > 0 && encoder != EncoderKind::Hybrid) {
    invalid("skips", "skip-connections require the hybrid encoder");
  }
  if (skip_count > 0 && decoder != DecoderKind::Cup) {
    invalid("skips", "skip-connections require the cascaded upsampler");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"encoder", std::string(to_string(encoder))},
      {"decoder", std::string(to_string(decoder))},
      {"skips", std::to_string(skip_count)},
      {"patch_size", std::to_string(patch_size)},
      {"height", std::to_string(height)},
      {"width", std::to_string(width)},
      {"channels", std::to_string(channels)},
      {"classes", std::to_string(classes)},
      {"hidden", std::to_string(hidden)},
      {"layers", std::to_string(layers)},
      {"heads", std::to_string(heads)},
      {"mlp_dim", std::to_string(mlp_dim)},
      {"scale", std::string(to_string(scale))},
      {"backbone_widths", join(backbone_widths)},
      {"decoder_widths", join(decoder_widths)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig cfg;
  // The preset goes first so explicit sizes override it.
  if (auto it = values.find("scale"); it != values.end()) {
    cfg.apply_preset(parse_scale_preset(it->second));
  }
  for (const auto& [key, value] : values) {
    if (key == "scale") continue;
    if (key == "encoder") {
      cfg.encoder = parse_encoder_kind(value);
    } else if (key == "decoder") {
      cfg.decoder = parse_decoder_kind(value);
    } else if (key == "skips") {
      cfg.skip_count = parse_size(key, value);
    } else if (key == "patch_size") {
      cfg.patch_size = parse_size(key, value);
    } else if (key == "resolution") {
      cfg.height = cfg.width = parse_size(key, value);
    } else if (key == "height") {
      cfg.height = parse_size(key, value);
    } else if (key == "width") {
      cfg.width = parse_size(key, value);
    } else if (key == "channels") {
      cfg.channels = parse_size(key, value);
    } else if (key == "classes") {
      cfg.classes = parse_size(key, value);
    } else if (key == "hidden") {
      cfg.hidden = parse_size(key, value);
    } else if (key == "layers") {
      cfg.layers = parse_size(key, value);
    } else if (key == "heads") {
      cfg.heads = parse_size(key, value);
    } else if (key == "mlp_dim") {
      cfg.mlp_dim = parse_size(key, value);
    } else if (key == "backbone_widths") {
      auto list = parse_size_list(key, value);
      if (list.size() != 4) invalid(key, "expected four comma-separated widths");
      std::copy(list.begin(), list.end(), cfg.backbone_widths.begin());
    } else if (key == "decoder_widths") {
      cfg.decoder_widths = parse_size_list(key, value);
    } else {
      throw ConfigError("model." + key + ": unknown model setting");
    }
  }
  return cfg;
}

ModelConfig variant_config(std::string_view name) {
  ModelConfig cfg;
  if (name == "vit-none") {
    cfg.encoder = EncoderKind::ViT;
    cfg.decoder = DecoderKind::None;
    cfg.skip_count = 0;
  } else if (name == "vit-cup") {
    cfg.encoder = EncoderKind::ViT;
    cfg.decoder = DecoderKind::Cup;
    cfg.skip_count = 0;
  } else if (name == "r50-vit-cup") {
    cfg.encoder = EncoderKind::Hybrid;
    cfg.decoder = DecoderKind::Cup;
    cfg.skip_count = 0;
  } else if (name == "transunet") {
    cfg.encoder = EncoderKind::Hybrid;
    cfg.decoder = DecoderKind::Cup;
    cfg.skip_count = 3;
  } else {
    throw ConfigError("unknown model variant '" + std::string(name) + "'");
  }
  return cfg;
}

std::vector<std::string> variant_names() {
  return {"vit-none", "vit-cup", "r50-vit-cup", "transunet"};
}

}  // namespace transunet
