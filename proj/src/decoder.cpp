#include "transunet/decoder.hpp"

#include <algorithm>

namespace transunet {

template <typename T>
Tensor<T> reshape_hidden(const Tensor<T>& tokens, std::size_t grid_height,
                         std::size_t grid_width) {
  if (tokens.rank() != 2 || tokens.size(0) != grid_height * grid_width) {
    throw ContractError("reshape_hidden: " + shape_string(tokens.shape()) +
                        " is not a sequence over a " + std::to_string(grid_height) + "x" +
                        std::to_string(grid_width) + " token grid");
  }
  return reshape(transpose(tokens), {tokens.size(1), grid_height, grid_width});
}

template <typename T>
Tensor<T> CupBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>* skip) const {
  auto up = upsample2x(x);
  if (skip) {
    const std::array<Tensor<T>, 2> parts{up, *skip};
    up = concat_channels<T>(parts);
  }
  return relu(norm(conv(up)));
}

template <typename T>
void CupBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  conv.collect(prefix + ".conv", out);
  norm.collect(prefix + ".norm", out);
}

template <typename T>
Decoder<T>::Decoder(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  std::size_t head_in = config_.hidden;
  if (config_.decoder == DecoderKind::Cup) {
    const auto widths = config_.cup_widths();
    const auto skip_scales = config_.skip_scales();
    const std::size_t n = widths.size();
    std::size_t in = config_.hidden;
    for (std::size_t b = 0; b < n; ++b) {
      CupBlock<T> block;
      block.output_scale = std::size_t{1} << (n - 1 - b);
      if (std::find(skip_scales.begin(), skip_scales.end(), block.output_scale) !=
          skip_scales.end()) {
        // f1/2, f1/4, f1/8 carry backbone widths 0, 1, 2
        const std::size_t level = block.output_scale == 2 ? 0 : block.output_scale == 4 ? 1 : 2;
        block.skip_channels = config_.backbone_widths[level];
      }
      block.conv = Conv2d<T>::create(in + block.skip_channels, widths[b], 3, 1, false, rng);
      block.norm = GroupNorm<T>::create(widths[b]);
      blocks_.push_back(std::move(block));
      in = widths[b];
    }
    head_in = in;
  }
  // Zero head: the first forward pass yields uniform class scores.
  head_ = Conv2d<T>::create(head_in, config_.classes, 1, 1, true, rng);
  std::fill(head_.weight.data().begin(), head_.weight.data().end(), T(0));
}

template <typename T>
std::vector<Tensor<T>> Decoder<T>::select_skips(std::span<const Tensor<T>> encoder_skips) const {
  std::vector<Tensor<T>> out;
  for (const auto& block : blocks_) {
    if (block.skip_channels == 0) continue;
    const std::size_t level = block.output_scale == 2 ? 0 : block.output_scale == 4 ? 1 : 2;
    if (level >= encoder_skips.size()) {
      throw ConfigError("decoder needs the 1/" + std::to_string(block.output_scale) +
                        " skip feature but the encoder provided none");
    }
    out.push_back(encoder_skips[level]);
  }
  return out;
}

template <typename T>
Tensor<T> naive_head(const Tensor<T>& tokens, const Conv2d<T>& head, std::size_t grid_height,
                     std::size_t grid_width, std::size_t height, std::size_t width) {
  return bilinear_upsample(head(reshape_hidden(tokens, grid_height, grid_width)), height, width);
}

template <typename T>
Tensor<T> cup_decode(const Tensor<T>& tokens, std::size_t grid_height, std::size_t grid_width,
                     std::span<const Tensor<T>> skips, const std::vector<CupBlock<T>>& blocks,
                     const Conv2d<T>& head) {
  const auto wanted = static_cast<std::size_t>(
      std::count_if(blocks.begin(), blocks.end(), [](const auto& b) { return b.skip_channels; }));
  if (skips.size() != wanted) {
    throw ConfigError("cascaded upsampler expects " + std::to_string(wanted) +
                      " skip features, got " + std::to_string(skips.size()));
  }
  auto x = reshape_hidden(tokens, grid_height, grid_width);
  std::size_t next_skip = 0;
  for (const auto& block : blocks) {
    const Tensor<T>* skip = nullptr;
    if (block.skip_channels) {
      skip = &skips[next_skip++];
      const Shape expected{block.skip_channels, x.size(1) * 2, x.size(2) * 2};
      if (skip->shape() != expected) {
        throw ConfigError("skip feature at 1/" + std::to_string(block.output_scale) +
                          " scale has shape " + shape_string(skip->shape()) + ", expected " +
                          shape_string(expected));
      }
    }
    x = block(x, skip);
  }
  return head(x);
}

template <typename T>
Tensor<T> Decoder<T>::operator()(const Tensor<T>& tokens, std::size_t grid_height,
                                 std::size_t grid_width,
                                 std::span<const Tensor<T>> encoder_skips) const {
  if (config_.decoder == DecoderKind::None) {
    return naive_head(tokens, head_, grid_height, grid_width, config_.height, config_.width);
  }
  const auto skips = select_skips(encoder_skips);
  return cup_decode<T>(tokens, grid_height, grid_width, skips, blocks_, head_);
}

template <typename T>
void Decoder<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    blocks_[b].collect(prefix + ".blocks." + std::to_string(b), out);
  head_.collect(prefix + ".head", out);
}

#define TRANSUNET_INSTANTIATE_DECODER(T)                                                     \
  template Tensor<T> reshape_hidden(const Tensor<T>&, std::size_t, std::size_t);             \
  template struct CupBlock<T>;                                                               \
  template class Decoder<T>;                                                                 \
  template Tensor<T> naive_head(const Tensor<T>&, const Conv2d<T>&, std::size_t, std::size_t, \
                                std::size_t, std::size_t);                                   \
  template Tensor<T> cup_decode(const Tensor<T>&, std::size_t, std::size_t,                  \
                                std::span<const Tensor<T>>, const std::vector<CupBlock<T>>&, \
                                const Conv2d<T>&);

TRANSUNET_INSTANTIATE_DECODER(float)
TRANSUNET_INSTANTIATE_DECODER(double)

#undef TRANSUNET_INSTANTIATE_DECODER

}  // namespace transunet
