#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "transunet/layers.hpp"
#include "transunet/model_config.hpp"

namespace transunet {

// N x D tokens -> D x grid_h x grid_w, the row-major inverse of the
// token ordering. Throws ContractError if N != grid_h * grid_w.
template <typename T>
Tensor<T> reshape_hidden(const Tensor<T>& tokens, std::size_t grid_height,
                         std::size_t grid_width);

// Upsample 2x, optionally concatenate a skip feature, 3x3 conv, group norm,
// ReLU. The normalization is an addition to the plain upsample/conv/ReLU
// block for stable training at small batch sizes.
template <typename T>
struct CupBlock {
  Conv2d<T> conv;
  GroupNorm<T> norm;
  std::size_t skip_channels = 0;
  std::size_t output_scale = 1;  // denominator of the block's output resolution

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>* skip) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
class Decoder {
 public:
  Decoder(const ModelConfig& config, Rng& rng);

  // skips: the encoder's (f1/2, f1/4, f1/8); only the configured subset is
  // read. ViT encoders pass an empty list.
  Tensor<T> operator()(const Tensor<T>& tokens, std::size_t grid_height, std::size_t grid_width,
                       std::span<const Tensor<T>> encoder_skips) const;

  // Skip features the decoder consumes, coarse to fine, picked from the
  // encoder's (f1/2, f1/4, f1/8).
  std::vector<Tensor<T>> select_skips(std::span<const Tensor<T>> encoder_skips) const;

  void collect(const std::string& prefix, ParameterList<T>& out) const;

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<CupBlock<T>>& blocks() noexcept { return blocks_; }
  const std::vector<CupBlock<T>>& blocks() const noexcept { return blocks_; }
  Conv2d<T>& head() noexcept { return head_; }
  const Conv2d<T>& head() const noexcept { return head_; }

 private:
  ModelConfig config_;
  std::vector<CupBlock<T>> blocks_;
  Conv2d<T> head_;
};

// reshape_hidden -> 1x1 conv to K channels -> bilinear upsample to H x W.
template <typename T>
Tensor<T> naive_head(const Tensor<T>& tokens, const Conv2d<T>& head, std::size_t grid_height,
                     std::size_t grid_width, std::size_t height, std::size_t width);

// Cascaded upsampler. `skips` holds exactly one tensor per block that takes
// a skip (coarse to fine). Throws ConfigError naming the scale of any skip
// whose extents do not match its block.
template <typename T>
Tensor<T> cup_decode(const Tensor<T>& tokens, std::size_t grid_height, std::size_t grid_width,
                     std::span<const Tensor<T>> skips, const std::vector<CupBlock<T>>& blocks,
                     const Conv2d<T>& head);

}  // namespace transunet
