#pragma once

#include <cstdint>

#include "transunet/decoder.hpp"
#include "transunet/encoder.hpp"

namespace transunet {

// Encoder + decoder pair mapping one C x H x W image to K x H x W logits.
template <typename T>
class TransUNet {
 public:
  TransUNet(const ModelConfig& config, std::uint64_t seed);

  Tensor<T> operator()(const Tensor<T>& image) const;

  // Stable order; names are unique and used by checkpoints.
  ParameterList<T> parameters() const;
  std::size_t parameter_count() const;

  const ModelConfig& config() const noexcept { return config_; }
  Encoder<T>& encoder() noexcept { return encoder_; }
  const Encoder<T>& encoder() const noexcept { return encoder_; }
  Decoder<T>& decoder() noexcept { return decoder_; }
  const Decoder<T>& decoder() const noexcept { return decoder_; }

 private:
  ModelConfig config_;
  Rng init_rng_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

std::size_t count_parameters(const ModelConfig& config);

}  // namespace transunet
