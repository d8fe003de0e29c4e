#include "transunet/model.hpp"

namespace transunet {

template <typename T>
TransUNet<T>::TransUNet(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      init_rng_(Rng::derive(seed, {0x1a17})),
      encoder_(config_, init_rng_),
      decoder_(config_, init_rng_) {}

template <typename T>
Tensor<T> TransUNet<T>::operator()(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.size(1) != config_.height || image.size(2) != config_.width) {
    throw DimensionError("model expects " + std::to_string(config_.channels) + "x" +
                         std::to_string(config_.height) + "x" + std::to_string(config_.width) +
                         " input, got " + shape_string(image.shape()));
  }
  const auto encoded = encoder_(image);
  return decoder_(encoded.tokens, encoded.grid_height, encoded.grid_width, encoded.skips);
}

template <typename T>
ParameterList<T> TransUNet<T>::parameters() const {
  ParameterList<T> out;
  encoder_.collect("encoder", out);
  decoder_.collect("decoder", out);
  return out;
}

template <typename T>
std::size_t TransUNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

std::size_t count_parameters(const ModelConfig& config) {
  return TransUNet<float>(config, 0).parameter_count();
}

template class TransUNet<float>;
template class TransUNet<double>;

}  // namespace transunet
