#include "transunet/layers.hpp"

#include <cmath>

namespace transunet {

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(stddev * rng.normal());
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> truncated_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.truncated_normal(stddev));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
Linear<T> Linear<T>::create(std::size_t in, std::size_t out, Rng& rng) {
  return {he_normal<T>({in, out}, in, rng), Tensor<T>({out}, true)};
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
Conv2d<T> Conv2d<T>::create(std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, bool with_bias, Rng& rng) {
  Conv2d conv;
  conv.weight = he_normal<T>({out, in, kernel, kernel}, in * kernel * kernel, rng);
  if (with_bias) conv.bias = Tensor<T>({out}, true);
  conv.stride = stride;
  conv.padding = kernel / 2;
  return conv;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(std::size_t width) {
  return {Tensor<T>::full({width}, T(1), true), Tensor<T>({width}, true)};
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
GroupNorm<T> GroupNorm<T>::create(std::size_t channels) {
  return {Tensor<T>::full({channels}, T(1), true), Tensor<T>({channels}, true),
          default_group_count(channels)};
}

template <typename T>
void GroupNorm<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

std::size_t default_group_count(std::size_t channels) {
  for (std::size_t g = 8; g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

template Tensor<float> he_normal<float>(Shape, std::size_t, Rng&);
template Tensor<double> he_normal<double>(Shape, std::size_t, Rng&);
template Tensor<float> truncated_normal<float>(Shape, double, Rng&);
template Tensor<double> truncated_normal<double>(Shape, double, Rng&);
template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct GroupNorm<float>;
template struct GroupNorm<double>;

}  // namespace transunet
