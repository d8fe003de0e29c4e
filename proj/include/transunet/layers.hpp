#pragma once

#include <cstddef>
#include <string>

#include "transunet/ops.hpp"
#include "transunet/optim.hpp"
#include "transunet/random.hpp"

// Parameter-holding building blocks shared by the encoder and decoder.
namespace transunet {

// He-normal: N(0, 2 / fan_in).
template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
Tensor<T> truncated_normal(Shape shape, double stddev, Rng& rng);

template <typename T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out

  static Linear create(std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // out x in x k x k
  Tensor<T> bias;    // undefined when the conv feeds a normalization
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2d create(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                       bool with_bias, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, padding);
  }
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  static LayerNorm create(std::size_t width);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct GroupNorm {
  Tensor<T> gain;
  Tensor<T> bias;
  std::size_t groups = 1;

  static GroupNorm create(std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x) const { return group_norm(x, groups, gain, bias); }
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// Largest group count <= 8 that divides `channels`.
std::size_t default_group_count(std::size_t channels);

}  // namespace transunet
