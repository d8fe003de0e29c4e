#pragma once

#include <span>
#include <string>
#include <vector>

#include "transunet/tensor.hpp"

namespace transunet {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

// One momentum-SGD update on raw buffers:
//   v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
// Throws ContractError when the three buffers differ in length.
template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, T lr,
                T momentum, T weight_decay);

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// Momentum SGD over a fixed parameter list. Velocity buffers are zero at
// the first step. Parameters that received no gradient are treated as
// having a zero gradient (weight decay still applies).
template <typename T>
class Sgd {
 public:
  Sgd(ParameterList<T> params, SgdOptions options);

  void step();
  void zero_grad();

  const SgdOptions& options() const noexcept { return options_; }
  const ParameterList<T>& parameters() const noexcept { return params_; }

 private:
  ParameterList<T> params_;
  SgdOptions options_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace transunet
