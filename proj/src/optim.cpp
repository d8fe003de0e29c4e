#include "transunet/optim.hpp"

namespace transunet {

template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, T lr,
                T momentum, T weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size()) {
    throw ContractError("sgd_update: parameter has " + std::to_string(param.size()) +
                        " elements, gradient " + std::to_string(grad.size()) + ", velocity " +
                        std::to_string(velocity.size()));
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
    param[i] -= lr * velocity[i];
  }
}

template <typename T>
Sgd<T>::Sgd(ParameterList<T> params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.tensor.numel(), T(0));
}

template <typename T>
void Sgd<T>::step() {
  const T lr = static_cast<T>(options_.lr);
  const T momentum = static_cast<T>(options_.momentum);
  const T wd = static_cast<T>(options_.weight_decay);
  std::vector<T> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    std::span<const T> g;
    if (t.has_grad()) {
      g = t.grad();
    } else {
      zeros.assign(t.numel(), T(0));
      g = zeros;
    }
    sgd_update<T>(t.data(), g, velocity_[i], lr, momentum, wd);
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template void sgd_update<float>(std::span<float>, std::span<const float>, std::span<float>, float,
                                float, float);
template void sgd_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                 double, double, double);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace transunet
