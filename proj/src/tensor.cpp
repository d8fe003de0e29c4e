#include "transunet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace transunet {

namespace {

thread_local bool t_grad_enabled = true;

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::replay_reverse() {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks() { return g_finite_checks.load(); }

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  impl_->data.assign(shape_numel(shape), T(0));
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements but " +
                         std::to_string(values.size()) + " values were given");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!impl_) throw ContractError("access to an undefined tensor");
  return impl_->shape;
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(s));
  }
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return impl_ ? impl_->data.size() : 0;
}

template <typename T>
std::span<T> Tensor<T>::data() {
  return impl_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::grad_accumulator() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), impl_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::record(std::string_view op, Shape shape, std::vector<T> values,
                            std::vector<Tensor> inputs, BackwardFn backward_fn) {
  if (finite_checks()) {
    for (const T& v : values) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value produced by " + std::string(op) + " (output " +
                           shape_string(shape) + ")");
      }
    }
  }
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  Tensor out(std::move(shape), std::move(values), needs_grad);
  if (!needs_grad) return out;

  Tape::current().append([out_impl = out.impl_, inputs = std::move(inputs),
                          fn = std::move(backward_fn)]() mutable {
    for (auto& in : inputs) {
      if (in.requires_grad()) in.grad_accumulator();
    }
    if (out_impl->grad.empty()) return;
    fn(std::span<const T>(out_impl->grad));
  });
  return out;
}

template <typename T>
void backward(Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  auto& tape = Tape::current();
  if (tape.empty()) throw ContractError("backward() called with an empty tape");
  loss.grad_accumulator()[0] = T(1);
  tape.replay_reverse();
  tape.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(Tensor<float>&);
template void backward<double>(Tensor<double>&);

}  // namespace transunet
