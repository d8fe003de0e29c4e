#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "transunet/errors.hpp"

namespace transunet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major tensor handle. Copies share storage; use detach() for a
// deep copy. Element type is float for training and double for gradient
// verification.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  // Receives the gradient of the op output and accumulates into inputs.
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<T> data();
  std::span<const T> data() const;
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const T> grad() const;
  // Zero-filled on first call so callers can accumulate.
  std::span<T> grad_accumulator() const;
  void zero_grad();

  // Deep copy detached from any tape.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  // Builds the output of a differentiable op. When grad mode is on and any
  // input requires grad, the backward rule is appended to the thread's tape.
  static Tensor record(std::string_view op, Shape shape, std::vector<T> values,
                       std::vector<Tensor> inputs, BackwardFn backward);

 private:
  template <typename U>
  friend void backward(Tensor<U>& loss);

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

// Reverse-mode sweep over the current thread's tape; clears the tape.
template <typename T>
void backward(Tensor<T>& loss);

// Per-thread record of executed ops. Each thread owns its own tape, so
// independent training loops may run concurrently.
class Tape {
 public:
  using Entry = std::function<void()>;

  static Tape& current();

  void append(Entry entry) { entries_.push_back(std::move(entry)); }
  void replay_reverse();
  void clear() { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

bool grad_enabled();

// Disables tape recording for the enclosing scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Eager NaN/Inf detection after each op. Defaults to on in debug builds.
void set_finite_checks(bool enabled);
bool finite_checks();

}  // namespace transunet
