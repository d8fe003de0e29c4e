#include <cmath>

#include "transunet/ops.hpp"
#include "transunet/training.hpp"

namespace transunet {

namespace {

template <typename T>
void check_labels(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  if (logits.rank() != 3) {
    throw DimensionError("loss expects K x H x W logits, got " + shape_string(logits.shape()));
  }
  const std::size_t k = logits.size(0), n = logits.size(1) * logits.size(2);
  if (labels.size() != n) {
    throw DimensionError("loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " pixels");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw ContractError("loss: label " + std::to_string(labels[i]) + " at pixel " +
                          std::to_string(i) + " is outside [0, " + std::to_string(k) + ")");
    }
  }
}

// -mean_i logp[label_i, i] over a K x N log-probability map.
template <typename T>
Tensor<T> nll(const Tensor<T>& logp, std::span<const std::uint8_t> labels) {
  const std::size_t n = labels.size();
  const auto d = logp.data();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) total -= d[labels[i] * n + i];
  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  return Tensor<T>::record("nll", {1}, {total / static_cast<T>(n)}, {logp},
                           [logp, y = std::move(y)](std::span<const T> g) {
                             auto gx = logp.grad_accumulator();
                             const std::size_t n = y.size();
                             const T step = g[0] / static_cast<T>(n);
                             for (std::size_t i = 0; i < n; ++i) gx[y[i] * n + i] -= step;
                           });
}

// 1 - mean_k dice_k over K x N probabilities.
template <typename T>
Tensor<T> dice_of_probabilities(const Tensor<T>& probs, std::span<const std::uint8_t> labels,
                                T smooth) {
  const std::size_t k = probs.size(0), n = labels.size();
  const auto p = probs.data();
  std::vector<T> inter(k, 0), total(k, 0);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      const T v = p[c * n + i];
      total[c] += v;
      if (labels[i] == c) {
        inter[c] += v;
        total[c] += 1;
      }
    }
  T mean_dice = 0;
  for (std::size_t c = 0; c < k; ++c) mean_dice += (2 * inter[c] + smooth) / (total[c] + smooth);
  mean_dice /= static_cast<T>(k);

  std::vector<std::uint8_t> y(labels.begin(), labels.end());
  return Tensor<T>::record(
      "soft_dice", {1}, {T(1) - mean_dice}, {probs},
      [probs, y = std::move(y), inter = std::move(inter), total = std::move(total), smooth,
       k](std::span<const T> g) {
        auto gx = probs.grad_accumulator();
        const std::size_t n = y.size();
        for (std::size_t c = 0; c < k; ++c) {
          const T num = 2 * inter[c] + smooth, den = total[c] + smooth;
          // d(num/den)/dp_i = (2 [y_i = c] den - num) / den^2
          const T scale = -g[0] / (static_cast<T>(k) * den * den);
          for (std::size_t i = 0; i < n; ++i) {
            const T hit = y[i] == c ? T(2) * den : T(0);
            gx[c * n + i] += scale * (hit - num);
          }
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  check_labels(logits, labels);
  return nll(log_softmax(logits, 0), labels);
}

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                         T smooth) {
  check_labels(logits, labels);
  if (!(smooth >= T(0))) throw ContractError("soft dice smoothing must be non-negative");
  return dice_of_probabilities(softmax(logits, 0), labels, smooth);
}

template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                            const LossWeights& weights) {
  if (weights.ce < 0 || weights.dice < 0 || !(weights.ce + weights.dice > 0)) {
    throw ConfigError("train.ce_weight/train.dice_weight: weights must be >= 0 with a positive sum");
  }
  check_labels(logits, labels);
  Tensor<T> out;
  if (weights.ce > 0) out = scale(cross_entropy(logits, labels), static_cast<T>(weights.ce));
  if (weights.dice > 0) {
    auto d = scale(soft_dice_loss(logits, labels, static_cast<T>(weights.smooth)),
                   static_cast<T>(weights.dice));
    out = out.defined() ? add(out, d) : d;
  }
  return out;
}

#define TRANSUNET_INSTANTIATE_LOSS(T)                                                        \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>);         \
  template Tensor<T> soft_dice_loss(const Tensor<T>&, std::span<const std::uint8_t>, T);     \
  template Tensor<T> segmentation_loss(const Tensor<T>&, std::span<const std::uint8_t>,      \
                                       const LossWeights&);

TRANSUNET_INSTANTIATE_LOSS(float)
TRANSUNET_INSTANTIATE_LOSS(double)

}  // namespace transunet
