#include "transunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gemm.hpp"

namespace transunet {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(s));
  }
}

template <typename T>
void accumulate(const Tensor<T>& target, std::span<const T> grad) {
  auto g = target.grad_accumulator();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  out.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) shape_mismatch("matmul", a.shape(), b.shape());

  std::vector<T> out(m * n);
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return Tensor<T>::record("matmul", {m, n}, std::move(out), {a, b},
                           [a, b, m, n, k](std::span<const T> g) mutable {
                             if (a.requires_grad()) {
                               detail::gemm(false, true, m, k, n, g.data(), b.data().data(),
                                            a.grad_accumulator().data(), true);
                             }
                             if (b.requires_grad()) {
                               detail::gemm(true, false, k, n, m, a.data().data(), g.data(),
                                            b.grad_accumulator().data(), true);
                             }
                           });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank("linear", x.shape(), 2);
  require_rank("linear", w.shape(), 2);
  const std::size_t n = x.size(0), in = x.size(1), out_dim = w.size(1);
  if (w.size(0) != in) shape_mismatch("linear", x.shape(), w.shape());
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_dim) shape_mismatch("linear", w.shape(), bias.shape());

  std::vector<T> out(n * out_dim);
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < n; ++r) std::copy(b.begin(), b.end(), out.begin() + r * out_dim);
  }
  detail::gemm(false, false, n, out_dim, in, x.data().data(), w.data().data(), out.data(),
               has_bias);
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor<T>::record(
      "linear", {n, out_dim}, std::move(out), std::move(inputs),
      [x, w, bias, n, in, out_dim](std::span<const T> g) mutable {
        if (x.requires_grad()) {
          detail::gemm(false, true, n, in, out_dim, g.data(), w.data().data(),
                       x.grad_accumulator().data(), true);
        }
        if (w.requires_grad()) {
          detail::gemm(true, false, in, out_dim, n, x.data().data(), g.data(),
                       w.grad_accumulator().data(), true);
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_accumulator();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < out_dim; ++c) gb[c] += g[r * out_dim + c];
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return Tensor<T>::record("add", a.shape(), std::move(out), {a, b},
                           [a, b](std::span<const T> g) mutable {
                             if (a.requires_grad()) accumulate(a, g);
                             if (b.requires_grad()) accumulate(b, g);
                           });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return Tensor<T>::record("mul", a.shape(), std::move(out), {a, b},
                           [a, b](std::span<const T> g) mutable {
                             if (a.requires_grad()) {
                               auto ga = a.grad_accumulator();
                               const auto db = b.data();
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * db[i];
                             }
                             if (b.requires_grad()) {
                               auto gb = b.grad_accumulator();
                               const auto da = a.data();
                               for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * da[i];
                             }
                           });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::record("scale", x.shape(), std::move(out), {x},
                           [x, factor](std::span<const T> g) mutable {
                             auto gx = x.grad_accumulator();
                             for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[i];
                           });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return Tensor<T>::record("sum", {1}, {total}, {x}, [x](std::span<const T> g) mutable {
    auto gx = x.grad_accumulator();
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::record("reshape", std::move(shape), std::move(out), {x},
                           [x](std::span<const T> g) mutable { accumulate(x, g); });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank("transpose", x.shape(), 2);
  const std::size_t rows = x.size(0), cols = x.size(1);
  std::vector<T> out(x.numel());
  const auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = d[r * cols + c];
  return Tensor<T>::record("transpose", {cols, rows}, std::move(out), {x},
                           [x, rows, cols](std::span<const T> g) mutable {
                             auto gx = x.grad_accumulator();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c)
                                 gx[r * cols + c] += g[c * rows + r];
                           });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank("slice_cols", x.shape(), 2);
  const std::size_t rows = x.size(0), cols = x.size(1);
  if (begin + count > cols) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") exceed shape " +
                         shape_string(x.shape()));
  }
  std::vector<T> out(rows * count);
  const auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(d.begin() + r * cols + begin, count, out.begin() + r * count);
  return Tensor<T>::record("slice_cols", {rows, count}, std::move(out), {x},
                           [x, rows, cols, begin, count](std::span<const T> g) mutable {
                             auto gx = x.grad_accumulator();
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < count; ++c)
                                 gx[r * cols + begin + c] += g[r * count + c];
                           });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].size(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank("concat_cols", p.shape(), 2);
    if (p.size(0) != rows) shape_mismatch("concat_cols", parts[0].shape(), p.shape());
    total += p.size(1);
  }
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.size(1);
    const auto d = p.data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(d.begin() + r * w, w, out.begin() + r * total + offset);
    offset += w;
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return Tensor<T>::record("concat_cols", {rows, total}, std::move(out), inputs,
                           [inputs, rows, total](std::span<const T> g) mutable {
                             std::size_t offset = 0;
                             for (auto& p : inputs) {
                               const std::size_t w = p.size(1);
                               if (p.requires_grad()) {
                                 auto gp = p.grad_accumulator();
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < w; ++c)
                                     gp[r * w + c] += g[r * total + offset + c];
                               }
                               offset += w;
                             }
                           });
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const std::size_t h = parts[0].size(1), w = parts[0].size(2);
  std::size_t channels = 0;
  for (const auto& p : parts) {
    require_rank("concat_channels", p.shape(), 3);
    if (p.size(1) != h || p.size(2) != w) {
      shape_mismatch("concat_channels", parts[0].shape(), p.shape());
    }
    channels += p.size(0);
  }
  std::vector<T> out;
  out.reserve(channels * h * w);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return Tensor<T>::record("concat_channels", {channels, h, w}, std::move(out), inputs,
                           [inputs](std::span<const T> g) mutable {
                             std::size_t offset = 0;
                             for (auto& p : inputs) {
                               if (p.requires_grad()) accumulate(p, g.subspan(offset, p.numel()));
                               offset += p.numel();
                             }
                           });
}

namespace {

thread_local bool tracing_activations = false;
thread_local std::uint64_t activation_digest = 0xcbf29ce484222325ull;

}  // namespace

void set_activation_tracing(bool enabled) { tracing_activations = enabled; }
void reset_activation_signature() { activation_digest = 0xcbf29ce484222325ull; }
std::uint64_t activation_signature() { return activation_digest; }

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  if (tracing_activations) {
    for (auto v : out) activation_digest = (activation_digest ^ (v > T(0))) * 0x100000001b3ull;
  }
  return Tensor<T>::record("relu", x.shape(), std::move(out), {x},
                           [x](std::span<const T> g) mutable {
                             auto gx = x.grad_accumulator();
                             const auto d = x.data();
                             for (std::size_t i = 0; i < gx.size(); ++i)
                               if (d[i] > T(0)) gx[i] += g[i];
                           });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.numel());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(0.5) * d[i] * (T(1) + std::erf(d[i] * inv_sqrt2));
  return Tensor<T>::record(
      "gelu", x.shape(), std::move(out), {x}, [x, inv_sqrt2](std::span<const T> g) mutable {
        const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
        auto gx = x.grad_accumulator();
        const auto d = x.data();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const T cdf = T(0.5) * (T(1) + std::erf(d[i] * inv_sqrt2));
          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * d[i] * d[i]);
          gx[i] += g[i] * (cdf + d[i] * pdf);
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  const auto sp = split_axis(x.shape(), axis);
  const auto d = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      T peak = d[base];
      for (std::size_t i = 1; i < sp.extent; ++i) peak = std::max(peak, d[base + i * sp.inner]);
      T total = T(0);
      for (std::size_t i = 0; i < sp.extent; ++i) {
        const std::size_t idx = base + i * sp.inner;
        out[idx] = std::exp(d[idx] - peak);
        total += out[idx];
      }
      for (std::size_t i = 0; i < sp.extent; ++i) out[base + i * sp.inner] /= total;
    }
  }
  auto y = std::make_shared<std::vector<T>>(out);
  return Tensor<T>::record("softmax", x.shape(), std::move(out), {x},
                           [x, y, sp](std::span<const T> g) mutable {
                             auto gx = x.grad_accumulator();
                             const auto& p = *y;
                             for (std::size_t o = 0; o < sp.outer; ++o) {
                               for (std::size_t in = 0; in < sp.inner; ++in) {
                                 const std::size_t base = o * sp.extent * sp.inner + in;
                                 T dot = T(0);
                                 for (std::size_t i = 0; i < sp.extent; ++i) {
                                   const std::size_t idx = base + i * sp.inner;
                                   dot += g[idx] * p[idx];
                                 }
                                 for (std::size_t i = 0; i < sp.extent; ++i) {
                                   const std::size_t idx = base + i * sp.inner;
                                   gx[idx] += p[idx] * (g[idx] - dot);
                                 }
                               }
                             }
                           });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("log_softmax: axis out of range");
  const auto sp = split_axis(x.shape(), axis);
  const auto d = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      T peak = d[base];
      for (std::size_t i = 1; i < sp.extent; ++i) peak = std::max(peak, d[base + i * sp.inner]);
      T total = T(0);
      for (std::size_t i = 0; i < sp.extent; ++i) total += std::exp(d[base + i * sp.inner] - peak);
      const T log_total = std::log(total) + peak;
      for (std::size_t i = 0; i < sp.extent; ++i) {
        const std::size_t idx = base + i * sp.inner;
        out[idx] = d[idx] - log_total;
      }
    }
  }
  auto y = std::make_shared<std::vector<T>>(out);
  return Tensor<T>::record("log_softmax", x.shape(), std::move(out), {x},
                           [x, y, sp](std::span<const T> g) mutable {
                             auto gx = x.grad_accumulator();
                             const auto& ly = *y;
                             for (std::size_t o = 0; o < sp.outer; ++o) {
                               for (std::size_t in = 0; in < sp.inner; ++in) {
                                 const std::size_t base = o * sp.extent * sp.inner + in;
                                 T total = T(0);
                                 for (std::size_t i = 0; i < sp.extent; ++i)
                                   total += g[base + i * sp.inner];
                                 for (std::size_t i = 0; i < sp.extent; ++i) {
                                   const std::size_t idx = base + i * sp.inner;
                                   gx[idx] += g[idx] - std::exp(ly[idx]) * total;
                                 }
                               }
                             }
                           });
}

namespace {

// Shared normalization kernel: `count` groups of `width` contiguous values;
// the affine parameter index of element j in group r is given by `param_of`.
template <typename T, typename ParamIndex>
Tensor<T> normalize(const char* name, const Tensor<T>& x, const Tensor<T>& gain,
                    const Tensor<T>& bias, T eps, std::size_t count, std::size_t width,
                    ParamIndex param_of) {
  const auto d = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(count);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t base = r * width;
    T mu = T(0);
    for (std::size_t j = 0; j < width; ++j) mu += d[base + j];
    mu /= static_cast<T>(width);
    T var = T(0);
    for (std::size_t j = 0; j < width; ++j) {
      const T c = d[base + j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(width);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < width; ++j) {
      const T xh = (d[base + j] - mu) * rs;
      (*xhat)[base + j] = xh;
      const std::size_t p = param_of(r, j);
      out[base + j] = xh * gd[p] + bd[p];
    }
  }
  return Tensor<T>::record(
      name, x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, rstd, count, width, param_of](std::span<const T> g) mutable {
        const auto gd = gain.data();
        if (gain.requires_grad() || bias.requires_grad()) {
          auto gg = gain.grad_accumulator();
          auto gb = bias.grad_accumulator();
          for (std::size_t r = 0; r < count; ++r)
            for (std::size_t j = 0; j < width; ++j) {
              const std::size_t i = r * width + j;
              const std::size_t p = param_of(r, j);
              gg[p] += g[i] * (*xhat)[i];
              gb[p] += g[i];
            }
        }
        if (!x.requires_grad()) return;
        auto gx = x.grad_accumulator();
        const T inv_w = T(1) / static_cast<T>(width);
        for (std::size_t r = 0; r < count; ++r) {
          const std::size_t base = r * width;
          T mean_dxh = T(0), mean_dxh_xh = T(0);
          for (std::size_t j = 0; j < width; ++j) {
            const T dxh = g[base + j] * gd[param_of(r, j)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * (*xhat)[base + j];
          }
          mean_dxh *= inv_w;
          mean_dxh_xh *= inv_w;
          for (std::size_t j = 0; j < width; ++j) {
            const T dxh = g[base + j] * gd[param_of(r, j)];
            gx[base + j] += (*rstd)[r] * (dxh - mean_dxh - (*xhat)[base + j] * mean_dxh_xh);
          }
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: rank-0 input");
  const std::size_t width = x.shape().back();
  if (width == 0) throw DimensionError("layer_norm: normalized axis has extent 0");
  if (gain.numel() != width || bias.numel() != width) {
    shape_mismatch("layer_norm", x.shape(), gain.shape());
  }
  return normalize("layer_norm", x, gain, bias, eps, x.numel() / width, width,
                   [](std::size_t, std::size_t j) { return j; });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  require_rank("group_norm", x.shape(), 3);
  const std::size_t channels = x.size(0);
  const std::size_t plane = x.size(1) * x.size(2);
  if (groups == 0 || channels % groups != 0 || plane == 0) {
    throw DimensionError("group_norm: " + std::to_string(channels) +
                         " channels cannot form " + std::to_string(groups) + " groups");
  }
  if (gain.numel() != channels || bias.numel() != channels) {
    shape_mismatch("group_norm", x.shape(), gain.shape());
  }
  const std::size_t per_group = channels / groups;
  const std::size_t width = per_group * plane;
  return normalize("group_norm", x, gain, bias, eps, groups, width,
                   [per_group, plane](std::size_t r, std::size_t j) {
                     return r * per_group + j / plane;
                   });
}

namespace {

template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* cols) {
  const std::size_t plane = oh * ow;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = cols + ((ch * kh + i) * kw + j) * plane;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                          static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill_n(dst, ow, T(0));
            continue;
          }
          const T* src = x + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                            static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* x) {
  const std::size_t plane = oh * ow;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = cols + ((ch * kh + i) * kw + j) * plane;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = x + (ch * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
              dst[static_cast<std::size_t>(ix)] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  require_rank("conv2d", x.shape(), 3);
  require_rank("conv2d", w.shape(), 4);
  const std::size_t cin = x.size(0), h = x.size(1), wd = x.size(2);
  const std::size_t cout = w.size(0), kh = w.size(2), kw = w.size(3);
  if (w.size(1) != cin) shape_mismatch("conv2d", x.shape(), w.shape());
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (kh > h + 2 * padding || kw > wd + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(w.shape()) +
                         " larger than padded input " + shape_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != cout) shape_mismatch("conv2d", w.shape(), bias.shape());

  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * padding - kw) / stride + 1;
  const std::size_t plane = oh * ow;
  const std::size_t patch = cin * kh * kw;
  const bool direct = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  auto cols = std::make_shared<std::vector<T>>();
  if (!direct) {
    cols->resize(patch * plane);
    im2col(x.data().data(), cin, h, wd, kh, kw, stride, padding, oh, ow, cols->data());
  }
  const T* col_ptr = direct ? x.data().data() : cols->data();

  std::vector<T> out(cout * plane);
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t co = 0; co < cout; ++co)
      std::fill_n(out.begin() + co * plane, plane, b[co]);
  }
  detail::gemm(false, false, cout, plane, patch, w.data().data(), col_ptr, out.data(), has_bias);

  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor<T>::record(
      "conv2d", {cout, oh, ow}, std::move(out), std::move(inputs),
      [=](std::span<const T> g) mutable {
        const T* cp = direct ? x.data().data() : cols->data();
        if (w.requires_grad()) {
          detail::gemm(false, true, cout, patch, plane, g.data(), cp, w.grad_accumulator().data(),
                       true);
        }
        if (has_bias && bias.requires_grad()) {
          auto gb = bias.grad_accumulator();
          for (std::size_t co = 0; co < cout; ++co) {
            T acc = T(0);
            for (std::size_t p = 0; p < plane; ++p) acc += g[co * plane + p];
            gb[co] += acc;
          }
        }
        if (x.requires_grad()) {
          if (direct) {
            detail::gemm(true, false, patch, plane, cout, w.data().data(), g.data(),
                         x.grad_accumulator().data(), true);
          } else {
            std::vector<T> dcols(patch * plane);
            detail::gemm(true, false, patch, plane, cout, w.data().data(), g.data(), dcols.data(),
                         false);
            col2im(dcols.data(), cin, h, wd, kh, kw, stride, padding, oh, ow,
                   x.grad_accumulator().data());
          }
        }
      });
}

namespace {

struct LerpAxis {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

LerpAxis lerp_axis(std::size_t in, std::size_t out) {
  LerpAxis a;
  a.lo.resize(out);
  a.hi.resize(out);
  a.frac.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = src - static_cast<double>(lo);
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_rank("bilinear_upsample", x.shape(), 3);
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  if (c == 0 || h == 0 || w == 0) {
    throw DimensionError("bilinear_upsample: zero-sized input " + shape_string(x.shape()));
  }
  if (out_h < h || out_w < w) {
    throw DimensionError("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " smaller than source " +
                         shape_string(x.shape()));
  }
  auto ay = std::make_shared<LerpAxis>(lerp_axis(h, out_h));
  auto ax = std::make_shared<LerpAxis>(lerp_axis(w, out_w));
  const auto d = x.data();
  std::vector<T> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = d.data() + ch * h * w;
    T* dst = out.data() + ch * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const T fy = static_cast<T>(ay->frac[i]);
      const T* r0 = src + ay->lo[i] * w;
      const T* r1 = src + ay->hi[i] * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const T fx = static_cast<T>(ax->frac[j]);
        const std::size_t x0 = ax->lo[j], x1 = ax->hi[j];
        // lerp form keeps constant inputs exactly constant
        const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const T bottom = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[i * out_w + j] = top + fy * (bottom - top);
      }
    }
  }
  return Tensor<T>::record(
      "bilinear_upsample", {c, out_h, out_w}, std::move(out), {x},
      [x, ay, ax, c, h, w, out_h, out_w](std::span<const T> g) mutable {
        auto gx = x.grad_accumulator();
        for (std::size_t ch = 0; ch < c; ++ch) {
          T* dst = gx.data() + ch * h * w;
          const T* src = g.data() + ch * out_h * out_w;
          for (std::size_t i = 0; i < out_h; ++i) {
            const T fy = static_cast<T>(ay->frac[i]);
            T* r0 = dst + ay->lo[i] * w;
            T* r1 = dst + ay->hi[i] * w;
            for (std::size_t j = 0; j < out_w; ++j) {
              const T fx = static_cast<T>(ax->frac[j]);
              const T v = src[i * out_w + j];
              const std::size_t x0 = ax->lo[j], x1 = ax->hi[j];
              r0[x0] += v * (T(1) - fy) * (T(1) - fx);
              r0[x1] += v * (T(1) - fy) * fx;
              r1[x0] += v * fy * (T(1) - fx);
              r1[x1] += v * fy * fx;
            }
          }
        }
      });
}

#define TRANSUNET_INSTANTIATE_OPS(T)                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                               \
  template Tensor<T> mean(const Tensor<T>&);                                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
  template Tensor<T> transpose(const Tensor<T>&);                                         \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);              \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                             \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                         \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> gelu(const Tensor<T>&);                                              \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> group_norm(const Tensor<T>&, std::size_t, const Tensor<T>&,          \
                                const Tensor<T>&, T);                                     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                            std::size_t, std::size_t);                                    \
  template Tensor<T> bilinear_upsample(const Tensor<T>&, std::size_t, std::size_t);

TRANSUNET_INSTANTIATE_OPS(float)
TRANSUNET_INSTANTIATE_OPS(double)

#undef TRANSUNET_INSTANTIATE_OPS

}  // namespace transunet
