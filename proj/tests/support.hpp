#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <functional>
#include <vector>

#include "transunet/ops.hpp"
#include "transunet/optim.hpp"
#include "transunet/random.hpp"
#include "transunet/tensor.hpp"

namespace transunet::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(scale * rng.normal());
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

struct GradReport {
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  // Inputs for which every draw straddled a kink.
  std::size_t unprobed = 0;
};

// Central-difference check of d f() / d inputs. Probes every element of
// tensors with at most `dense_limit` elements, otherwise `samples` random
// ones. Relative error |a - n| / max(|a|, |n|, floor).
//
// A probe whose +h and -h evaluations see different relu sign patterns
// straddles a kink, where the central difference is not an estimate of the
// derivative; such probes are counted and replaced by a fresh draw.
inline GradReport check_gradients(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> inputs, Rng& rng,
                                  std::size_t samples = 6, std::size_t dense_limit = 64,
                                  double step = 1e-5, double floor = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  Tape::current().clear();
  auto loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.emplace_back(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.back().begin());
  }

  GradReport report;
  NoGradGuard no_grad;
  set_activation_tracing(true);
  auto evaluate = [&](Tensor<double>& t, std::size_t i, double value, std::uint64_t& sig) {
    t[i] = value;
    reset_activation_signature();
    const double out = f().item();
    sig = activation_signature();
    return out;
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    const bool dense = t.numel() <= dense_limit;
    const std::size_t wanted = dense ? t.numel() : samples;
    std::size_t taken = 0;
    for (std::size_t attempt = 0; taken < wanted && attempt < wanted * 20; ++attempt) {
      const std::size_t i = dense ? attempt : rng.index(t.numel());
      if (dense && i >= t.numel()) break;
      const double saved = t[i];
      std::uint64_t sig_up = 0, sig_down = 0;
      const double up = evaluate(t, i, saved + step, sig_up);
      const double down = evaluate(t, i, saved - step, sig_down);
      t[i] = saved;
      if (sig_up != sig_down) {
        ++report.kinks;
        continue;
      }
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      report.max_abs_analytic = std::max(report.max_abs_analytic, std::abs(a));
      report.max_abs_numeric = std::max(report.max_abs_numeric, std::abs(numeric));
      ++report.checked;
      ++taken;
    }
    if (taken == 0 && t.numel() > 0) ++report.unprobed;
  }
  set_activation_tracing(false);
  return report;
}

// Reduces any tensor to a scalar with fixed random weights, so every
// output element gets a distinct upstream gradient.
inline Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto w = random_tensor<double>(y.shape(), rng, 1.0, false);
  return sum(mul(y, w));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    Rng rng(Rng::derive(static_cast<std::uint64_t>(
                            std::filesystem::file_time_type::clock::now().time_since_epoch().count()),
                        {++counter}));
    path_ = std::filesystem::temp_directory_path() /
            ("transunet-" + tag + "-" + std::to_string(rng.next() % 1000000007));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace transunet::testing
