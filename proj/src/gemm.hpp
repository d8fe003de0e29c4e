#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace transunet::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[m x n] (+)= op(A) * op(B), all row-major. A is m x k (k x m when
// transposed), B is k x n (n x k when transposed).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using ConstMap = Eigen::Map<const RowMatrix<T>>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMatrix<T>> out(c, M, N);
  if (!accumulate) out.setZero();
  if (m == 0 || n == 0 || k == 0) return;

  if (!trans_a && !trans_b) {
    out.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
  } else if (trans_a && !trans_b) {
    out.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
  } else if (!trans_a && trans_b) {
    out.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
  } else {
    out.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
  }
}

}  // namespace transunet::detail
