#pragma once

#include <Eigen/Core>

namespace segstack {

// Thin wrappers over Eigen's single-threaded SGEMM. All matrices are
// row-major dense float. Reduction order inside Eigen's kernel is fixed for
// a given build, so results are bitwise reproducible run to run.
namespace gemm {

using MapM = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMapM = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C(MxN) = A(MxK) * B(KxN), optionally accumulating into C.
inline void nn(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate = false) {
  CMapM A(a, m, k), B(b, k, n);
  MapM C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C(MxN) = A(MxK) * B(NxK)^T.
inline void nt(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate = false) {
  CMapM A(a, m, k), B(b, n, k);
  MapM C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

// C(MxN) = A(KxM)^T * B(KxN).
inline void tn(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate = false) {
  CMapM A(a, k, m), B(b, k, n);
  MapM C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

}  // namespace gemm
}  // namespace segstack
