#ifndef MOPE_DETAIL_GEMM_HPP_
#define MOPE_DETAIL_GEMM_HPP_

#include <algorithm>
#include <vector>

namespace mope::detail {

// C[M x N] += A[M x K] * B[K x N], row-major with leading dimensions.
// Four rows of C are updated per pass over a column strip of B so the inner
// loop is a contiguous axpy the compiler can vectorize.
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb,
             T* C, int ldc) {
  constexpr int kStrip = 512;
  for (int jb = 0; jb < N; jb += kStrip) {
    const int nb = std::min(kStrip, N - jb);
    int i = 0;
    for (; i + 4 <= M; i += 4) {
      T* __restrict c0 = C + static_cast<long>(i) * ldc + jb;
      T* __restrict c1 = c0 + ldc;
      T* __restrict c2 = c1 + ldc;
      T* __restrict c3 = c2 + ldc;
      const T* a = A + static_cast<long>(i) * lda;
      for (int k = 0; k < K; ++k) {
        const T a0 = a[k];
        const T a1 = a[lda + k];
        const T a2 = a[2 * lda + k];
        const T a3 = a[3 * lda + k];
        const T* __restrict b = B + static_cast<long>(k) * ldb + jb;
        for (int j = 0; j < nb; ++j) {
          const T bv = b[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < M; ++i) {
      T* __restrict c0 = C + static_cast<long>(i) * ldc + jb;
      const T* a = A + static_cast<long>(i) * lda;
      for (int k = 0; k < K; ++k) {
        const T a0 = a[k];
        const T* __restrict b = B + static_cast<long>(k) * ldb + jb;
        for (int j = 0; j < nb; ++j) c0[j] += a0 * b[j];
      }
    }
  }
}

// Row-major transpose of a rows x cols block.
template <typename T>
std::vector<T> transpose(const T* src, int rows, int cols) {
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  constexpr int kTile = 32;
  for (int r0 = 0; r0 < rows; r0 += kTile) {
    for (int c0 = 0; c0 < cols; c0 += kTile) {
      const int r1 = std::min(rows, r0 + kTile);
      const int c1 = std::min(cols, c0 + kTile);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          out[static_cast<std::size_t>(c) * rows + r] =
              src[static_cast<std::size_t>(r) * cols + c];
        }
      }
    }
  }
  return out;
}

}  // namespace mope::detail

#endif  // MOPE_DETAIL_GEMM_HPP_
