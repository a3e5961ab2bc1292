#pragma once

#include <algorithm>
#include <cstdint>

// Row-major GEMM kernels. Every output element is accumulated by a single
// sequential k-loop, so results are bit-deterministic for a given binary.
// Blocking keeps the streamed panel L2-resident; it never reorders the
// per-element accumulation. OpenMP (when enabled) splits work so each output
// element is owned by exactly one thread, which keeps the determinism
// guarantee independent of the thread count.

namespace gradattn::detail {

// C[M,N] (+)= A[M,K] * B[K,N]
inline void gemm_nn(const double* A, const double* B, double* C, int64_t M, int64_t K,
                    int64_t N, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  constexpr int64_t JB = 512, KB = 64;
  const int64_t jblocks = (N + JB - 1) / JB;
#pragma omp parallel for schedule(static)
  for (int64_t jb = 0; jb < jblocks; ++jb) {
    const int64_t j0 = jb * JB;
    const int64_t j1 = std::min(N, j0 + JB);
    for (int64_t k0 = 0; k0 < K; k0 += KB) {
      const int64_t k1 = std::min(K, k0 + KB);
      for (int64_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (int64_t k = k0; k < k1; ++k) {
          const double av = a[k];
          const double* b = B + k * N;
          for (int64_t j = j0; j < j1; ++j) c[j] += av * b[j];
        }
      }
    }
  }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T   (rows of A dotted with rows of B)
inline void gemm_nt(const double* A, const double* B, double* C, int64_t M, int64_t K,
                    int64_t N, bool accumulate) {
  constexpr int64_t JB = 64;
  const int64_t jblocks = (N + JB - 1) / JB;
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t jb = 0; jb < jblocks; ++jb) {
    for (int64_t i = 0; i < M; ++i) {
      const int64_t j0 = jb * JB;
      const int64_t j1 = std::min(N, j0 + JB);
      const double* a = A + i * K;
      for (int64_t j = j0; j < j1; ++j) {
        const double* b = B + j * K;
        double s = 0.0;
        for (int64_t k = 0; k < K; ++k) s += a[k] * b[k];
        double* c = C + i * N + j;
        *c = accumulate ? *c + s : s;
      }
    }
  }
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
inline void gemm_tn(const double* A, const double* B, double* C, int64_t K, int64_t M,
                    int64_t N, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  constexpr int64_t JB = 512;
  const int64_t jblocks = (N + JB - 1) / JB;
#pragma omp parallel for schedule(static)
  for (int64_t jb = 0; jb < jblocks; ++jb) {
    const int64_t j0 = jb * JB;
    const int64_t j1 = std::min(N, j0 + JB);
    for (int64_t m = 0; m < M; ++m) {
      double* c = C + m * N;
      for (int64_t k = 0; k < K; ++k) {
        const double av = A[k * M + m];
        const double* b = B + k * N;
        for (int64_t j = j0; j < j1; ++j) c[j] += av * b[j];
      }
    }
  }
}

}  // namespace gradattn::detail
