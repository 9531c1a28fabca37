#pragma once

#include <cstddef>

#ifndef HLM_NO_BLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace hlm {

inline void set_compute_threads(int n) {
#ifndef HLM_NO_BLAS
    openblas_set_num_threads(n > 0 ? n : 1);
#else
    (void)n;
#endif
}

// C(m x n) = alpha * op(A) * op(B) + beta * C, row-major.
// lda/ldb are the stored column counts of A and B.
#ifndef HLM_NO_BLAS
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* A, int lda,
                 const float* B, int ldb, float beta, float* C, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, A, lda, B, ldb, beta, C, ldc);
}

inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* A, int lda,
                 const double* B, int ldb, double beta, double* C, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m,
                n, k, alpha, A, lda, B, ldb, beta, C, ldc);
}
#else
template <class T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* A, int lda, const T* B,
          int ldb, T beta, T* C, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int t = 0; t < k; ++t) {
                T a = ta ? A[t * lda + i] : A[i * lda + t];
                T b = tb ? B[j * ldb + t] : B[t * ldb + j];
                acc += a * b;
            }
            C[i * ldc + j] = alpha * acc + beta * C[i * ldc + j];
        }
    }
}
#endif

}  // namespace hlm
