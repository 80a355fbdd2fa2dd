#pragma once

#include <cstddef>

namespace oneshot::blas {

/// Row-major single-precision C = alpha * op(A) * op(B) + beta * C.
/// op(A) is M x K, op(B) is K x N, C is M x N. Runs single-threaded; callers
/// own any outer parallelism so results stay deterministic.
void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
           int ldb, float beta, float* c, int ldc);

/// True when an external BLAS implementation was loaded; false when the
/// built-in fallback kernel is in use.
bool accelerated();

}  // namespace oneshot::blas
