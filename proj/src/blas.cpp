#include "blas.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <mutex>
#include <vector>

namespace oneshot::blas {
namespace {

// cblas row-major constants
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using cblas_sgemm_fn = void (*)(int order, int trans_a, int trans_b, int m, int n, int k, float alpha, const float* a,
                                int lda, const float* b, int ldb, float beta, float* c, int ldc);
using set_threads_fn = void (*)(int);

cblas_sgemm_fn g_sgemm = nullptr;

// OpenBLAS selects its kernels in a library constructor, so the core-type
// hint must be in the environment before the library is mapped. On VMs that
// hide the CPU model it otherwise falls back to ancient SSE kernels.
void set_coretype_hint() {
#if defined(__x86_64__)
    if (__builtin_cpu_supports("avx512f"))
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
    else if (__builtin_cpu_supports("avx2"))
        setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
#endif
}

void load_backend() {
    if (getenv("ONESHOT_NO_BLAS")) return;
    set_coretype_hint();
    const char* candidates[] = {"libopenblas.so.0", "libopenblas.so"};
    void* handle = nullptr;
    for (const char* name : candidates) {
        handle = dlopen(name, RTLD_NOW | RTLD_LOCAL);
        if (handle) break;
    }
    if (!handle) return;
    auto sgemm = reinterpret_cast<cblas_sgemm_fn>(dlsym(handle, "cblas_sgemm"));
    if (!sgemm) return;
    // BLAS-internal threading would fight the batch-level parallelism and
    // make reductions order-dependent.
    if (auto set_threads = reinterpret_cast<set_threads_fn>(dlsym(handle, "openblas_set_num_threads")))
        set_threads(1);
    g_sgemm = sgemm;
}

std::once_flag g_once;

void ensure_loaded() { std::call_once(g_once, load_backend); }

// Fallback: blocked row-major gemm, accumulating into C. Not fast, but
// correct and deterministic when no BLAS library can be loaded.
void gemm_fallback(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                   const float* b, int ldb, float beta, float* c, int ldc) {
    auto at = [&](int i, int l) { return trans_a ? a[static_cast<size_t>(l) * lda + i] : a[static_cast<size_t>(i) * lda + l]; };

    if (beta != 1.0f) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) c[static_cast<size_t>(i) * ldc + j] *= beta;
    }
    // i-k-j loop order keeps the inner loop contiguous over B and C.
    std::vector<float> brow;
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<size_t>(i) * ldc;
        for (int l = 0; l < k; ++l) {
            const float av = alpha * at(i, l);
            if (av == 0.0f) continue;
            const float* bptr;
            if (!trans_b) {
                bptr = b + static_cast<size_t>(l) * ldb;
            } else {
                brow.resize(static_cast<size_t>(n));
                for (int j = 0; j < n; ++j) brow[static_cast<size_t>(j)] = b[static_cast<size_t>(j) * ldb + l];
                bptr = brow.data();
            }
            for (int j = 0; j < n; ++j) crow[j] += av * bptr[j];
        }
    }
}

}  // namespace

bool accelerated() {
    ensure_loaded();
    return g_sgemm != nullptr;
}

void sgemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
           int ldb, float beta, float* c, int ldc) {
    ensure_loaded();
    if (g_sgemm) {
        g_sgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
        return;
    }
    gemm_fallback(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace oneshot::blas
