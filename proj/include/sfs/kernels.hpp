#pragma once

#include <cstdint>
#include <functional>

// Float32 compute kernels behind the NN layers. Every kernel has a scalar
// reference implementation and (on x86-64) an AVX2 variant; the active variant
// is chosen once at startup from cpuid and can be overridden for testing.
// Both variants of a kernel compute each output element with the same
// summation order, so results are independent of thread count; scalar vs AVX2
// differ only by FMA rounding.

namespace sfs::kern {

// ---- threading ----

// 0 = hardware concurrency. Applies process-wide.
void set_max_threads(int n);
int max_threads();

// Runs fn(begin, end) over a partition of [0, n). fn must only write state
// owned by its range.
void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn);

// While alive, parallel_for on this thread runs inline. Used by callers that
// already parallelize at a coarser level (one job per seed).
struct SerialGuard {
    SerialGuard();
    ~SerialGuard();
    SerialGuard(const SerialGuard&) = delete;
    SerialGuard& operator=(const SerialGuard&) = delete;
};

// ---- dispatch ----

bool cpu_has_avx2();
void set_force_scalar(bool on);
bool using_avx2();
const char* active_isa_name();

// ---- GEMM ----

// c[m x n] (+)= a[m x k] * b[k x n], all row-major.
void gemm_f32(const float* a, const float* b, float* c, int m, int n, int k, bool accumulate);

// c[m x n] (+)= sum_l a[l, m] * b[l, n]  (a: rows x m, b: rows x n, row-major).
// The transpose-first GEMM used for weight gradients.
void gemm_tn_f32(const float* a, const float* b, float* c, int64_t rows, int m, int n,
                 bool accumulate);

// ---- elementwise ----

void silu_f32(const float* x, float* y, int64_t n);
// dx = dy * silu'(x)
void silu_bwd_f32(const float* x, const float* dy, float* dx, int64_t n);
void add_f32(const float* a, const float* b, float* y, int64_t n);
// y += alpha * x
void axpy_f32(float alpha, const float* x, float* y, int64_t n);
void scale_f32(float alpha, float* x, int64_t n);
float dot_f32(const float* a, const float* b, int64_t n);

// Decoupled-weight-decay Adam step on one parameter blob.
// bc1/bc2 are the bias-correction factors 1-beta^step.
void adamw_f32(float* w, float* m, float* v, const float* g, int64_t n, float lr, float beta1,
               float beta2, float eps, float weight_decay, float bc1, float bc2);

// ---- per-ISA entry points (exposed for equivalence tests) ----

namespace scalar {
void gemm_f32(const float* a, const float* b, float* c, int m, int n, int k, bool accumulate);
void gemm_tn_f32(const float* a, const float* b, float* c, int64_t rows, int m, int n,
                 bool accumulate);
void silu_f32(const float* x, float* y, int64_t n);
void silu_bwd_f32(const float* x, const float* dy, float* dx, int64_t n);
void add_f32(const float* a, const float* b, float* y, int64_t n);
void axpy_f32(float alpha, const float* x, float* y, int64_t n);
void scale_f32(float alpha, float* x, int64_t n);
float dot_f32(const float* a, const float* b, int64_t n);
void adamw_f32(float* w, float* m, float* v, const float* g, int64_t n, float lr, float beta1,
               float beta2, float eps, float weight_decay, float bc1, float bc2);
}  // namespace scalar

#if defined(SFS_HAVE_AVX2_TU)
namespace avx2 {
void gemm_f32(const float* a, const float* b, float* c, int m, int n, int k, bool accumulate);
void gemm_tn_f32(const float* a, const float* b, float* c, int64_t rows, int m, int n,
                 bool accumulate);
void silu_f32(const float* x, float* y, int64_t n);
void silu_bwd_f32(const float* x, const float* dy, float* dx, int64_t n);
void add_f32(const float* a, const float* b, float* y, int64_t n);
void axpy_f32(float alpha, const float* x, float* y, int64_t n);
void scale_f32(float alpha, float* x, int64_t n);
float dot_f32(const float* a, const float* b, int64_t n);
void adamw_f32(float* w, float* m, float* v, const float* g, int64_t n, float lr, float beta1,
               float beta2, float eps, float weight_decay, float bc1, float bc2);
}  // namespace avx2
#endif

}  // namespace sfs::kern
