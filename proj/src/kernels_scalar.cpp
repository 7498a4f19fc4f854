#include <cmath>
#include <cstring>

#include "sfs/kernels.hpp"

// Reference kernels: portable C++, no intrinsics. The AVX2 variants must match
// these element-for-element up to FMA rounding; keep summation orders in sync.

namespace sfs::kern::scalar {

void gemm_f32(const float* a, const float* b, float* c, int m, int n, int k, bool accumulate) {
    parallel_for(m, 16, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            float* crow = c + i * n;
            if (!accumulate) std::memset(crow, 0, sizeof(float) * n);
            const float* arow = a + i * k;
            for (int l = 0; l < k; ++l) {
                float av = arow[l];
                const float* brow = b + static_cast<int64_t>(l) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

void gemm_tn_f32(const float* a, const float* b, float* c, int64_t rows, int m, int n,
                 bool accumulate) {
    // Threads own disjoint output-row ranges and stream the inputs in l-blocks;
    // every c element accumulates in ascending l order regardless of blocking.
    parallel_for(m, 8, [&](int64_t m0, int64_t m1) {
        if (!accumulate)
            for (int64_t i = m0; i < m1; ++i) std::memset(c + i * n, 0, sizeof(float) * n);
        constexpr int64_t kBlock = 8;
        for (int64_t lb = 0; lb < rows; lb += kBlock) {
            int64_t le = lb + kBlock < rows ? lb + kBlock : rows;
            for (int64_t i = m0; i < m1; ++i) {
                float* crow = c + i * n;
                for (int64_t l = lb; l < le; ++l) {
                    float av = a[l * m + i];
                    const float* brow = b + l * n;
                    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
            }
        }
    });
}

void silu_f32(const float* x, float* y, int64_t n) {
    parallel_for(n, 4096, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            float s = 1.0f / (1.0f + std::exp(-x[i]));
            y[i] = x[i] * s;
        }
    });
}

void silu_bwd_f32(const float* x, const float* dy, float* dx, int64_t n) {
    parallel_for(n, 4096, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            float s = 1.0f / (1.0f + std::exp(-x[i]));
            dx[i] = dy[i] * (s * (1.0f + x[i] * (1.0f - s)));
        }
    });
}

void add_f32(const float* a, const float* b, float* y, int64_t n) {
    parallel_for(n, 8192, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) y[i] = a[i] + b[i];
    });
}

void axpy_f32(float alpha, const float* x, float* y, int64_t n) {
    parallel_for(n, 8192, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) y[i] += alpha * x[i];
    });
}

void scale_f32(float alpha, float* x, int64_t n) {
    parallel_for(n, 8192, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) x[i] *= alpha;
    });
}

float dot_f32(const float* a, const float* b, int64_t n) {
    // Serial: keeps the reduction order fixed.
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
    return static_cast<float>(acc);
}

void adamw_f32(float* w, float* m, float* v, const float* g, int64_t n, float lr, float beta1,
               float beta2, float eps, float weight_decay, float bc1, float bc2) {
    parallel_for(n, 4096, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
            float mhat = m[i] / bc1;
            float vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
        }
    });
}

}  // namespace sfs::kern::scalar
