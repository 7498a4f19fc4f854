#include <immintrin.h>

#include <algorithm>

#include <cmath>
#include <cstring>
#include <vector>

#include "sfs/kernels.hpp"

// AVX2+FMA kernels. Summation order per output element matches the scalar
// reference (k strictly ascending); only FMA rounding differs.

namespace sfs::kern::avx2 {

namespace {

// exp via scalar libm: the surrounding loads/stores are vectorized, the
// transcendental itself is not. Activation cost is negligible next to GEMM.
inline __m256 silu_ps(__m256 x) {
    alignas(32) float v[8];
    _mm256_store_ps(v, x);
    for (int i = 0; i < 8; ++i) {
        float s = 1.0f / (1.0f + std::exp(-v[i]));
        v[i] = v[i] * s;
    }
    return _mm256_load_ps(v);
}

// 4-row x 16-col FMA microkernel over a k-panel.
// a: 4 row pointers, lda = k; b packed row-major [k x 16]; c row pointers.
inline void micro_4x16(const float* a0, const float* a1, const float* a2, const float* a3,
                       const float* bp, int k, float* c0, float* c1, float* c2, float* c3,
                       bool accumulate) {
    __m256 acc00, acc01, acc10, acc11, acc20, acc21, acc30, acc31;
    if (accumulate) {
        acc00 = _mm256_loadu_ps(c0);
        acc01 = _mm256_loadu_ps(c0 + 8);
        acc10 = _mm256_loadu_ps(c1);
        acc11 = _mm256_loadu_ps(c1 + 8);
        acc20 = _mm256_loadu_ps(c2);
        acc21 = _mm256_loadu_ps(c2 + 8);
        acc30 = _mm256_loadu_ps(c3);
        acc31 = _mm256_loadu_ps(c3 + 8);
    } else {
        acc00 = acc01 = acc10 = acc11 = acc20 = acc21 = acc30 = acc31 = _mm256_setzero_ps();
    }
    for (int l = 0; l < k; ++l) {
        __m256 b0 = _mm256_loadu_ps(bp + l * 16);
        __m256 b1 = _mm256_loadu_ps(bp + l * 16 + 8);
        __m256 av;
        av = _mm256_broadcast_ss(a0 + l);
        acc00 = _mm256_fmadd_ps(av, b0, acc00);
        acc01 = _mm256_fmadd_ps(av, b1, acc01);
        av = _mm256_broadcast_ss(a1 + l);
        acc10 = _mm256_fmadd_ps(av, b0, acc10);
        acc11 = _mm256_fmadd_ps(av, b1, acc11);
        av = _mm256_broadcast_ss(a2 + l);
        acc20 = _mm256_fmadd_ps(av, b0, acc20);
        acc21 = _mm256_fmadd_ps(av, b1, acc21);
        av = _mm256_broadcast_ss(a3 + l);
        acc30 = _mm256_fmadd_ps(av, b0, acc30);
        acc31 = _mm256_fmadd_ps(av, b1, acc31);
    }
    _mm256_storeu_ps(c0, acc00);
    _mm256_storeu_ps(c0 + 8, acc01);
    _mm256_storeu_ps(c1, acc10);
    _mm256_storeu_ps(c1 + 8, acc11);
    _mm256_storeu_ps(c2, acc20);
    _mm256_storeu_ps(c2 + 8, acc21);
    _mm256_storeu_ps(c3, acc30);
    _mm256_storeu_ps(c3 + 8, acc31);
}

}  // namespace

void gemm_f32(const float* a, const float* b, float* c, int m, int n, int k, bool accumulate) {
    // Pack B into 16-wide column panels (zero-padded) once; panels are shared
    // read-only across threads.
    int npanels = (n + 15) / 16;
    std::vector<float> bpack(static_cast<size_t>(npanels) * k * 16);
    for (int p = 0; p < npanels; ++p) {
        float* dst = bpack.data() + static_cast<size_t>(p) * k * 16;
        int j0 = p * 16;
        int w = n - j0 < 16 ? n - j0 : 16;
        for (int l = 0; l < k; ++l) {
            const float* src = b + static_cast<int64_t>(l) * n + j0;
            std::memcpy(dst + l * 16, src, sizeof(float) * w);
            for (int j = w; j < 16; ++j) dst[l * 16 + j] = 0.0f;
        }
    }

    parallel_for(m, 32, [&](int64_t r0, int64_t r1) {
        alignas(32) float ctile[4][16];
        for (int64_t i = r0; i < r1; i += 4) {
            int rows = static_cast<int>(r1 - i < 4 ? r1 - i : 4);
            const float* a0 = a + i * k;
            const float* a1 = a + (i + (rows > 1 ? 1 : 0)) * k;
            const float* a2 = a + (i + (rows > 2 ? 2 : 0)) * k;
            const float* a3 = a + (i + (rows > 3 ? 3 : 0)) * k;
            for (int p = 0; p < npanels; ++p) {
                const float* bp = bpack.data() + static_cast<size_t>(p) * k * 16;
                int j0 = p * 16;
                int w = n - j0 < 16 ? n - j0 : 16;
                if (rows == 4 && w == 16) {
                    float* c0 = c + i * n + j0;
                    micro_4x16(a0, a1, a2, a3, bp, k, c0, c0 + n, c0 + 2 * n, c0 + 3 * n,
                               accumulate);
                } else {
                    // ragged edge: compute into a local tile, copy the live part
                    for (int r = 0; r < rows; ++r) {
                        if (accumulate)
                            std::memcpy(ctile[r], c + (i + r) * n + j0, sizeof(float) * w);
                        else
                            std::memset(ctile[r], 0, sizeof(float) * 16);
                        if (accumulate)
                            for (int j = w; j < 16; ++j) ctile[r][j] = 0.0f;
                    }
                    micro_4x16(a0, a1, a2, a3, bp, k, ctile[0], ctile[1], ctile[2], ctile[3],
                               true);
                    for (int r = 0; r < rows; ++r)
                        std::memcpy(c + (i + r) * n + j0, ctile[r], sizeof(float) * w);
                }
            }
        }
    });
}

void gemm_tn_f32(const float* a, const float* b, float* c, int64_t rows, int m, int n,
                 bool accumulate) {
    // Threads own disjoint output-row ranges; inputs are streamed in l-blocks
    // with the thread's A slice transposed into a local buffer, and 4 output
    // rows share each B load. Ascending l order per element matches the
    // scalar reference.
    constexpr int64_t kBlock = 64;
    parallel_for(m, 4, [&](int64_t m0, int64_t m1) {
        if (!accumulate)
            for (int64_t i = m0; i < m1; ++i) std::memset(c + i * n, 0, sizeof(float) * n);
        int64_t mw = m1 - m0;
        int vn = n & ~7;
        for (int64_t lb = 0; lb < rows; lb += kBlock) {
            int64_t bl = std::min<int64_t>(kBlock, rows - lb);
            const float* ablk = a + lb * m + m0;
            int64_t i = 0;
            for (; i + 4 <= mw; i += 4) {
                const float* abase = ablk + i;
                float* c0 = c + (m0 + i) * n;
                float* c1 = c0 + n;
                float* c2 = c1 + n;
                float* c3 = c2 + n;
                int j = 0;
                for (; j < vn; j += 8) {
                    __m256 v0 = _mm256_loadu_ps(c0 + j);
                    __m256 v1 = _mm256_loadu_ps(c1 + j);
                    __m256 v2 = _mm256_loadu_ps(c2 + j);
                    __m256 v3 = _mm256_loadu_ps(c3 + j);
                    const float* ap = abase;
                    for (int64_t l = 0; l < bl; ++l, ap += m) {
                        __m256 bv = _mm256_loadu_ps(b + (lb + l) * n + j);
                        v0 = _mm256_fmadd_ps(_mm256_broadcast_ss(ap), bv, v0);
                        v1 = _mm256_fmadd_ps(_mm256_broadcast_ss(ap + 1), bv, v1);
                        v2 = _mm256_fmadd_ps(_mm256_broadcast_ss(ap + 2), bv, v2);
                        v3 = _mm256_fmadd_ps(_mm256_broadcast_ss(ap + 3), bv, v3);
                    }
                    _mm256_storeu_ps(c0 + j, v0);
                    _mm256_storeu_ps(c1 + j, v1);
                    _mm256_storeu_ps(c2 + j, v2);
                    _mm256_storeu_ps(c3 + j, v3);
                }
                for (; j < n; ++j) {
                    float s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
                    const float* ap = abase;
                    for (int64_t l = 0; l < bl; ++l, ap += m) {
                        float bv = b[(lb + l) * n + j];
                        s0 += ap[0] * bv;
                        s1 += ap[1] * bv;
                        s2 += ap[2] * bv;
                        s3 += ap[3] * bv;
                    }
                    c0[j] = s0;
                    c1[j] = s1;
                    c2[j] = s2;
                    c3[j] = s3;
                }
            }
            for (; i < mw; ++i) {
                const float* ar = ablk + i;
                float* crow = c + (m0 + i) * n;
                int j = 0;
                for (; j < vn; j += 8) {
                    __m256 cv = _mm256_loadu_ps(crow + j);
                    for (int64_t l = 0; l < bl; ++l)
                        cv = _mm256_fmadd_ps(_mm256_broadcast_ss(ar + l * m),
                                             _mm256_loadu_ps(b + (lb + l) * n + j), cv);
                    _mm256_storeu_ps(crow + j, cv);
                }
                for (; j < n; ++j) {
                    float acc = crow[j];
                    for (int64_t l = 0; l < bl; ++l) acc += ar[l * m] * b[(lb + l) * n + j];
                    crow[j] = acc;
                }
            }
        }
    });
}

void silu_f32(const float* x, float* y, int64_t n) {
    parallel_for(n, 4096, [&](int64_t i0, int64_t i1) {
        int64_t i = i0;
        for (; i + 8 <= i1; i += 8) _mm256_storeu_ps(y + i, silu_ps(_mm256_loadu_ps(x + i)));
        for (; i < i1; ++i) {
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
        int64_t i = i0;
        for (; i + 8 <= i1; i += 8)
            _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
        for (; i < i1; ++i) y[i] = a[i] + b[i];
    });
}

void axpy_f32(float alpha, const float* x, float* y, int64_t n) {
    __m256 av = _mm256_set1_ps(alpha);
    parallel_for(n, 8192, [&](int64_t i0, int64_t i1) {
        int64_t i = i0;
        for (; i + 8 <= i1; i += 8) {
            __m256 yv = _mm256_loadu_ps(y + i);
            yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv);
            _mm256_storeu_ps(y + i, yv);
        }
        for (; i < i1; ++i) y[i] += alpha * x[i];
    });
}

void scale_f32(float alpha, float* x, int64_t n) {
    __m256 av = _mm256_set1_ps(alpha);
    parallel_for(n, 8192, [&](int64_t i0, int64_t i1) {
        int64_t i = i0;
        for (; i + 8 <= i1; i += 8)
            _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
        for (; i < i1; ++i) x[i] *= alpha;
    });
}

float dot_f32(const float* a, const float* b, int64_t n) {
    // Same serial double-precision reduction as the reference.
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

}  // namespace sfs::kern::avx2
