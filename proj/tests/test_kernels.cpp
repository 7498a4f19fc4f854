#include <doctest.h>

#include <cmath>
#include <vector>

#include "sfs/kernels.hpp"
#include "sfs/rng.hpp"

using namespace sfs;

namespace {

std::vector<float> random_vec(int64_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = rng.gaussian_f();
    return v;
}

// textbook triple loop, double accumulators
std::vector<float> gemm_naive(const std::vector<float>& a, const std::vector<float>& b, int m,
                              int n, int k) {
    std::vector<float> c(static_cast<size_t>(m) * n, 0.0f);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l)
                acc += static_cast<double>(a[static_cast<size_t>(i) * k + l]) *
                       b[static_cast<size_t>(l) * n + j];
            c[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
        }
    return c;
}

double max_rel_err(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double denom = std::max(1.0, std::abs(static_cast<double>(b[i])));
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("gemm matches naive reference on assorted shapes") {
    struct Shape {
        int m, n, k;
    };
    for (Shape s : {Shape{1, 1, 1}, Shape{3, 5, 7}, Shape{64, 32, 288}, Shape{130, 17, 9},
                    Shape{256, 64, 64}, Shape{33, 48, 100}}) {
        auto a = random_vec(static_cast<int64_t>(s.m) * s.k, 1000 + s.m);
        auto b = random_vec(static_cast<int64_t>(s.k) * s.n, 2000 + s.n);
        auto expect = gemm_naive(a, b, s.m, s.n, s.k);
        std::vector<float> c(static_cast<size_t>(s.m) * s.n, 99.0f);
        kern::gemm_f32(a.data(), b.data(), c.data(), s.m, s.n, s.k, false);
        CHECK(max_rel_err(c, expect) < 2e-5);
    }
}

TEST_CASE("gemm accumulate adds on top of existing values") {
    int m = 9, n = 20, k = 33;
    auto a = random_vec(static_cast<int64_t>(m) * k, 1);
    auto b = random_vec(static_cast<int64_t>(k) * n, 2);
    auto base = random_vec(static_cast<int64_t>(m) * n, 3);
    auto expect = gemm_naive(a, b, m, n, k);
    for (size_t i = 0; i < expect.size(); ++i) expect[i] += base[i];
    auto c = base;
    kern::gemm_f32(a.data(), b.data(), c.data(), m, n, k, true);
    CHECK(max_rel_err(c, expect) < 2e-5);
}

TEST_CASE("gemm_tn matches transposed naive computation") {
    int rows = 500, m = 36, n = 24;
    auto a = random_vec(static_cast<int64_t>(rows) * m, 11);
    auto b = random_vec(static_cast<int64_t>(rows) * n, 12);
    std::vector<float> expect(static_cast<size_t>(m) * n, 0.0f);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < rows; ++l)
                acc += static_cast<double>(a[static_cast<size_t>(l) * m + i]) *
                       b[static_cast<size_t>(l) * n + j];
            expect[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
        }
    std::vector<float> c(static_cast<size_t>(m) * n, 0.0f);
    kern::gemm_tn_f32(a.data(), b.data(), c.data(), rows, m, n, false);
    CHECK(max_rel_err(c, expect) < 2e-5);
}

#if defined(__x86_64__)
TEST_CASE("scalar and avx2 kernel variants agree") {
    if (!kern::cpu_has_avx2()) return;
    int m = 77, n = 41, k = 129;
    auto a = random_vec(static_cast<int64_t>(m) * k, 21);
    auto b = random_vec(static_cast<int64_t>(k) * n, 22);
    std::vector<float> c_s(static_cast<size_t>(m) * n), c_v(c_s.size());
    kern::scalar::gemm_f32(a.data(), b.data(), c_s.data(), m, n, k, false);
    kern::avx2::gemm_f32(a.data(), b.data(), c_v.data(), m, n, k, false);
    CHECK(max_rel_err(c_v, c_s) < 2e-5);

    int rows = 300;
    auto at = random_vec(static_cast<int64_t>(rows) * m, 23);
    auto bt = random_vec(static_cast<int64_t>(rows) * n, 24);
    std::vector<float> t_s(static_cast<size_t>(m) * n), t_v(t_s.size());
    kern::scalar::gemm_tn_f32(at.data(), bt.data(), t_s.data(), rows, m, n, false);
    kern::avx2::gemm_tn_f32(at.data(), bt.data(), t_v.data(), rows, m, n, false);
    CHECK(max_rel_err(t_v, t_s) < 2e-5);

    auto x = random_vec(1003, 25);
    std::vector<float> y_s(x.size()), y_v(x.size());
    kern::scalar::silu_f32(x.data(), y_s.data(), x.size());
    kern::avx2::silu_f32(x.data(), y_v.data(), x.size());
    CHECK(max_rel_err(y_v, y_s) < 1e-6);

    auto w0 = random_vec(777, 26);
    auto g = random_vec(777, 27);
    std::vector<float> m_s(777, 0.1f), v_s(777, 0.2f), m_v = m_s, v_v = v_s;
    auto w_s = w0, w_v = w0;
    kern::scalar::adamw_f32(w_s.data(), m_s.data(), v_s.data(), g.data(), 777, 1e-3f, 0.9f,
                            0.999f, 1e-8f, 1e-2f, 0.1f, 0.001f);
    kern::avx2::adamw_f32(w_v.data(), m_v.data(), v_v.data(), g.data(), 777, 1e-3f, 0.9f,
                          0.999f, 1e-8f, 1e-2f, 0.1f, 0.001f);
    CHECK(max_rel_err(w_v, w_s) < 1e-5);
}
#endif

TEST_CASE("gemm results are independent of thread count") {
    int m = 203, n = 48, k = 96;
    auto a = random_vec(static_cast<int64_t>(m) * k, 31);
    auto b = random_vec(static_cast<int64_t>(k) * n, 32);
    std::vector<float> c1(static_cast<size_t>(m) * n), c4(c1.size());
    int saved = kern::max_threads();
    kern::set_max_threads(1);
    kern::gemm_f32(a.data(), b.data(), c1.data(), m, n, k, false);
    kern::set_max_threads(4);
    kern::gemm_f32(a.data(), b.data(), c4.data(), m, n, k, false);
    kern::set_max_threads(saved);
    CHECK(c1 == c4);  // bitwise
}

TEST_CASE("parallel_for covers the range exactly once") {
    std::vector<int> hits(1000, 0);
    kern::parallel_for(1000, 7, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) ++hits[i];
    });
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("SerialGuard forces inline execution") {
    kern::SerialGuard guard;
    std::vector<int> hits(100, 0);
    kern::parallel_for(100, 1, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) ++hits[i];
    });
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("axpy and dot behave") {
    auto x = random_vec(513, 41);
    auto y = random_vec(513, 42);
    auto y2 = y;
    kern::axpy_f32(0.5f, x.data(), y2.data(), 513);
    for (int i = 0; i < 513; ++i) CHECK(y2[i] == doctest::Approx(y[i] + 0.5f * x[i]));
    double d = 0.0;
    for (int i = 0; i < 513; ++i) d += static_cast<double>(x[i]) * y[i];
    CHECK(kern::dot_f32(x.data(), y.data(), 513) == doctest::Approx(d).epsilon(1e-5));
}
