#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "sfs/common.hpp"

namespace sfs {

// Dense float32 tensor in NHWC layout (channel fastest). 1-D/2-D data uses
// h = w = 1 or w = 1 as needed.
struct Tensor {
    int n = 0, h = 0, w = 0, c = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int n_, int h_, int w_, int c_)
        : n(n_), h(h_), w(w_), c(c_), v(static_cast<size_t>(n_) * h_ * w_ * c_, 0.0f) {}

    static Tensor like(const Tensor& o) { return Tensor(o.n, o.h, o.w, o.c); }

    int64_t size() const { return static_cast<int64_t>(n) * h * w * c; }
    float* data() { return v.data(); }
    const float* data() const { return v.data(); }

    float& at(int in, int ih, int iw, int ic) {
        return v[((static_cast<int64_t>(in) * h + ih) * w + iw) * c + ic];
    }
    float at(int in, int ih, int iw, int ic) const {
        return v[((static_cast<int64_t>(in) * h + ih) * w + iw) * c + ic];
    }
    float* ptr(int in, int ih, int iw, int ic = 0) {
        return &v[((static_cast<int64_t>(in) * h + ih) * w + iw) * c + ic];
    }
    const float* ptr(int in, int ih, int iw, int ic = 0) const {
        return &v[((static_cast<int64_t>(in) * h + ih) * w + iw) * c + ic];
    }

    void zero() { std::memset(v.data(), 0, v.size() * sizeof(float)); }

    bool same_shape(const Tensor& o) const {
        return n == o.n && h == o.h && w == o.w && c == o.c;
    }
};

}  // namespace sfs
