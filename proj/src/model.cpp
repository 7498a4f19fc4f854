#include "sfs/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "sfs/common.hpp"
#include "sfs/kernels.hpp"

namespace sfs::model {

namespace {

constexpr float kGnEps = 1e-5f;

// ---- im2col / col2im (NHWC, square kernel) ----

void im2col(const Tensor& x, int k, int stride, int pad, Tensor& cols, int* oh_out, int* ow_out) {
    int oh = (x.h + 2 * pad - k) / stride + 1;
    int ow = (x.w + 2 * pad - k) / stride + 1;
    *oh_out = oh;
    *ow_out = ow;
    int64_t rows = static_cast<int64_t>(x.n) * oh * ow;
    int kk = k * k * x.c;
    if (cols.n != rows || cols.c != kk) cols = Tensor(static_cast<int>(rows), 1, 1, kk);
    const int c = x.c;
    kern::parallel_for(rows, 64, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            int64_t t = r;
            int ox = static_cast<int>(t % ow);
            t /= ow;
            int oy = static_cast<int>(t % oh);
            int n = static_cast<int>(t / oh);
            float* dst = cols.data() + r * kk;
            for (int ky = 0; ky < k; ++ky) {
                int iy = oy * stride - pad + ky;
                for (int kx = 0; kx < k; ++kx) {
                    int ix = ox * stride - pad + kx;
                    if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) {
                        std::memset(dst, 0, sizeof(float) * c);
                    } else {
                        const float* src =
                            x.data() + ((static_cast<int64_t>(n) * x.h + iy) * x.w + ix) * c;
                        std::memcpy(dst, src, sizeof(float) * c);
                    }
                    dst += c;
                }
            }
        }
    });
}

void col2im(const Tensor& cols, int k, int stride, int pad, Tensor& dx) {
    dx.zero();
    int oh = (dx.h + 2 * pad - k) / stride + 1;
    int ow = (dx.w + 2 * pad - k) / stride + 1;
    int kk = k * k * dx.c;
    const int c = dx.c;
    // parallel over samples: each sample's image is owned by one range
    kern::parallel_for(dx.n, 1, [&](int64_t n0, int64_t n1) {
        for (int64_t n = n0; n < n1; ++n) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    int64_t r = (n * oh + oy) * ow + ox;
                    const float* src = cols.data() + r * kk;
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= dx.h) {
                            src += k * c;
                            continue;
                        }
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < dx.w) {
                                float* d =
                                    dx.data() + ((n * dx.h + iy) * dx.w + ix) * c;
                                for (int i = 0; i < c; ++i) d[i] += src[i];
                            }
                            src += c;
                        }
                    }
                }
            }
        }
    });
}

// ---- conv ----

void conv_forward(const ConvP& p, const Tensor& x, Tensor& y, ConvCtx& ctx) {
    ctx.x = x;
    Tensor cols;
    im2col(x, p.k, p.stride, p.pad, cols, &ctx.oh, &ctx.ow);
    int64_t m = cols.n;
    if (y.n != x.n || y.h != ctx.oh || y.w != ctx.ow || y.c != p.cout)
        y = Tensor(x.n, ctx.oh, ctx.ow, p.cout);
    kern::gemm_f32(cols.data(), p.w.w.data(), y.data(), static_cast<int>(m), p.cout,
                   p.k * p.k * p.cin, false);
    const float* b = p.b.w.data();
    kern::parallel_for(m, 256, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
            float* row = y.data() + r * p.cout;
            for (int j = 0; j < p.cout; ++j) row[j] += b[j];
        }
    });
}

void conv_backward(ConvP& p, const ConvCtx& ctx, const Tensor& dy, Tensor* dx,
                   bool accum_grads) {
    int kk = p.k * p.k * p.cin;
    Tensor cols;
    int oh, ow;
    im2col(ctx.x, p.k, p.stride, p.pad, cols, &oh, &ow);
    int64_t m = cols.n;
    if (accum_grads) {
        kern::gemm_tn_f32(cols.data(), dy.data(), p.w.g.data(), m, kk, p.cout, true);
        float* db = p.b.g.data();
        for (int64_t r = 0; r < m; ++r) {
            const float* row = dy.data() + r * p.cout;
            for (int j = 0; j < p.cout; ++j) db[j] += row[j];
        }
    }
    if (dx) {
        // dcols = dy * w^T
        std::vector<float> wt(static_cast<size_t>(p.cout) * kk);
        for (int i = 0; i < kk; ++i)
            for (int j = 0; j < p.cout; ++j)
                wt[static_cast<size_t>(j) * kk + i] = p.w.w.data()[static_cast<size_t>(i) * p.cout + j];
        Tensor dcols(static_cast<int>(m), 1, 1, kk);
        kern::gemm_f32(dy.data(), wt.data(), dcols.data(), static_cast<int>(m), kk, p.cout,
                       false);
        if (dx->n != ctx.x.n || dx->h != ctx.x.h || dx->w != ctx.x.w || dx->c != ctx.x.c)
            *dx = Tensor(ctx.x.n, ctx.x.h, ctx.x.w, ctx.x.c);
        col2im(dcols, p.k, p.stride, p.pad, *dx);
    }
}

// ---- linear ----

void linear_forward(const LinearP& p, const Tensor& x, Tensor& y, LinearCtx& ctx) {
    ctx.x = x;
    int64_t rows = x.size() / p.in;
    if (y.size() != rows * p.out) y = Tensor(static_cast<int>(rows), 1, 1, p.out);
    kern::gemm_f32(x.data(), p.w.w.data(), y.data(), static_cast<int>(rows), p.out, p.in, false);
    const float* b = p.b.w.data();
    for (int64_t r = 0; r < rows; ++r) {
        float* row = y.data() + r * p.out;
        for (int j = 0; j < p.out; ++j) row[j] += b[j];
    }
}

void linear_backward(LinearP& p, const LinearCtx& ctx, const Tensor& dy, Tensor* dx,
                     bool accum_grads) {
    int64_t rows = ctx.x.size() / p.in;
    if (accum_grads) {
        kern::gemm_tn_f32(ctx.x.data(), dy.data(), p.w.g.data(), rows, p.in, p.out, true);
        float* db = p.b.g.data();
        for (int64_t r = 0; r < rows; ++r) {
            const float* row = dy.data() + r * p.out;
            for (int j = 0; j < p.out; ++j) db[j] += row[j];
        }
    }
    if (dx) {
        std::vector<float> wt(static_cast<size_t>(p.out) * p.in);
        for (int i = 0; i < p.in; ++i)
            for (int j = 0; j < p.out; ++j)
                wt[static_cast<size_t>(j) * p.in + i] =
                    p.w.w.data()[static_cast<size_t>(i) * p.out + j];
        if (dx->size() != ctx.x.size()) *dx = Tensor::like(ctx.x);
        kern::gemm_f32(dy.data(), wt.data(), dx->data(), static_cast<int>(rows), p.in, p.out,
                       false);
    }
}

// ---- group norm (per-channel affine) ----

void groupnorm_forward(const GroupNormP& p, const Tensor& x, Tensor& y, GroupNormCtx& ctx) {
    ctx.x = x;
    int cpg = p.channels / p.groups;
    int64_t hw = static_cast<int64_t>(x.h) * x.w;
    ctx.mean.assign(static_cast<size_t>(x.n) * p.groups, 0.0f);
    ctx.inv_std.assign(static_cast<size_t>(x.n) * p.groups, 0.0f);
    if (!y.same_shape(x)) y = Tensor::like(x);
    const float* gamma = p.gamma.w.data();
    const float* beta = p.beta.w.data();
    kern::parallel_for(static_cast<int64_t>(x.n) * p.groups, 1, [&](int64_t g0, int64_t g1) {
        for (int64_t gg = g0; gg < g1; ++gg) {
            int n = static_cast<int>(gg / p.groups);
            int g = static_cast<int>(gg % p.groups);
            int c0 = g * cpg;
            double sum = 0.0, sq = 0.0;
            const float* base = x.data() + static_cast<int64_t>(n) * hw * x.c;
            for (int64_t px = 0; px < hw; ++px) {
                const float* v = base + px * x.c + c0;
                for (int c = 0; c < cpg; ++c) {
                    sum += v[c];
                    sq += static_cast<double>(v[c]) * v[c];
                }
            }
            double cnt = static_cast<double>(hw) * cpg;
            double mu = sum / cnt;
            double var = sq / cnt - mu * mu;
            float inv = static_cast<float>(1.0 / std::sqrt(var + kGnEps));
            ctx.mean[gg] = static_cast<float>(mu);
            ctx.inv_std[gg] = inv;
            float* ybase = y.data() + static_cast<int64_t>(n) * hw * x.c;
            for (int64_t px = 0; px < hw; ++px) {
                const float* v = base + px * x.c + c0;
                float* o = ybase + px * x.c + c0;
                for (int c = 0; c < cpg; ++c)
                    o[c] = gamma[c0 + c] * (v[c] - ctx.mean[gg]) * inv + beta[c0 + c];
            }
        }
    });
}

void groupnorm_backward(GroupNormP& p, const GroupNormCtx& ctx, const Tensor& dy, Tensor* dx,
                        bool accum_grads) {
    const Tensor& x = ctx.x;
    int cpg = p.channels / p.groups;
    int64_t hw = static_cast<int64_t>(x.h) * x.w;
    if (dx && !dx->same_shape(x)) *dx = Tensor::like(x);
    const float* gamma = p.gamma.w.data();

    // per-channel affine grads (serial: channels shared across samples)
    if (accum_grads) {
        float* dgamma = p.gamma.g.data();
        float* dbeta = p.beta.g.data();
        for (int n = 0; n < x.n; ++n) {
            for (int g = 0; g < p.groups; ++g) {
                int64_t gg = static_cast<int64_t>(n) * p.groups + g;
                float mu = ctx.mean[gg], inv = ctx.inv_std[gg];
                int c0 = g * cpg;
                const float* xb = x.data() + static_cast<int64_t>(n) * hw * x.c;
                const float* db = dy.data() + static_cast<int64_t>(n) * hw * x.c;
                for (int64_t px = 0; px < hw; ++px) {
                    const float* xv = xb + px * x.c + c0;
                    const float* dv = db + px * x.c + c0;
                    for (int c = 0; c < cpg; ++c) {
                        dgamma[c0 + c] += dv[c] * (xv[c] - mu) * inv;
                        dbeta[c0 + c] += dv[c];
                    }
                }
            }
        }
    }
    if (!dx) return;
    kern::parallel_for(static_cast<int64_t>(x.n) * p.groups, 1, [&](int64_t g0, int64_t g1) {
        for (int64_t gg = g0; gg < g1; ++gg) {
            int n = static_cast<int>(gg / p.groups);
            int g = static_cast<int>(gg % p.groups);
            int c0 = g * cpg;
            float mu = ctx.mean[gg], inv = ctx.inv_std[gg];
            double cnt = static_cast<double>(hw) * cpg;
            const float* xb = x.data() + static_cast<int64_t>(n) * hw * x.c;
            const float* db = dy.data() + static_cast<int64_t>(n) * hw * x.c;
            float* ob = dx->data() + static_cast<int64_t>(n) * hw * x.c;
            // dxhat = dy * gamma; reduce sums for the mean/var chain
            double s1 = 0.0, s2 = 0.0;  // sum(dxhat), sum(dxhat * xhat)
            for (int64_t px = 0; px < hw; ++px) {
                const float* xv = xb + px * x.c + c0;
                const float* dv = db + px * x.c + c0;
                for (int c = 0; c < cpg; ++c) {
                    double dxh = static_cast<double>(dv[c]) * gamma[c0 + c];
                    double xh = (xv[c] - mu) * inv;
                    s1 += dxh;
                    s2 += dxh * xh;
                }
            }
            for (int64_t px = 0; px < hw; ++px) {
                const float* xv = xb + px * x.c + c0;
                const float* dv = db + px * x.c + c0;
                float* ov = ob + px * x.c + c0;
                for (int c = 0; c < cpg; ++c) {
                    double dxh = static_cast<double>(dv[c]) * gamma[c0 + c];
                    double xh = (xv[c] - mu) * inv;
                    ov[c] = static_cast<float>(inv * (dxh - s1 / cnt - xh * s2 / cnt));
                }
            }
        }
    });
}

// ---- silu ----

void silu_forward(const Tensor& x, Tensor& y, SiluCtx& ctx) {
    ctx.x = x;
    if (!y.same_shape(x)) y = Tensor::like(x);
    kern::silu_f32(x.data(), y.data(), x.size());
}

void silu_backward(const SiluCtx& ctx, const Tensor& dy, Tensor& dx) {
    if (!dx.same_shape(ctx.x)) dx = Tensor::like(ctx.x);
    kern::silu_bwd_f32(ctx.x.data(), dy.data(), dx.data(), ctx.x.size());
}

// ---- resblock ----

void resblock_forward(const ResBlockP& p, const Tensor& x, const Tensor& temb, Tensor& y,
                      ResBlockCtx& ctx) {
    Tensor h, a;
    groupnorm_forward(p.gn1, x, h, ctx.gn1);
    silu_forward(h, a, ctx.act1);
    Tensor c1;
    conv_forward(p.conv1, a, c1, ctx.conv1);

    ctx.temb_in = temb;
    Tensor ts;
    silu_forward(temb, ts, ctx.act_t);
    Tensor tb;
    linear_forward(p.temb, ts, tb, ctx.temb);
    // broadcast per-channel bias over pixels
    int64_t hw = static_cast<int64_t>(c1.h) * c1.w;
    for (int n = 0; n < c1.n; ++n) {
        const float* trow = tb.data() + static_cast<int64_t>(n) * p.cout;
        float* base = c1.data() + static_cast<int64_t>(n) * hw * p.cout;
        for (int64_t px = 0; px < hw; ++px)
            for (int c = 0; c < p.cout; ++c) base[px * p.cout + c] += trow[c];
    }

    Tensor h2, a2, c2;
    groupnorm_forward(p.gn2, c1, h2, ctx.gn2);
    silu_forward(h2, a2, ctx.act2);
    conv_forward(p.conv2, a2, c2, ctx.conv2);

    if (p.has_skip) {
        Tensor sk;
        conv_forward(p.skip, x, sk, ctx.skip);
        if (!y.same_shape(c2)) y = Tensor::like(c2);
        kern::add_f32(c2.data(), sk.data(), y.data(), y.size());
    } else {
        if (!y.same_shape(c2)) y = Tensor::like(c2);
        kern::add_f32(c2.data(), x.data(), y.data(), y.size());
    }
}

// d_temb accumulates the time-embedding gradient shared across blocks.
void resblock_backward(ResBlockP& p, ResBlockCtx& ctx, const Tensor& dy, Tensor* dx,
                       Tensor* d_temb, bool accum_grads) {
    Tensor da2;
    conv_backward(p.conv2, ctx.conv2, dy, &da2, accum_grads);
    Tensor dh2;
    silu_backward(ctx.act2, da2, dh2);
    Tensor dc1;
    groupnorm_backward(p.gn2, ctx.gn2, dh2, &dc1, accum_grads);

    // split off the broadcast temb bias gradient
    int64_t hw = static_cast<int64_t>(dc1.h) * dc1.w;
    Tensor dtb(dc1.n, 1, 1, p.cout);
    for (int n = 0; n < dc1.n; ++n) {
        const float* base = dc1.data() + static_cast<int64_t>(n) * hw * p.cout;
        float* trow = dtb.data() + static_cast<int64_t>(n) * p.cout;
        for (int64_t px = 0; px < hw; ++px)
            for (int c = 0; c < p.cout; ++c) trow[c] += base[px * p.cout + c];
    }
    Tensor dts;
    linear_backward(p.temb, ctx.temb, dtb, &dts, accum_grads);
    Tensor dtemb_local;
    silu_backward(ctx.act_t, dts, dtemb_local);
    if (d_temb) kern::add_f32(d_temb->data(), dtemb_local.data(), d_temb->data(),
                              d_temb->size());

    Tensor da1;
    conv_backward(p.conv1, ctx.conv1, dc1, &da1, accum_grads);
    Tensor dh1;
    silu_backward(ctx.act1, da1, dh1);
    Tensor dx1;
    groupnorm_backward(p.gn1, ctx.gn1, dh1, dx ? &dx1 : nullptr, accum_grads);

    if (!dx) {
        if (p.has_skip) conv_backward(p.skip, ctx.skip, dy, nullptr, accum_grads);
        return;
    }
    if (p.has_skip) {
        Tensor dsk;
        conv_backward(p.skip, ctx.skip, dy, &dsk, accum_grads);
        if (!dx->same_shape(dx1)) *dx = Tensor::like(dx1);
        kern::add_f32(dx1.data(), dsk.data(), dx->data(), dx->size());
    } else {
        if (!dx->same_shape(dx1)) *dx = Tensor::like(dx1);
        kern::add_f32(dx1.data(), dy.data(), dx->data(), dx->size());
    }
}

// ---- attention (full, over h*w tokens) ----

void attention_forward(const AttentionP& p, const Tensor& x, Tensor& y, AttentionCtx& ctx) {
    int tokens = x.h * x.w;
    int C = p.channels, H = p.heads, dh = C / H;
    float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor xn;
    groupnorm_forward(p.gn, x, xn, ctx.gn);
    Tensor qkv;
    linear_forward(p.qkv, xn, qkv, ctx.qkv);  // [N*T, 3C]

    ctx.q = Tensor(x.n, H, tokens, dh);
    ctx.k = Tensor(x.n, H, tokens, dh);
    ctx.v = Tensor(x.n, H, tokens, dh);
    for (int n = 0; n < x.n; ++n)
        for (int t = 0; t < tokens; ++t) {
            const float* row = qkv.data() + (static_cast<int64_t>(n) * tokens + t) * 3 * C;
            for (int h = 0; h < H; ++h)
                for (int d = 0; d < dh; ++d) {
                    ctx.q.at(n, h, t, d) = row[h * dh + d] * scale;
                    ctx.k.at(n, h, t, d) = row[C + h * dh + d];
                    ctx.v.at(n, h, t, d) = row[2 * C + h * dh + d];
                }
        }

    ctx.attn = Tensor(x.n, H, tokens, tokens);
    for (int n = 0; n < x.n; ++n)
        for (int h = 0; h < H; ++h)
            for (int t = 0; t < tokens; ++t) {
                float* arow = &ctx.attn.at(n, h, t, 0);
                float mx = -1e30f;
                for (int u = 0; u < tokens; ++u) {
                    float s = 0.0f;
                    for (int d = 0; d < dh; ++d)
                        s += ctx.q.at(n, h, t, d) * ctx.k.at(n, h, u, d);
                    arow[u] = s;
                    mx = std::max(mx, s);
                }
                float z = 0.0f;
                for (int u = 0; u < tokens; ++u) {
                    arow[u] = std::exp(arow[u] - mx);
                    z += arow[u];
                }
                for (int u = 0; u < tokens; ++u) arow[u] /= z;
            }

    ctx.attn_out = Tensor(x.n, 1, tokens, C);
    for (int n = 0; n < x.n; ++n)
        for (int h = 0; h < H; ++h)
            for (int t = 0; t < tokens; ++t)
                for (int d = 0; d < dh; ++d) {
                    float acc = 0.0f;
                    for (int u = 0; u < tokens; ++u)
                        acc += ctx.attn.at(n, h, t, u) * ctx.v.at(n, h, u, d);
                    ctx.attn_out.at(n, 0, t, h * dh + d) = acc;
                }

    Tensor proj;
    linear_forward(p.proj, ctx.attn_out, proj, ctx.proj);
    if (!y.same_shape(x)) y = Tensor::like(x);
    kern::add_f32(proj.data(), x.data(), y.data(), y.size());  // residual
}

void attention_backward(AttentionP& p, AttentionCtx& ctx, const Tensor& dy, Tensor* dx,
                        bool accum_grads) {
    const Tensor& x = ctx.gn.x;
    int tokens = x.h * x.w;
    int C = p.channels, H = p.heads, dh = C / H;
    float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor dao;
    linear_backward(p.proj, ctx.proj, dy, &dao, accum_grads);

    Tensor dq(x.n, H, tokens, dh), dk(x.n, H, tokens, dh), dv(x.n, H, tokens, dh);
    for (int n = 0; n < x.n; ++n)
        for (int h = 0; h < H; ++h)
            for (int t = 0; t < tokens; ++t) {
                const float* drow =
                    dao.data() + (static_cast<int64_t>(n) * tokens + t) * C + h * dh;
                // d(attn row)
                std::vector<float> datt(tokens);
                for (int u = 0; u < tokens; ++u) {
                    float acc = 0.0f;
                    for (int d = 0; d < dh; ++d) acc += drow[d] * ctx.v.at(n, h, u, d);
                    datt[u] = acc;
                }
                // dv += attn^T * dао
                for (int u = 0; u < tokens; ++u) {
                    float a = ctx.attn.at(n, h, t, u);
                    for (int d = 0; d < dh; ++d) dv.at(n, h, u, d) += a * drow[d];
                }
                // softmax backward: ds = a .* (datt - sum(datt .* a))
                float dotv = 0.0f;
                for (int u = 0; u < tokens; ++u) dotv += datt[u] * ctx.attn.at(n, h, t, u);
                for (int u = 0; u < tokens; ++u) {
                    float ds = ctx.attn.at(n, h, t, u) * (datt[u] - dotv);
                    for (int d = 0; d < dh; ++d) {
                        dq.at(n, h, t, d) += ds * ctx.k.at(n, h, u, d);
                        dk.at(n, h, u, d) += ds * ctx.q.at(n, h, t, d);
                    }
                }
            }

    // assemble d(qkv) rows; q carried the scale factor
    Tensor dqkv(x.n * tokens, 1, 1, 3 * C);
    for (int n = 0; n < x.n; ++n)
        for (int t = 0; t < tokens; ++t) {
            float* row = dqkv.data() + (static_cast<int64_t>(n) * tokens + t) * 3 * C;
            for (int h = 0; h < H; ++h)
                for (int d = 0; d < dh; ++d) {
                    row[h * dh + d] = dq.at(n, h, t, d) * scale;
                    row[C + h * dh + d] = dk.at(n, h, t, d);
                    row[2 * C + h * dh + d] = dv.at(n, h, t, d);
                }
        }

    Tensor dxn;
    linear_backward(p.qkv, ctx.qkv, dqkv, &dxn, accum_grads);
    // reshape dxn rows back to image layout (same memory order)
    dxn.n = x.n;
    dxn.h = x.h;
    dxn.w = x.w;
    dxn.c = x.c;
    Tensor dxg;
    groupnorm_backward(p.gn, ctx.gn, dxn, dx ? &dxg : nullptr, accum_grads);
    if (dx) {
        if (!dx->same_shape(x)) *dx = Tensor::like(x);
        kern::add_f32(dxg.data(), dy.data(), dx->data(), dx->size());  // residual path
    }
}

// ---- upsample (nearest 2x) ----

void upsample2_forward(const Tensor& x, Tensor& y) {
    if (y.n != x.n || y.h != x.h * 2 || y.w != x.w * 2 || y.c != x.c)
        y = Tensor(x.n, x.h * 2, x.w * 2, x.c);
    for (int n = 0; n < x.n; ++n)
        for (int i = 0; i < y.h; ++i)
            for (int j = 0; j < y.w; ++j)
                std::memcpy(y.ptr(n, i, j), x.ptr(n, i / 2, j / 2), sizeof(float) * x.c);
}

void upsample2_backward(const Tensor& dy, Tensor& dx, int src_h, int src_w) {
    if (dx.n != dy.n || dx.h != src_h || dx.w != src_w || dx.c != dy.c)
        dx = Tensor(dy.n, src_h, src_w, dy.c);
    dx.zero();
    for (int n = 0; n < dy.n; ++n)
        for (int i = 0; i < dy.h; ++i)
            for (int j = 0; j < dy.w; ++j) {
                float* d = dx.ptr(n, i / 2, j / 2);
                const float* s = dy.ptr(n, i, j);
                for (int c = 0; c < dy.c; ++c) d[c] += s[c];
            }
}

void concat_channels(const Tensor& a, const Tensor& b, Tensor& y) {
    if (y.n != a.n || y.h != a.h || y.w != a.w || y.c != a.c + b.c)
        y = Tensor(a.n, a.h, a.w, a.c + b.c);
    int64_t px = static_cast<int64_t>(a.n) * a.h * a.w;
    for (int64_t i = 0; i < px; ++i) {
        std::memcpy(y.data() + i * y.c, a.data() + i * a.c, sizeof(float) * a.c);
        std::memcpy(y.data() + i * y.c + a.c, b.data() + i * b.c, sizeof(float) * b.c);
    }
}

void split_channels(const Tensor& dy, Tensor& da, Tensor& db, int ca, int cb) {
    if (da.c != ca || da.n != dy.n || da.h != dy.h || da.w != dy.w)
        da = Tensor(dy.n, dy.h, dy.w, ca);
    if (db.c != cb || db.n != dy.n || db.h != dy.h || db.w != dy.w)
        db = Tensor(dy.n, dy.h, dy.w, cb);
    int64_t px = static_cast<int64_t>(dy.n) * dy.h * dy.w;
    for (int64_t i = 0; i < px; ++i) {
        std::memcpy(da.data() + i * ca, dy.data() + i * dy.c, sizeof(float) * ca);
        std::memcpy(db.data() + i * cb, dy.data() + i * dy.c + ca, sizeof(float) * cb);
    }
}

void sinusoidal_embedding(const std::vector<int>& t, int dim, Tensor& out) {
    int half = dim / 2;
    if (out.n != static_cast<int>(t.size()) || out.c != dim)
        out = Tensor(static_cast<int>(t.size()), 1, 1, dim);
    for (size_t b = 0; b < t.size(); ++b) {
        for (int i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * i / (half - 1));
            out.data()[b * dim + i] = static_cast<float>(std::sin(t[b] * freq));
            out.data()[b * dim + half + i] = static_cast<float>(std::cos(t[b] * freq));
        }
    }
}

}  // namespace

namespace {

void init_conv(ConvP& p, int cin, int cout, int k, int stride, int pad, const std::string& name) {
    p.cin = cin;
    p.cout = cout;
    p.k = k;
    p.stride = stride;
    p.pad = pad;
    p.w.name = name + ".w";
    p.w.w = Tensor(k * k * cin, 1, 1, cout);
    p.w.g = Tensor(k * k * cin, 1, 1, cout);
    p.b.name = name + ".b";
    p.b.w = Tensor(1, 1, 1, cout);
    p.b.g = Tensor(1, 1, 1, cout);
}

void init_linear(LinearP& p, int in, int out, const std::string& name) {
    p.in = in;
    p.out = out;
    p.w.name = name + ".w";
    p.w.w = Tensor(in, 1, 1, out);
    p.w.g = Tensor(in, 1, 1, out);
    p.b.name = name + ".b";
    p.b.w = Tensor(1, 1, 1, out);
    p.b.g = Tensor(1, 1, 1, out);
}

void init_gn(GroupNormP& p, int channels, int groups, const std::string& name) {
    p.channels = channels;
    p.groups = groups;
    p.gamma.name = name + ".gamma";
    p.gamma.w = Tensor(1, 1, 1, channels);
    p.gamma.g = Tensor(1, 1, 1, channels);
    p.beta.name = name + ".beta";
    p.beta.w = Tensor(1, 1, 1, channels);
    p.beta.g = Tensor(1, 1, 1, channels);
}

void init_resblock(ResBlockP& p, int cin, int cout, int temb_dim, int groups,
                   const std::string& name) {
    p.cin = cin;
    p.cout = cout;
    init_gn(p.gn1, cin, groups, name + ".gn1");
    init_conv(p.conv1, cin, cout, 3, 1, 1, name + ".conv1");
    init_linear(p.temb, temb_dim, cout, name + ".temb");
    init_gn(p.gn2, cout, groups, name + ".gn2");
    init_conv(p.conv2, cout, cout, 3, 1, 1, name + ".conv2");
    p.has_skip = cin != cout;
    if (p.has_skip) init_conv(p.skip, cin, cout, 1, 1, 0, name + ".skip");
}

void init_attention(AttentionP& p, int channels, int heads, int groups, const std::string& name) {
    p.channels = channels;
    p.heads = heads;
    init_gn(p.gn, channels, groups, name + ".gn");
    init_linear(p.qkv, channels, 3 * channels, name + ".qkv");
    init_linear(p.proj, channels, channels, name + ".proj");
}

void collect_conv(ConvP& p, std::vector<Param*>& out) {
    out.push_back(&p.w);
    out.push_back(&p.b);
}
void collect_linear(LinearP& p, std::vector<Param*>& out) {
    out.push_back(&p.w);
    out.push_back(&p.b);
}
void collect_gn(GroupNormP& p, std::vector<Param*>& out) {
    out.push_back(&p.gamma);
    out.push_back(&p.beta);
}
void collect_resblock(ResBlockP& p, std::vector<Param*>& out) {
    collect_gn(p.gn1, out);
    collect_conv(p.conv1, out);
    collect_linear(p.temb, out);
    collect_gn(p.gn2, out);
    collect_conv(p.conv2, out);
    if (p.has_skip) collect_conv(p.skip, out);
}

void he_init(Tensor& w, int fan_in, Rng& rng) {
    float std = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : w.v) v = rng.gaussian_f() * std;
}

}  // namespace

UNet::UNet(const UNetConfig& cfg) : cfg_(cfg) {
    SFS_CHECK(cfg.mults.size() == 4, "UNet: exactly 4 stages expected");
    int w0 = cfg.width(0), w1 = cfg.width(1), w2 = cfg.width(2), w3 = cfg.width(3);
    init_linear(temb_fc1_, cfg.base_width, cfg.temb_dim, "temb_fc1");
    init_linear(temb_fc2_, cfg.temb_dim, cfg.temb_dim, "temb_fc2");
    init_conv(conv_in_, 4, w0, 3, 1, 1, "conv_in");
    enc_.resize(4);
    init_resblock(enc_[0], w0, w0, cfg.temb_dim, cfg.groups, "enc0");
    init_resblock(enc_[1], w0, w1, cfg.temb_dim, cfg.groups, "enc1");
    init_resblock(enc_[2], w1, w2, cfg.temb_dim, cfg.groups, "enc2");
    init_resblock(enc_[3], w2, w3, cfg.temb_dim, cfg.groups, "enc3");
    down_.resize(3);
    init_conv(down_[0], w0, w0, 3, 2, 1, "down0");
    init_conv(down_[1], w1, w1, 3, 2, 1, "down1");
    init_conv(down_[2], w2, w2, 3, 2, 1, "down2");
    init_resblock(mid1_, w3, w3, cfg.temb_dim, cfg.groups, "mid1");
    init_attention(attn_, w3, cfg.attn_heads, cfg.groups, "attn");
    init_resblock(mid2_, w3, w3, cfg.temb_dim, cfg.groups, "mid2");
    dec_.resize(4);
    init_resblock(dec_[3], w3 + w3, w3, cfg.temb_dim, cfg.groups, "dec3");
    init_resblock(dec_[2], w2 + w2, w2, cfg.temb_dim, cfg.groups, "dec2");
    init_resblock(dec_[1], w1 + w1, w1, cfg.temb_dim, cfg.groups, "dec1");
    init_resblock(dec_[0], w0 + w0, w0, cfg.temb_dim, cfg.groups, "dec0");
    up_.resize(3);
    init_conv(up_[2], w3, w2, 3, 1, 1, "up2");  // 2 -> 4
    init_conv(up_[1], w2, w1, 3, 1, 1, "up1");  // 4 -> 8
    init_conv(up_[0], w1, w0, 3, 1, 1, "up0");  // 8 -> 16
    init_gn(out_gn_, w0, cfg.groups, "out_gn");
    init_conv(out_conv_, w0, 3, 3, 1, 1, "out_conv");
}

UNet::~UNet() = default;

void UNet::collect_params(std::vector<Param*>& out) {
    collect_linear(temb_fc1_, out);
    collect_linear(temb_fc2_, out);
    collect_conv(conv_in_, out);
    for (auto& r : enc_) collect_resblock(r, out);
    for (auto& d : down_) collect_conv(d, out);
    collect_resblock(mid1_, out);
    collect_gn(attn_.gn, out);
    collect_linear(attn_.qkv, out);
    collect_linear(attn_.proj, out);
    collect_resblock(mid2_, out);
    for (int i = 3; i >= 0; --i) collect_resblock(dec_[i], out);
    for (int i = 2; i >= 0; --i) collect_conv(up_[i], out);
    collect_gn(out_gn_, out);
    collect_conv(out_conv_, out);
}

std::vector<Param*> UNet::params() {
    std::vector<Param*> out;
    collect_params(out);
    return out;
}

std::vector<const Param*> UNet::params() const {
    std::vector<Param*> out;
    const_cast<UNet*>(this)->collect_params(out);
    return {out.begin(), out.end()};
}

int64_t UNet::param_count() const {
    int64_t n = 0;
    for (const Param* p : params()) n += p->size();
    return n;
}

void UNet::init_params(uint64_t seed) {
    Rng rng(mix_seed(seed, 0x0de1));
    for (Param* p : params()) {
        // defaults: zeros for biases/beta, ones for gamma
        if (p->name.ends_with(".gamma")) {
            for (auto& v : p->w.v) v = 1.0f;
        } else {
            p->w.zero();
        }
        p->g.zero();
    }
    auto he_conv = [&](ConvP& c) { he_init(c.w.w, c.k * c.k * c.cin, rng); };
    auto he_lin = [&](LinearP& l) { he_init(l.w.w, l.in, rng); };
    he_lin(temb_fc1_);
    he_lin(temb_fc2_);
    he_conv(conv_in_);
    for (auto& r : enc_) {
        he_conv(r.conv1);
        he_lin(r.temb);
        if (r.has_skip) he_conv(r.skip);
        // conv2 stays zero: blocks start as identity-plus-skip
    }
    for (auto& d : down_) he_conv(d);
    he_conv(mid1_.conv1);
    he_lin(mid1_.temb);
    if (mid1_.has_skip) he_conv(mid1_.skip);
    he_lin(attn_.qkv);
    // attn.proj stays zero: attention starts as identity
    he_conv(mid2_.conv1);
    he_lin(mid2_.temb);
    if (mid2_.has_skip) he_conv(mid2_.skip);
    for (int i = 3; i >= 0; --i) {
        he_conv(dec_[i].conv1);
        he_lin(dec_[i].temb);
        if (dec_[i].has_skip) he_conv(dec_[i].skip);
    }
    for (auto& u : up_) he_conv(u);
    // out_conv stays zero: the untrained model predicts zero noise
}

void UNet::zero_grads() {
    for (Param* p : params()) p->g.zero();
}

UNetState* UNet::new_state() const { return new UNetState(); }

void UNet::forward(UNetState& s, const Tensor& x4, const std::vector<int>& t, Tensor& eps) const {
    SFS_CHECK(x4.c == 4 && x4.h == cfg_.d && x4.w == cfg_.d, "UNet: input must be [B,d,d,4]");
    SFS_CHECK(static_cast<int>(t.size()) == x4.n, "UNet: one timestep per sample");
    auto* self = const_cast<UNet*>(this);  // forward only reads params

    sinusoidal_embedding(t, cfg_.base_width, s.temb_sin);
    linear_forward(self->temb_fc1_, s.temb_sin, s.temb1, s.fc1);
    silu_forward(s.temb1, s.temb1s, s.fc_act);
    linear_forward(self->temb_fc2_, s.temb1s, s.temb, s.fc2);

    conv_forward(self->conv_in_, x4, s.x_in, s.conv_in);

    s.enc_out.resize(4);
    s.enc_ctx.resize(4);
    s.down_out.resize(3);
    s.down_ctx.resize(3);
    const Tensor* cur = &s.x_in;
    for (int i = 0; i < 4; ++i) {
        resblock_forward(self->enc_[i], *cur, s.temb, s.enc_out[i], s.enc_ctx[i]);
        cur = &s.enc_out[i];
        if (i < 3) {
            conv_forward(self->down_[i], *cur, s.down_out[i], s.down_ctx[i]);
            cur = &s.down_out[i];
        }
    }

    resblock_forward(self->mid1_, *cur, s.temb, s.mid1_out, s.mid1_ctx);
    attention_forward(self->attn_, s.mid1_out, s.attn_out, s.attn_ctx);
    resblock_forward(self->mid2_, s.attn_out, s.temb, s.mid2_out, s.mid2_ctx);

    s.cat_in.resize(4);
    s.dec_ctx.resize(4);
    s.dec_out.resize(4);
    s.up_in.resize(3);
    s.up_ctx.resize(3);
    s.up_out.resize(3);
    cur = &s.mid2_out;
    for (int i = 3; i >= 0; --i) {
        concat_channels(*cur, s.enc_out[i], s.cat_in[i]);
        resblock_forward(self->dec_[i], s.cat_in[i], s.temb, s.dec_out[i], s.dec_ctx[i]);
        cur = &s.dec_out[i];
        if (i > 0) {
            upsample2_forward(*cur, s.up_in[i - 1]);
            conv_forward(self->up_[i - 1], s.up_in[i - 1], s.up_out[i - 1], s.up_ctx[i - 1]);
            cur = &s.up_out[i - 1];
        }
    }

    groupnorm_forward(self->out_gn_, *cur, s.out_gn_t, s.out_gn_ctx);
    silu_forward(s.out_gn_t, s.out_act_t, s.out_act);
    conv_forward(self->out_conv_, s.out_act_t, eps, s.out_conv_ctx);
}

void UNet::backward(UNetState& s, const Tensor& deps, Tensor* dx4, bool accum_param_grads) {
    Tensor d_temb(s.temb.n, 1, 1, cfg_.temb_dim);

    Tensor da;
    conv_backward(out_conv_, s.out_conv_ctx, deps, &da, accum_param_grads);
    Tensor dgn;
    silu_backward(s.out_act, da, dgn);
    Tensor dcur;
    groupnorm_backward(out_gn_, s.out_gn_ctx, dgn, &dcur, accum_param_grads);

    std::vector<Tensor> dskip(4);
    for (int i = 0; i <= 3; ++i) {
        if (i > 0) {
            Tensor dup_in;
            conv_backward(up_[i - 1], s.up_ctx[i - 1], dcur, &dup_in, accum_param_grads);
            upsample2_backward(dup_in, dcur, s.dec_out[i].h, s.dec_out[i].w);
        }
        Tensor dcat;
        resblock_backward(dec_[i], s.dec_ctx[i], dcur, &dcat, &d_temb, accum_param_grads);
        Tensor dprev;
        int cprev = s.cat_in[i].c - s.enc_out[i].c;
        split_channels(dcat, dprev, dskip[i], cprev, s.enc_out[i].c);
        dcur = dprev;
    }

    Tensor dmid;
    resblock_backward(mid2_, s.mid2_ctx, dcur, &dmid, &d_temb, accum_param_grads);
    Tensor dattn;
    attention_backward(attn_, s.attn_ctx, dmid, &dattn, accum_param_grads);
    resblock_backward(mid1_, s.mid1_ctx, dattn, &dcur, &d_temb, accum_param_grads);

    for (int i = 3; i >= 0; --i) {
        if (i < 3) {
            Tensor denc;
            conv_backward(down_[i], s.down_ctx[i], dcur, &denc, accum_param_grads);
            dcur = denc;
        }
        kern::add_f32(dcur.data(), dskip[i].data(), dcur.data(), dcur.size());
        Tensor dprev;
        resblock_backward(enc_[i], s.enc_ctx[i], dcur, &dprev, &d_temb, accum_param_grads);
        dcur = dprev;
    }

    conv_backward(conv_in_, s.conv_in, dcur, dx4, accum_param_grads);

    if (accum_param_grads) {
        Tensor dt1s;
        linear_backward(temb_fc2_, s.fc2, d_temb, &dt1s, true);
        Tensor dt1;
        silu_backward(s.fc_act, dt1s, dt1);
        linear_backward(temb_fc1_, s.fc1, dt1, nullptr, true);
    }
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[8] = {'S', 'F', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::FILE* f, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    if (std::fwrite(b, 1, 4, f) != 4) throw IoError("checkpoint write failed");
}

uint32_t get_u32(std::FILE* f) {
    uint8_t b[4];
    if (std::fread(b, 1, 4, f) != 4) throw IoError("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | b[1] << 8 | b[2] << 16 |
           static_cast<uint32_t>(b[3]) << 24;
}

void put_u64(std::FILE* f, uint64_t v) {
    put_u32(f, static_cast<uint32_t>(v));
    put_u32(f, static_cast<uint32_t>(v >> 32));
}

uint64_t get_u64(std::FILE* f) {
    uint64_t lo = get_u32(f);
    uint64_t hi = get_u32(f);
    return lo | hi << 32;
}

void put_blob(std::FILE* f, const float* data, size_t n) {
    if (std::fwrite(data, sizeof(float), n, f) != n) throw IoError("checkpoint write failed");
}

void get_blob(std::FILE* f, float* data, size_t n) {
    if (std::fread(data, sizeof(float), n, f) != n) throw IoError("checkpoint truncated");
}

struct Closer {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

UNetConfig read_header(std::FILE* f, int* T, int* epoch, bool* has_adam) {
    char magic[8];
    if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("not a checkpoint file (bad magic)");
    uint32_t version = get_u32(f);
    if (version != kVersion)
        throw IoError("checkpoint format version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kVersion) + ")");
    UNetConfig cfg;
    *T = static_cast<int>(get_u32(f));
    cfg.d = static_cast<int>(get_u32(f));
    cfg.base_width = static_cast<int>(get_u32(f));
    cfg.temb_dim = static_cast<int>(get_u32(f));
    cfg.groups = static_cast<int>(get_u32(f));
    cfg.attn_heads = static_cast<int>(get_u32(f));
    uint32_t nm = get_u32(f);
    cfg.mults.resize(nm);
    for (auto& m : cfg.mults) m = static_cast<int>(get_u32(f));
    *epoch = static_cast<int>(get_u32(f));
    *has_adam = get_u32(f) != 0;
    return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const UNet& model, const CheckpointExtra& extra) {
    std::string tmp = path + ".tmp";
    std::unique_ptr<std::FILE, Closer> f(std::fopen(tmp.c_str(), "wb"));
    if (!f) throw IoError("cannot open " + tmp);
    const UNetConfig& cfg = model.config();
    if (std::fwrite(kMagic, 1, 8, f.get()) != 8) throw IoError("checkpoint write failed");
    put_u32(f.get(), kVersion);
    put_u32(f.get(), static_cast<uint32_t>(extra.T));
    put_u32(f.get(), static_cast<uint32_t>(cfg.d));
    put_u32(f.get(), static_cast<uint32_t>(cfg.base_width));
    put_u32(f.get(), static_cast<uint32_t>(cfg.temb_dim));
    put_u32(f.get(), static_cast<uint32_t>(cfg.groups));
    put_u32(f.get(), static_cast<uint32_t>(cfg.attn_heads));
    put_u32(f.get(), static_cast<uint32_t>(cfg.mults.size()));
    for (int m : cfg.mults) put_u32(f.get(), static_cast<uint32_t>(m));
    put_u32(f.get(), static_cast<uint32_t>(extra.epoch));
    put_u32(f.get(), extra.has_adam ? 1 : 0);

    auto ps = model.params();
    put_u32(f.get(), static_cast<uint32_t>(ps.size()));
    for (const Param* p : ps) {
        uint32_t len = static_cast<uint32_t>(p->name.size());
        put_u32(f.get(), len);
        if (std::fwrite(p->name.data(), 1, len, f.get()) != len)
            throw IoError("checkpoint write failed");
        put_u32(f.get(), static_cast<uint32_t>(p->size()));
    }
    for (const Param* p : ps) put_blob(f.get(), p->w.data(), static_cast<size_t>(p->size()));
    if (extra.has_adam) {
        put_u64(f.get(), static_cast<uint64_t>(extra.adam.step));
        SFS_CHECK(extra.adam.m.size() == ps.size() && extra.adam.v.size() == ps.size(),
                  "save_checkpoint: adam state size mismatch");
        for (size_t i = 0; i < ps.size(); ++i)
            put_blob(f.get(), extra.adam.m[i].data(), extra.adam.m[i].size());
        for (size_t i = 0; i < ps.size(); ++i)
            put_blob(f.get(), extra.adam.v[i].data(), extra.adam.v[i].size());
    }
    f.reset();
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw IoError("cannot move checkpoint into place: " + path);
}

void load_checkpoint(const std::string& path, UNet& model, CheckpointExtra* extra) {
    std::unique_ptr<std::FILE, Closer> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);
    int T = 0, epoch = 0;
    bool has_adam = false;
    UNetConfig cfg = read_header(f.get(), &T, &epoch, &has_adam);
    if (!(cfg == model.config()))
        throw ConfigError("checkpoint architecture does not match the model");

    auto ps = model.params();
    uint32_t np = get_u32(f.get());
    if (np != ps.size()) throw IoError("checkpoint parameter count mismatch");
    for (Param* p : ps) {
        uint32_t len = get_u32(f.get());
        std::string name(len, '\0');
        if (std::fread(name.data(), 1, len, f.get()) != len) throw IoError("checkpoint truncated");
        if (name != p->name) throw IoError("checkpoint parameter order mismatch at " + name);
        uint32_t numel = get_u32(f.get());
        if (numel != static_cast<uint32_t>(p->size()))
            throw IoError("checkpoint parameter size mismatch at " + name);
    }
    for (Param* p : ps) get_blob(f.get(), p->w.data(), static_cast<size_t>(p->size()));
    if (extra) {
        extra->T = T;
        extra->epoch = epoch;
        extra->has_adam = has_adam;
    }
    if (has_adam) {
        AdamState st;
        st.step = static_cast<int64_t>(get_u64(f.get()));
        st.m.resize(ps.size());
        st.v.resize(ps.size());
        for (size_t i = 0; i < ps.size(); ++i) {
            st.m[i].resize(static_cast<size_t>(ps[i]->size()));
            get_blob(f.get(), st.m[i].data(), st.m[i].size());
        }
        for (size_t i = 0; i < ps.size(); ++i) {
            st.v[i].resize(static_cast<size_t>(ps[i]->size()));
            get_blob(f.get(), st.v[i].data(), st.v[i].size());
        }
        if (extra) extra->adam = std::move(st);
    }
}

UNetConfig peek_checkpoint_config(const std::string& path, int* T) {
    std::unique_ptr<std::FILE, Closer> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);
    int tt = 0, epoch = 0;
    bool has_adam = false;
    UNetConfig cfg = read_header(f.get(), &tt, &epoch, &has_adam);
    if (T) *T = tt;
    return cfg;
}

}  // namespace sfs::model
