#include "sfs/guidance.hpp"

#include <cmath>
#include <fstream>
#include <memory>

#include "sfs/kernels.hpp"
#include "sfs/rng.hpp"

namespace sfs::guide {

namespace {

constexpr double kDegenerate = 1e-12;

// d/du acos(u), guarded at |u| -> 1 where the clamp makes the loss flat.
inline double dacos(double u) {
    double s = 1.0 - u * u;
    if (s < 1e-20) return 0.0;
    return -1.0 / std::sqrt(s);
}

// Gradient sink over one patch's raw values; null means "loss only".
struct Grad3 {
    double* g = nullptr;
    void add(int i, int j, int width, const Vec3& v) {
        if (!g) return;
        double* p = g + (static_cast<size_t>(i) * width + j) * 3;
        p[0] += v.x;
        p[1] += v.y;
        p[2] += v.z;
    }
};

// One directed seam term: acos(clamp(normalize(2b - a) . normalize(c))).
// Gradients (scaled by `scale`) accumulate into ga/gb/gc when non-null.
double seam_term(const Vec3& a, const Vec3& b, const Vec3& c, double scale, Vec3* ga, Vec3* gb,
                 Vec3* gc) {
    Vec3 e = 2.0 * b - a;
    double elen = e.norm();
    double clen = c.norm();
    if (elen < kDegenerate || clen < kDegenerate) return kPi;  // max penalty, flat
    Vec3 eh = e * (1.0 / elen);
    Vec3 ch = c * (1.0 / clen);
    double u = eh.dot(ch);
    double uc = std::clamp(u, -1.0, 1.0);
    double term = std::acos(uc);
    double du = dacos(uc) * scale;
    if (du != 0.0 && (ga || gb || gc)) {
        Vec3 de = (ch - u * eh) * (1.0 / elen);
        Vec3 dc = (eh - u * ch) * (1.0 / clen);
        if (ga) *ga += du * -1.0 * de;
        if (gb) *gb += du * 2.0 * de;
        if (gc) *gc += du * dc;
    }
    return term;
}

// Unscaled seam loss; gradient contributions scaled by `scale`.
double seam_loss_grad(const geom::NormalField& u, const geom::NormalField& v, bool horizontal,
                      Grad3 gu, Grad3 gv, double scale) {
    int d = u.height;
    double total = 0.0;
    for (int s = 0; s < d; ++s) {
        int n1i, n1j, n2i, n2j, m1i, m1j, m2i, m2j;
        if (horizontal) {  // u left of v
            n1i = s; n1j = d - 2;
            n2i = s; n2j = d - 1;
            m1i = s; m1j = 0;
            m2i = s; m2j = 1;
        } else {  // u above v
            n1i = d - 2; n1j = s;
            n2i = d - 1; n2j = s;
            m1i = 0; m1j = s;
            m2i = 1; m2j = s;
        }
        if (u.is_background(n1i, n1j) || u.is_background(n2i, n2j) ||
            v.is_background(m1i, m1j) || v.is_background(m2i, m2j))
            continue;
        Vec3 n1 = u.at(n1i, n1j), n2 = u.at(n2i, n2j);
        Vec3 m1 = v.at(m1i, m1j), m2 = v.at(m2i, m2j);

        Vec3 gn1{}, gn2{}, gm1{}, gm2{};
        total += seam_term(n1, n2, m1, scale, &gn1, &gn2, &gm1);
        total += seam_term(m2, m1, n2, scale, &gm2, &gm1, &gn2);
        gu.add(n1i, n1j, d, gn1);
        gu.add(n2i, n2j, d, gn2);
        gv.add(m1i, m1j, d, gm1);
        gv.add(m2i, m2j, d, gm2);
    }
    return total;
}

// Unscaled integrability loss; gradient contributions scaled by `scale`.
double integ_loss_grad(const geom::NormalField& patch, Grad3 g, double scale) {
    int d = patch.height, w = patch.width;
    std::vector<double> pq(static_cast<size_t>(d) * w * 2, 0.0);
    std::vector<double> dpdv(static_cast<size_t>(d) * w * 3, 0.0);
    std::vector<double> dqdv(static_cast<size_t>(d) * w * 3, 0.0);
    std::vector<uint8_t> skip(static_cast<size_t>(d) * w, 0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < w; ++j) {
            size_t idx = static_cast<size_t>(i) * w + j;
            if (patch.is_background(i, j)) {
                skip[idx] = 1;
                continue;
            }
            Vec3 vv = patch.at(i, j);
            double len = vv.norm();
            if (len < kDegenerate) {
                skip[idx] = 1;  // direction undefined
                continue;
            }
            double nz = vv.z / len;
            if (nz > geom::kZMin) {
                pq[idx * 2] = -vv.x / vv.z;
                pq[idx * 2 + 1] = -vv.y / vv.z;
                dpdv[idx * 3 + 0] = -1.0 / vv.z;
                dpdv[idx * 3 + 2] = vv.x / (vv.z * vv.z);
                dqdv[idx * 3 + 1] = -1.0 / vv.z;
                dqdv[idx * 3 + 2] = vv.y / (vv.z * vv.z);
            } else {
                // clamped slope: p = -nhat_x / z_min
                Vec3 nh = vv * (1.0 / len);
                pq[idx * 2] = -nh.x / geom::kZMin;
                pq[idx * 2 + 1] = -nh.y / geom::kZMin;
                Vec3 dx = (Vec3{1, 0, 0} - nh.x * nh) * (1.0 / len);
                Vec3 dy = (Vec3{0, 1, 0} - nh.y * nh) * (1.0 / len);
                dpdv[idx * 3 + 0] = -dx.x / geom::kZMin;
                dpdv[idx * 3 + 1] = -dx.y / geom::kZMin;
                dpdv[idx * 3 + 2] = -dx.z / geom::kZMin;
                dqdv[idx * 3 + 0] = -dy.x / geom::kZMin;
                dqdv[idx * 3 + 1] = -dy.y / geom::kZMin;
                dqdv[idx * 3 + 2] = -dy.z / geom::kZMin;
            }
        }

    std::vector<double> dLdp(static_cast<size_t>(d) * w, 0.0);
    std::vector<double> dLdq(static_cast<size_t>(d) * w, 0.0);
    double loss = 0.0;
    for (int i = 0; i + 1 < d; ++i)
        for (int j = 0; j + 1 < w; ++j) {
            size_t i00 = static_cast<size_t>(i) * w + j;
            size_t i01 = i00 + 1;
            size_t i10 = i00 + w;
            size_t i11 = i10 + 1;
            if (skip[i00] || skip[i01] || skip[i10] || skip[i11]) continue;
            double r = pq[i01 * 2] - pq[i11 * 2] + pq[i00 * 2] - pq[i10 * 2] +
                       pq[i01 * 2 + 1] + pq[i11 * 2 + 1] - pq[i00 * 2 + 1] - pq[i10 * 2 + 1];
            loss += r * r;
            double g2 = 2.0 * r;
            dLdp[i01] += g2;
            dLdp[i11] -= g2;
            dLdp[i00] += g2;
            dLdp[i10] -= g2;
            dLdq[i01] += g2;
            dLdq[i11] += g2;
            dLdq[i00] -= g2;
            dLdq[i10] -= g2;
        }

    if (g.g) {
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < w; ++j) {
                size_t idx = static_cast<size_t>(i) * w + j;
                if (skip[idx]) continue;
                Vec3 gv{dLdp[idx] * dpdv[idx * 3] + dLdq[idx] * dqdv[idx * 3],
                        dLdp[idx] * dpdv[idx * 3 + 1] + dLdq[idx] * dqdv[idx * 3 + 1],
                        dLdp[idx] * dpdv[idx * 3 + 2] + dLdq[idx] * dqdv[idx * 3 + 2]};
                g.add(i, j, w, gv * scale);
            }
    }
    return loss;
}

bool all_background(const geom::NormalField& p) {
    for (int i = 0; i < p.height; ++i)
        for (int j = 0; j < p.width; ++j)
            if (!p.is_background(i, j)) return false;
    return true;
}

}  // namespace

double loss_integrability(const geom::NormalField& patch) {
    if (all_background(patch)) return 0.0;
    return integ_loss_grad(patch, Grad3{}, 1.0);
}

double loss_integrability_pq(const geom::GradientField& pq) {
    double loss = 0.0;
    for (int i = 0; i + 1 < pq.height; ++i)
        for (int j = 0; j + 1 < pq.width; ++j) {
            double r = pq.p(i, j + 1) - pq.p(i + 1, j + 1) + pq.p(i, j) - pq.p(i + 1, j) +
                       pq.q(i, j + 1) + pq.q(i + 1, j + 1) - pq.q(i, j) - pq.q(i + 1, j);
            loss += r * r;
        }
    return loss;
}

double loss_seam(const geom::NormalField& u, const geom::NormalField& v, bool horizontal) {
    return seam_loss_grad(u, v, horizontal, Grad3{}, Grad3{}, 1.0);
}

LossBreakdown total_guidance_loss(const std::vector<geom::NormalField>& patches, int rows,
                                  int cols, double lambda,
                                  std::vector<geom::NormalField>* grad) {
    SFS_CHECK(static_cast<int>(patches.size()) == rows * cols,
              "total_guidance_loss: patch count mismatch");
    SFS_CHECK(lambda >= 0.0 && lambda <= 1.0, "total_guidance_loss: lambda must be in [0,1]");
    int d = patches.empty() ? 0 : patches[0].height;
    if (grad) grad->assign(patches.size(), geom::NormalField(d, d));
    auto gptr = [&](int idx) { return Grad3{grad ? (*grad)[idx].data.data() : nullptr}; };

    LossBreakdown lb;
    int num_edges = rows * (cols - 1) + (rows - 1) * cols;
    if (num_edges > 0) {
        double seam_scale = 1.0 / num_edges;
        double seam_sum = 0.0;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                int idx = r * cols + c;
                if (c + 1 < cols)
                    seam_sum += seam_loss_grad(patches[idx], patches[idx + 1], true, gptr(idx),
                                               gptr(idx + 1), seam_scale);
                if (r + 1 < rows)
                    seam_sum += seam_loss_grad(patches[idx], patches[idx + cols], false,
                                               gptr(idx), gptr(idx + cols), seam_scale);
            }
        lb.seam = seam_sum * seam_scale;
    }

    double iscale = lambda / static_cast<double>(rows * cols);
    double integ_sum = 0.0;
    for (size_t i = 0; i < patches.size(); ++i) {
        if (all_background(patches[i])) continue;
        integ_sum += integ_loss_grad(patches[i], gptr(static_cast<int>(i)), iscale);
    }
    lb.integrability = integ_sum / static_cast<double>(rows * cols);
    lb.total = lb.seam + lambda * lb.integrability;
    return lb;
}

// ---- patch-graph sampling ----

PatchGraphState make_graph_state(const geom::ShadingImage& image, int d) {
    SFS_CHECK(image.height % d == 0 && image.width % d == 0,
              "image dimensions must be divisible by the patch size");
    PatchGraphState st;
    st.rows = image.height / d;
    st.cols = image.width / d;
    st.d = d;
    int p = st.patches();
    st.x = Tensor(p, d, d, 3);
    st.cond = Tensor(p, d, d, 1);
    for (int pi = 0; pi < st.rows; ++pi)
        for (int pj = 0; pj < st.cols; ++pj) {
            int idx = pi * st.cols + pj;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j)
                    st.cond.at(idx, i, j, 0) =
                        static_cast<float>(image.at(pi * d + i, pj * d + j));
        }
    return st;
}

void init_noise(PatchGraphState& state, uint64_t seed) {
    int64_t per = static_cast<int64_t>(state.d) * state.d * 3;
    for (int p = 0; p < state.patches(); ++p) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(p), 0x0153));
        float* dst = state.x.data() + p * per;
        for (int64_t i = 0; i < per; ++i) dst[i] = rng.gaussian_f();
    }
}

Tensor field_to_patches(const geom::NormalField& field, int d) {
    SFS_CHECK(field.height % d == 0 && field.width % d == 0,
              "field dimensions must be divisible by the patch size");
    int rows = field.height / d, cols = field.width / d;
    Tensor x(rows * cols, d, d, 3);
    for (int pi = 0; pi < rows; ++pi)
        for (int pj = 0; pj < cols; ++pj) {
            int idx = pi * cols + pj;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    Vec3 v = field.at(pi * d + i, pj * d + j);
                    x.at(idx, i, j, 0) = static_cast<float>(v.x);
                    x.at(idx, i, j, 1) = static_cast<float>(v.y);
                    x.at(idx, i, j, 2) = static_cast<float>(v.z);
                }
        }
    return x;
}

geom::NormalField patches_to_field(const Tensor& x, int rows, int cols, bool clamp_unit) {
    int d = x.h;
    geom::NormalField out(rows * d, cols * d);
    for (int pi = 0; pi < rows; ++pi)
        for (int pj = 0; pj < cols; ++pj) {
            int idx = pi * cols + pj;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    Vec3 v{x.at(idx, i, j, 0), x.at(idx, i, j, 1), x.at(idx, i, j, 2)};
                    if (clamp_unit) {
                        v.x = std::clamp(v.x, -1.0, 1.0);
                        v.y = std::clamp(v.y, -1.0, 1.0);
                        v.z = std::clamp(v.z, -1.0, 1.0);
                        // a clamped pixel must not collide with the background
                        // sentinel; a foreground normal never has z = -1
                        if (v.x == -1.0 && v.y == -1.0 && v.z == -1.0) v.z += 2.0 / 65535.0;
                    }
                    out.set(pi * d + i, pj * d + j, v);
                }
        }
    return out;
}

namespace {

void patch_tensor_to_fields(const Tensor& x, std::vector<geom::NormalField>& fields) {
    int p = x.n, d = x.h;
    fields.assign(p, geom::NormalField(d, d));
    for (int n = 0; n < p; ++n) {
        const float* src = x.data() + static_cast<int64_t>(n) * d * d * 3;
        for (int64_t i = 0; i < static_cast<int64_t>(d) * d * 3; ++i)
            fields[n].data[i] = src[i];
    }
}

void concat_cond_x(const Tensor& cond, const Tensor& x, Tensor& out) {
    int b = x.n, d = x.h;
    if (out.n != b || out.c != 4) out = Tensor(b, d, d, 4);
    int64_t px = static_cast<int64_t>(b) * d * d;
    for (int64_t i = 0; i < px; ++i) {
        out.data()[i * 4] = cond.data()[i];
        out.data()[i * 4 + 1] = x.data()[i * 3];
        out.data()[i * 4 + 2] = x.data()[i * 3 + 1];
        out.data()[i * 4 + 3] = x.data()[i * 3 + 2];
    }
}

}  // namespace

DenoiserHandle make_unet_denoiser(model::UNet& model) {
    // One activation buffer per handle: a handle must not be shared across
    // threads. Seed-parallel callers make one handle per worker.
    auto state = std::shared_ptr<model::UNetState>(model.new_state());
    DenoiserHandle h;
    h.unet = &model;
    h.fn = [state, &model](const Tensor& x_t, const Tensor& cond, int t, Tensor& eps) {
        Tensor x4;
        concat_cond_x(cond, x_t, x4);
        std::vector<int> ts(static_cast<size_t>(x_t.n), t);
        model.forward(*state, x4, ts, eps);
    };
    return h;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path);
    f << "t,total loss,seam loss,integrability loss\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.t, r.total, r.seam,
                      r.integrability);
        f << buf;
    }
}

void guided_ddim_round(PatchGraphState& state, int t, int t_prev, const DenoiserHandle& den,
                       const diff::NoiseSchedule& sched, const GuidanceConfig& cfg, bool guided,
                       std::vector<TraceRow>* trace) {
    bool do_guide = guided && cfg.eta > 0.0 && cfg.j_steps > 0;
    double ab = sched.alpha_bar(t);
    float inv_sqrt_ab = static_cast<float>(1.0 / std::sqrt(ab));

    std::unique_ptr<model::UNetState> bp_state;
    if (cfg.backprop_through_model) {
        SFS_CHECK(den.unet != nullptr, "backprop guidance mode requires a UNet backend");
        bp_state.reset(den.unet->new_state());
    }

    std::vector<geom::NormalField> fields;
    std::vector<geom::NormalField> grads;
    Tensor eps, x4;
    std::vector<int> ts(static_cast<size_t>(state.patches()), t);

    if (do_guide) {
        for (int j = 0; j < cfg.j_steps; ++j) {
            if (cfg.backprop_through_model) {
                concat_cond_x(state.cond, state.x, x4);
                den.unet->forward(*bp_state, x4, ts, eps);
            } else {
                den.fn(state.x, state.cond, t, eps);
            }
            Tensor x0 = diff::predict_x0_from_eps(state.x, t, eps, sched);
            patch_tensor_to_fields(x0, fields);
            LossBreakdown lb =
                total_guidance_loss(fields, state.rows, state.cols, cfg.lambda, &grads);
            if (!std::isfinite(lb.total))
                throw NumericalError("guidance loss is not finite at t=" + std::to_string(t));

            // d(loss)/d(x_t): through x0_hat = (x_t - sqrt(1-ab) eps)/sqrt(ab).
            Tensor g_xt = Tensor::like(state.x);
            {
                float* g = g_xt.data();
                int64_t per = static_cast<int64_t>(state.d) * state.d * 3;
                for (int p = 0; p < state.patches(); ++p) {
                    const double* gp = grads[p].data.data();
                    for (int64_t i = 0; i < per; ++i) {
                        double v = gp[i];
                        if (!std::isfinite(v))
                            throw NumericalError("NaN in guidance gradient at t=" +
                                                 std::to_string(t));
                        g[p * per + i] = static_cast<float>(v) * inv_sqrt_ab;
                    }
                }
            }
            if (cfg.backprop_through_model) {
                // add the -sqrt(1-ab)/sqrt(ab) * J_eps^T g term
                float coef = static_cast<float>(-std::sqrt(1.0 - ab) / std::sqrt(ab));
                Tensor deps = Tensor::like(eps);
                int64_t per = static_cast<int64_t>(state.d) * state.d * 3;
                for (int p = 0; p < state.patches(); ++p) {
                    const double* gp = grads[p].data.data();
                    for (int64_t i = 0; i < per; ++i)
                        deps.data()[p * per + i] = static_cast<float>(gp[i]) * coef;
                }
                Tensor dx4;
                den.unet->backward(*bp_state, deps, &dx4, false);
                int64_t px = static_cast<int64_t>(state.patches()) * state.d * state.d;
                for (int64_t i = 0; i < px; ++i)
                    for (int c = 0; c < 3; ++c)
                        g_xt.data()[i * 3 + c] += dx4.data()[i * 4 + 1 + c];
            }
            kern::axpy_f32(static_cast<float>(-cfg.eta), g_xt.data(), state.x.data(),
                           state.x.size());
        }
    }

    if (cfg.backprop_through_model) {
        concat_cond_x(state.cond, state.x, x4);
        den.unet->forward(*bp_state, x4, ts, eps);
    } else {
        den.fn(state.x, state.cond, t, eps);
    }
    if (trace) {
        Tensor x0 = diff::predict_x0_from_eps(state.x, t, eps, sched);
        patch_tensor_to_fields(x0, fields);
        LossBreakdown lb = total_guidance_loss(fields, state.rows, state.cols, cfg.lambda);
        trace->push_back({t, lb.total, lb.seam, lb.integrability});
    }
    state.x = diff::ddim_step_from_eps(state.x, t, t_prev, eps, sched);
}

void run_chain(PatchGraphState& state, int start_index, const DenoiserHandle& den,
               const diff::NoiseSchedule& sched, const GuidanceConfig& cfg, int warmup_rounds,
               std::vector<TraceRow>* trace) {
    SFS_CHECK(start_index >= 1 && start_index < static_cast<int>(sched.ddim_steps.size()),
              "run_chain: start index out of range");
    for (int idx = start_index; idx >= 1; --idx) {
        int round = start_index - idx;
        bool guided = round >= warmup_rounds;
        guided_ddim_round(state, sched.ddim_steps[idx], sched.ddim_steps[idx - 1], den, sched,
                          cfg, guided, trace);
    }
}

geom::NormalField sample_single_scale(const geom::ShadingImage& image, uint64_t seed,
                                      const DenoiserHandle& den,
                                      const diff::NoiseSchedule& sched,
                                      const GuidanceConfig& cfg,
                                      std::vector<TraceRow>* trace) {
    PatchGraphState state = make_graph_state(image);
    init_noise(state, seed);
    run_chain(state, static_cast<int>(sched.ddim_steps.size()) - 1, den, sched, cfg,
              cfg.warmup_rounds, trace);
    return patches_to_field(state.x, state.rows, state.cols);
}

}  // namespace sfs::guide
