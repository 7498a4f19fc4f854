#include "sfs/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace sfs::geom {

double HeightField::mean() const {
    double s = 0.0;
    for (double v : data) s += v;
    return data.empty() ? 0.0 : s / static_cast<double>(data.size());
}

double median_of(std::vector<double> values) {
    SFS_CHECK(!values.empty(), "median of empty set");
    size_t n = values.size();
    auto mid = values.begin() + n / 2;
    std::nth_element(values.begin(), mid, values.end());
    double hi = *mid;
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(values.begin(), mid);
    return 0.5 * (lo + hi);
}

PqConversion normals_to_pq(const NormalField& n) {
    PqConversion out;
    out.pq = GradientField(n.height, n.width);
    out.background.assign(n.pixels(), 0);
    out.clamped.assign(n.pixels(), 0);
    for (int i = 0; i < n.height; ++i) {
        for (int j = 0; j < n.width; ++j) {
            size_t idx = static_cast<size_t>(i) * n.width + j;
            if (n.is_background(i, j)) {
                out.background[idx] = 1;
                out.pq.set(i, j, 0.0, 0.0);
                continue;
            }
            Vec3 nh = n.at(i, j).normalized();
            double z = nh.z;
            if (z <= kZMin) {
                z = kZMin;
                out.clamped[idx] = 1;
            }
            out.pq.set(i, j, -nh.x / z, -nh.y / z);
        }
    }
    return out;
}

NormalField pq_to_normals(const GradientField& g, const std::vector<uint8_t>* background) {
    NormalField out(g.height, g.width);
    for (int i = 0; i < g.height; ++i) {
        for (int j = 0; j < g.width; ++j) {
            size_t idx = static_cast<size_t>(i) * g.width + j;
            if (background && (*background)[idx]) {
                out.set_background(i, j);
                continue;
            }
            double p = g.p(i, j), q = g.q(i, j);
            if (!std::isfinite(p) || !std::isfinite(q))
                throw NumericalError("pq_to_normals: non-finite gradient value");
            double inv = 1.0 / std::sqrt(1.0 + p * p + q * q);
            out.set(i, j, {-p * inv, -q * inv, inv});
        }
    }
    return out;
}

NormalField flip_convex_concave(const NormalField& n) {
    NormalField out = n;
    for (int i = 0; i < n.height; ++i)
        for (int j = 0; j < n.width; ++j)
            if (!n.is_background(i, j)) {
                Vec3 v = n.at(i, j);
                out.set(i, j, {-v.x, -v.y, v.z});
            }
    return out;
}

ShadingImage render_lambertian(const NormalField& n, const LightDirection& light) {
    SFS_CHECK(std::abs(light.l.norm() - 1.0) <= 1e-9, "render_lambertian: light must be unit");
    SFS_CHECK(light.albedo > 0.0 && light.albedo <= 1.0,
              "render_lambertian: albedo must be in (0,1]");
    ShadingImage img(n.height, n.width);
    for (int i = 0; i < n.height; ++i) {
        for (int j = 0; j < n.width; ++j) {
            if (n.is_background(i, j)) {
                img.at(i, j) = 0.0;
                continue;
            }
            double c = light.albedo * std::max(0.0, n.at(i, j).normalized().dot(light.l));
            img.at(i, j) = std::min(1.0, c);
        }
    }
    return img;
}

namespace {

using cd = std::complex<double>;

// Direct separable DFT; fields here are small (<= 256^2) and this runs only
// for height export and tests, so O(HW(H+W)) is fine.
void dft2(const std::vector<cd>& in, std::vector<cd>& out, int h, int w, bool inverse) {
    double sgn = inverse ? 1.0 : -1.0;
    std::vector<cd> tw_w(static_cast<size_t>(w) * w), tw_h(static_cast<size_t>(h) * h);
    for (int j = 0; j < w; ++j)
        for (int k = 0; k < w; ++k)
            tw_w[static_cast<size_t>(j) * w + k] =
                std::polar(1.0, sgn * 2.0 * kPi * j * k / static_cast<double>(w));
    for (int i = 0; i < h; ++i)
        for (int k = 0; k < h; ++k)
            tw_h[static_cast<size_t>(i) * h + k] =
                std::polar(1.0, sgn * 2.0 * kPi * i * k / static_cast<double>(h));

    std::vector<cd> rows(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i) {
        for (int k = 0; k < w; ++k) {
            cd acc = 0.0;
            for (int j = 0; j < w; ++j) acc += in[static_cast<size_t>(i) * w + j] * tw_w[static_cast<size_t>(j) * w + k];
            rows[static_cast<size_t>(i) * w + k] = acc;
        }
    }
    out.assign(static_cast<size_t>(h) * w, cd{});
    for (int k = 0; k < w; ++k) {
        for (int ky = 0; ky < h; ++ky) {
            cd acc = 0.0;
            for (int i = 0; i < h; ++i) acc += rows[static_cast<size_t>(i) * w + k] * tw_h[static_cast<size_t>(i) * h + ky];
            out[static_cast<size_t>(ky) * w + k] = acc;
        }
    }
    if (inverse) {
        double scale = 1.0 / (static_cast<double>(h) * w);
        for (auto& v : out) v *= scale;
    }
}

}  // namespace

HeightField integrate_frankot_chellappa(const GradientField& g) {
    int h = g.height, w = g.width;
    for (double v : g.data)
        if (!std::isfinite(v))
            throw NumericalError("integrate_frankot_chellappa: non-finite gradient");

    std::vector<cd> pin(static_cast<size_t>(h) * w), qin(static_cast<size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            pin[static_cast<size_t>(i) * w + j] = g.p(i, j);
            qin[static_cast<size_t>(i) * w + j] = g.q(i, j);
        }
    std::vector<cd> pf, qf;
    dft2(pin, pf, h, w, false);
    dft2(qin, qf, h, w, false);

    std::vector<cd> hf(static_cast<size_t>(h) * w, cd{});
    for (int ky = 0; ky < h; ++ky) {
        double wy = 2.0 * kPi * ky / static_cast<double>(h);
        cd ey = std::polar(1.0, wy);
        for (int kx = 0; kx < w; ++kx) {
            double wx = 2.0 * kPi * kx / static_cast<double>(w);
            cd ex = std::polar(1.0, wx);
            cd dx = 0.5 * (ex - 1.0) * (ey + 1.0);
            cd dy = 0.5 * (ey - 1.0) * (ex + 1.0);
            double denom = std::norm(dx) + std::norm(dy);
            size_t idx = static_cast<size_t>(ky) * w + kx;
            if (denom < 1e-18) continue;  // DC and the Nyquist-Nyquist mode
            hf[idx] = (std::conj(dx) * pf[idx] + std::conj(dy) * qf[idx]) / denom;
        }
    }

    std::vector<cd> hx;
    dft2(hf, hx, h, w, true);
    HeightField out(h, w);
    for (size_t i = 0; i < hx.size(); ++i) out.data[i] = hx[i].real();
    double m = out.mean();
    for (double& v : out.data) v -= m;
    return out;
}

namespace {

struct Taps {
    int j0, j1, i0, i1;
    double fx, fy;
};

inline Taps bilinear_taps(int di, int dj, int src_h, int src_w, int dst_h, int dst_w) {
    double sy = (di + 0.5) * static_cast<double>(src_h) / dst_h - 0.5;
    double sx = (dj + 0.5) * static_cast<double>(src_w) / dst_w - 0.5;
    Taps t;
    double fy = std::floor(sy), fx = std::floor(sx);
    t.i0 = std::clamp(static_cast<int>(fy), 0, src_h - 1);
    t.i1 = std::clamp(static_cast<int>(fy) + 1, 0, src_h - 1);
    t.j0 = std::clamp(static_cast<int>(fx), 0, src_w - 1);
    t.j1 = std::clamp(static_cast<int>(fx) + 1, 0, src_w - 1);
    t.fy = std::clamp(sy - fy, 0.0, 1.0);
    t.fx = std::clamp(sx - fx, 0.0, 1.0);
    return t;
}

inline void nearest_src(int di, int dj, int src_h, int src_w, int dst_h, int dst_w, int* si,
                        int* sj) {
    double sy = (di + 0.5) * static_cast<double>(src_h) / dst_h - 0.5;
    double sx = (dj + 0.5) * static_cast<double>(src_w) / dst_w - 0.5;
    *si = std::clamp(static_cast<int>(std::lround(sy)), 0, src_h - 1);
    *sj = std::clamp(static_cast<int>(std::lround(sx)), 0, src_w - 1);
}

}  // namespace

NormalField resample_field(const NormalField& n, int new_h, int new_w, int d) {
    SFS_CHECK(new_h > 0 && new_w > 0 && new_h % d == 0 && new_w % d == 0,
              "resample_field: target dimensions must be divisible by the patch size");
    NormalField out(new_h, new_w);
    for (int di = 0; di < new_h; ++di) {
        for (int dj = 0; dj < new_w; ++dj) {
            int si, sj;
            nearest_src(di, dj, n.height, n.width, new_h, new_w, &si, &sj);
            if (n.is_background(si, sj)) {
                out.set_background(di, dj);
                continue;
            }
            Taps t = bilinear_taps(di, dj, n.height, n.width, new_h, new_w);
            const int is[4] = {t.i0, t.i0, t.i1, t.i1};
            const int js[4] = {t.j0, t.j1, t.j0, t.j1};
            const double ws[4] = {(1 - t.fy) * (1 - t.fx), (1 - t.fy) * t.fx,
                                  t.fy * (1 - t.fx), t.fy * t.fx};
            Vec3 acc{0, 0, 0};
            double wsum = 0.0;
            for (int k = 0; k < 4; ++k) {
                if (n.is_background(is[k], js[k])) continue;  // no sentinel bleed
                acc += ws[k] * n.at(is[k], js[k]);
                wsum += ws[k];
            }
            if (wsum <= 0.0) {
                acc = n.at(si, sj);  // isolated foreground: fall back to nearest
            } else {
                acc = acc * (1.0 / wsum);
            }
            double len = acc.norm();
            out.set(di, dj, len > 1e-12 ? acc * (1.0 / len) : Vec3{0.0, 0.0, 1.0});
        }
    }
    return out;
}

GradientField resample_gradient(const GradientField& g, const std::vector<uint8_t>& background,
                                int new_h, int new_w, std::vector<uint8_t>* out_background) {
    GradientField out(new_h, new_w);
    if (out_background) out_background->assign(static_cast<size_t>(new_h) * new_w, 0);
    auto bg = [&](int i, int j) {
        return background[static_cast<size_t>(i) * g.width + j] != 0;
    };
    for (int di = 0; di < new_h; ++di) {
        for (int dj = 0; dj < new_w; ++dj) {
            int si, sj;
            nearest_src(di, dj, g.height, g.width, new_h, new_w, &si, &sj);
            if (bg(si, sj)) {
                if (out_background)
                    (*out_background)[static_cast<size_t>(di) * new_w + dj] = 1;
                out.set(di, dj, 0.0, 0.0);
                continue;
            }
            Taps t = bilinear_taps(di, dj, g.height, g.width, new_h, new_w);
            const int is[4] = {t.i0, t.i0, t.i1, t.i1};
            const int js[4] = {t.j0, t.j1, t.j0, t.j1};
            const double ws[4] = {(1 - t.fy) * (1 - t.fx), (1 - t.fy) * t.fx,
                                  t.fy * (1 - t.fx), t.fy * t.fx};
            double ap = 0.0, aq = 0.0, wsum = 0.0;
            for (int k = 0; k < 4; ++k) {
                if (bg(is[k], js[k])) continue;
                ap += ws[k] * g.p(is[k], js[k]);
                aq += ws[k] * g.q(is[k], js[k]);
                wsum += ws[k];
            }
            if (wsum <= 0.0) {
                out.set(di, dj, g.p(si, sj), g.q(si, sj));
            } else {
                out.set(di, dj, ap / wsum, aq / wsum);
            }
        }
    }
    return out;
}

ShadingImage resize_image(const ShadingImage& img, int new_h, int new_w) {
    SFS_CHECK(new_h > 0 && new_w > 0, "resize_image: bad target size");
    ShadingImage out(new_h, new_w);
    for (int di = 0; di < new_h; ++di)
        for (int dj = 0; dj < new_w; ++dj) {
            Taps t = bilinear_taps(di, dj, img.height, img.width, new_h, new_w);
            out.at(di, dj) = (1 - t.fy) * ((1 - t.fx) * img.at(t.i0, t.j0) +
                                           t.fx * img.at(t.i0, t.j1)) +
                             t.fy * ((1 - t.fx) * img.at(t.i1, t.j0) +
                                     t.fx * img.at(t.i1, t.j1));
        }
    return out;
}

AngularErrorResult angular_error(const NormalField& a, const NormalField& b) {
    SFS_CHECK(a.height == b.height && a.width == b.width,
              "angular_error: field dimensions must match");
    AngularErrorResult res;
    res.per_pixel_deg.assign(a.pixels(), -1.0);
    std::vector<double> fg;
    fg.reserve(a.pixels());
    for (int i = 0; i < a.height; ++i) {
        for (int j = 0; j < a.width; ++j) {
            bool ba = a.is_background(i, j), bb = b.is_background(i, j);
            SFS_CHECK(ba == bb, "angular_error: foreground masks disagree");
            if (ba) continue;
            double d = a.at(i, j).normalized().dot(b.at(i, j).normalized());
            d = std::clamp(d, -1.0, 1.0);
            double deg = deg_from_rad(std::acos(d));
            res.per_pixel_deg[static_cast<size_t>(i) * a.width + j] = deg;
            fg.push_back(deg);
        }
    }
    SFS_CHECK(!fg.empty(), "angular_error: empty foreground");
    res.median_deg = median_of(std::move(fg));
    return res;
}

GradientField gradient_from_height_matched(const HeightField& h) {
    GradientField g(h.height, h.width);
    for (int i = 0; i < h.height; ++i) {
        int i1 = (i + 1) % h.height;
        for (int j = 0; j < h.width; ++j) {
            int j1 = (j + 1) % h.width;
            double p = 0.5 * (h.at(i, j1) - h.at(i, j) + h.at(i1, j1) - h.at(i1, j));
            double q = 0.5 * (h.at(i1, j) - h.at(i, j) + h.at(i1, j1) - h.at(i, j1));
            g.set(i, j, p, q);
        }
    }
    return g;
}

GradientField gradient_from_height_central(const HeightField& h) {
    GradientField g(h.height, h.width);
    for (int i = 0; i < h.height; ++i) {
        for (int j = 0; j < h.width; ++j) {
            int jm = std::max(0, j - 1), jp = std::min(h.width - 1, j + 1);
            int im = std::max(0, i - 1), ip = std::min(h.height - 1, i + 1);
            double p = (h.at(i, jp) - h.at(i, jm)) / static_cast<double>(jp - jm);
            double q = (h.at(ip, j) - h.at(im, j)) / static_cast<double>(ip - im);
            g.set(i, j, p, q);
        }
    }
    return g;
}

NormalField normals_from_height_central(const HeightField& h) {
    return pq_to_normals(gradient_from_height_central(h));
}

}  // namespace sfs::geom
