#pragma once

#include <cstdint>
#include <vector>

#include "sfs/common.hpp"

namespace sfs::geom {

// Background sentinel for pixels outside the object.
inline constexpr double kBackgroundValue = -1.0;
// Lower clamp for normalized n_z when converting to (p,q); occluding-contour
// normals have n_z -> 0 and unbounded slopes.
inline constexpr double kZMin = 0.05;

// H x W grid of 3-vectors in [-1,1]^3. Foreground pixels encode a surface
// normal up to scale (normalize to get the unit normal, z > 0); background
// pixels are exactly (-1,-1,-1).
struct NormalField {
    int height = 0, width = 0;
    std::vector<double> data;  // interleaved xyz

    NormalField() = default;
    NormalField(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0) {}

    Vec3 at(int i, int j) const {
        const double* p = &data[(static_cast<size_t>(i) * width + j) * 3];
        return {p[0], p[1], p[2]};
    }
    void set(int i, int j, const Vec3& v) {
        double* p = &data[(static_cast<size_t>(i) * width + j) * 3];
        p[0] = v.x;
        p[1] = v.y;
        p[2] = v.z;
    }
    bool is_background(int i, int j) const {
        Vec3 v = at(i, j);
        return v.x == kBackgroundValue && v.y == kBackgroundValue && v.z == kBackgroundValue;
    }
    void set_background(int i, int j) {
        set(i, j, {kBackgroundValue, kBackgroundValue, kBackgroundValue});
    }
    int64_t pixels() const { return static_cast<int64_t>(height) * width; }
};

// H x W grid of surface slopes (p, q) = (dh/dx, dh/dy); x = column axis,
// y = row axis (rows increase downward).
struct GradientField {
    int height = 0, width = 0;
    std::vector<double> data;  // interleaved pq

    GradientField() = default;
    GradientField(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 2, 0.0) {}

    double p(int i, int j) const { return data[(static_cast<size_t>(i) * width + j) * 2]; }
    double q(int i, int j) const { return data[(static_cast<size_t>(i) * width + j) * 2 + 1]; }
    void set(int i, int j, double pv, double qv) {
        data[(static_cast<size_t>(i) * width + j) * 2] = pv;
        data[(static_cast<size_t>(i) * width + j) * 2 + 1] = qv;
    }
};

// Scalar height h(x,y) in pixel units, defined up to an additive constant.
struct HeightField {
    int height = 0, width = 0;
    std::vector<double> data;

    HeightField() = default;
    HeightField(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.0) {}

    double at(int i, int j) const { return data[static_cast<size_t>(i) * width + j]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i) * width + j]; }
    double mean() const;
};

// Scalar intensity in [0,1].
struct ShadingImage {
    int height = 0, width = 0;
    std::vector<double> data;

    ShadingImage() = default;
    ShadingImage(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0.0) {}

    double at(int i, int j) const { return data[static_cast<size_t>(i) * width + j]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i) * width + j]; }
};

struct LightDirection {
    Vec3 l{0.0, 0.0, 1.0};  // unit
    double albedo = 1.0;    // in (0,1]
};

// (-l_x, -l_y, l_z): the light that renders the convex/concave flip of a
// field to the same image.
inline Vec3 mirror_light(const Vec3& l) { return {-l.x, -l.y, l.z}; }

struct PqConversion {
    GradientField pq;
    std::vector<uint8_t> background;  // 1 where input was the sentinel
    std::vector<uint8_t> clamped;     // 1 where normalized n_z was clamped to kZMin
};

// (p,q) = (-nx/nz, -ny/nz) from the normalized vector, with nz clamped below
// at kZMin (flagged). Background pixels map to (0,0) with the mask set.
PqConversion normals_to_pq(const NormalField& n);

// Unit (-p,-q,1)/|(-p,-q,1)| per pixel; exact inverse of normals_to_pq on
// unclamped foreground. Pixels flagged in `background` (optional) become the
// sentinel. Throws NumericalError on non-finite input.
NormalField pq_to_normals(const GradientField& g, const std::vector<uint8_t>* background = nullptr);

// Negates the x and y channels on foreground; background unchanged.
// Equivalent to (p,q) -> (-p,-q). Involution.
NormalField flip_convex_concave(const NormalField& n);

// c = albedo * max(0, <n_hat, l>), clamped to [0,1]; background renders to 0.
ShadingImage render_lambertian(const NormalField& n, const LightDirection& light);

// Least-squares integrable surface by frequency-domain projection, using the
// forward-difference responses matched to the 2x2-loop integrability
// discretization. Zero-mean output. Exact (to rounding) on gradients produced
// by gradient_from_height_matched of a periodic surface.
HeightField integrate_frankot_chellappa(const GradientField& g);

// Channelwise bilinear resampling with foreground renormalization; the
// background mask moves by nearest neighbor and background never bleeds into
// interpolated foreground values. New dimensions must be divisible by d.
NormalField resample_field(const NormalField& n, int new_h, int new_w, int d = kPatchSize);

// Bilinear (p,q) resampling with the same masked-tap rule. Used for fusing
// stage results. Pixels whose mask is background get (0,0).
GradientField resample_gradient(const GradientField& g, const std::vector<uint8_t>& background,
                                int new_h, int new_w, std::vector<uint8_t>* out_background);

// Plain bilinear resize for condition images.
ShadingImage resize_image(const ShadingImage& img, int new_h, int new_w);

struct AngularErrorResult {
    std::vector<double> per_pixel_deg;  // -1 on background
    double median_deg = 0.0;
};

// |acos(n_hat_a . n_hat_b)| in degrees per pixel, median over foreground.
// Requires matching dimensions and agreeing masks.
AngularErrorResult angular_error(const NormalField& a, const NormalField& b);

// Forward differences averaged across the transverse axis, with periodic
// wrap; this is the discretization under which the 2x2-loop integrability
// residual vanishes identically for any discrete height field.
GradientField gradient_from_height_matched(const HeightField& h);

// Central differences (one-sided at borders); the dataset's normal maps.
GradientField gradient_from_height_central(const HeightField& h);

NormalField normals_from_height_central(const HeightField& h);

double median_of(std::vector<double> values);

}  // namespace sfs::geom
