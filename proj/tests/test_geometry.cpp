#include <doctest.h>

#include <cmath>
#include <limits>

#include "sfs/geometry.hpp"
#include "sfs/rng.hpp"

using namespace sfs;
using namespace sfs::geom;

namespace {

NormalField random_smooth_field(int h, int w, uint64_t seed, double slope = 0.6) {
    // low-frequency height -> normals, so everything is far from the z clamp
    Rng rng(seed);
    HeightField hf(h, w);
    double a1 = rng.uniform(0.5, 1.0) * slope * h / (2.0 * kPi);
    double a2 = rng.uniform(0.2, 0.6) * slope * h / (2.0 * kPi);
    double p1 = rng.uniform(0.0, 2.0 * kPi), p2 = rng.uniform(0.0, 2.0 * kPi);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            hf.at(i, j) = a1 * std::sin(2.0 * kPi * i / h + p1) +
                          a2 * std::sin(2.0 * kPi * 2.0 * j / w + p2);
    return normals_from_height_central(hf);
}

}  // namespace

TEST_CASE("normals_to_pq basics") {
    NormalField n(1, 3);
    n.set(0, 0, {0, 0, 1});
    Vec3 tilted = Vec3{-1, 0, 1}.normalized();
    n.set(0, 1, tilted);
    n.set_background(0, 2);
    auto conv = normals_to_pq(n);
    CHECK(conv.pq.p(0, 0) == doctest::Approx(0.0));
    CHECK(conv.pq.q(0, 0) == doctest::Approx(0.0));
    CHECK(conv.pq.p(0, 1) == doctest::Approx(1.0));
    CHECK(conv.pq.q(0, 1) == doctest::Approx(0.0));
    CHECK(conv.pq.p(0, 2) == 0.0);
    CHECK(conv.background[2] == 1);
    CHECK(conv.background[0] == 0);
    CHECK(conv.clamped[0] == 0);
}

TEST_CASE("normals_to_pq clamps grazing normals and flags them") {
    NormalField n(1, 1);
    n.set(0, 0, Vec3{1.0, 0.0, 0.01}.normalized());
    auto conv = normals_to_pq(n);
    CHECK(conv.clamped[0] == 1);
    CHECK(conv.pq.p(0, 0) == doctest::Approx(-n.at(0, 0).normalized().x / kZMin));
}

TEST_CASE("pq_to_normals basics and inverse pair") {
    GradientField g(1, 2);
    g.set(0, 0, 0.0, 0.0);
    g.set(0, 1, 1.0, 0.0);
    NormalField n = pq_to_normals(g);
    CHECK(n.at(0, 0).z == doctest::Approx(1.0));
    CHECK(n.at(0, 1).x == doctest::Approx(-1.0 / std::sqrt(2.0)));
    CHECK(n.at(0, 1).z == doctest::Approx(1.0 / std::sqrt(2.0)));

    NormalField f = random_smooth_field(32, 32, 7);
    auto conv = normals_to_pq(f);
    NormalField back = pq_to_normals(conv.pq, &conv.background);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
            Vec3 a = f.at(i, j).normalized();
            Vec3 b = back.at(i, j);
            CHECK(std::abs(a.x - b.x) < 1e-6);
            CHECK(std::abs(a.y - b.y) < 1e-6);
            CHECK(std::abs(a.z - b.z) < 1e-6);
        }
}

TEST_CASE("pq_to_normals rejects non-finite input") {
    GradientField g(1, 1);
    g.set(0, 0, std::numeric_limits<double>::quiet_NaN(), 0.0);
    CHECK_THROWS_AS(pq_to_normals(g), NumericalError);
}

TEST_CASE("flip_convex_concave involution and pq negation") {
    NormalField n(2, 2);
    n.set(0, 0, {0, 0, 1});
    n.set(0, 1, {0.3, -0.2, 0.9});
    n.set(1, 0, Vec3{0.5, 0.1, 0.8}.normalized());
    n.set_background(1, 1);
    NormalField f = flip_convex_concave(n);
    CHECK(f.at(0, 0).z == 1.0);
    CHECK(f.at(0, 1).x == doctest::Approx(-0.3));
    CHECK(f.at(0, 1).y == doctest::Approx(0.2));
    CHECK(f.at(0, 1).z == doctest::Approx(0.9));
    CHECK(f.is_background(1, 1));
    NormalField ff = flip_convex_concave(f);
    for (size_t i = 0; i < n.data.size(); ++i) CHECK(ff.data[i] == n.data[i]);

    auto pq = normals_to_pq(n);
    auto pqf = normals_to_pq(f);
    CHECK(pqf.pq.p(0, 1) == doctest::Approx(-pq.pq.p(0, 1)));
    CHECK(pqf.pq.q(0, 1) == doctest::Approx(-pq.pq.q(0, 1)));
}

TEST_CASE("render_lambertian basics") {
    NormalField n(1, 2);
    n.set(0, 0, {0, 0, 1});
    n.set_background(0, 1);
    LightDirection light;
    light.l = {0, 0, 1};
    light.albedo = 0.8;
    ShadingImage img = render_lambertian(n, light);
    CHECK(img.at(0, 0) == doctest::Approx(0.8));
    CHECK(img.at(0, 1) == 0.0);

    NormalField n2(1, 1);
    n2.set(0, 0, {0, 0, 1});
    LightDirection side;
    side.l = {1, 0, 0};
    CHECK(render_lambertian(n2, side).at(0, 0) == 0.0);
}

TEST_CASE("flip-render symmetry: render(flip(n), mirror(l)) == render(n, l)") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        NormalField n = random_smooth_field(16, 16, 1000 + trial);
        LightDirection light;
        double cz = rng.uniform(0.55, 1.0);
        double sz = std::sqrt(1 - cz * cz);
        double phi = rng.uniform(0.0, 2.0 * kPi);
        light.l = Vec3{sz * std::cos(phi), sz * std::sin(phi), cz}.normalized();
        light.albedo = rng.uniform(0.5, 1.0);
        LightDirection mirrored;
        mirrored.l = mirror_light(light.l);
        mirrored.albedo = light.albedo;
        ShadingImage a = render_lambertian(n, light);
        ShadingImage b = render_lambertian(flip_convex_concave(n), mirrored);
        for (size_t i = 0; i < a.data.size(); ++i)
            CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-6);
    }
}

TEST_CASE("frankot-chellappa: zero gradients give a flat surface") {
    GradientField g(32, 32);
    HeightField h = integrate_frankot_chellappa(g);
    for (double v : h.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("frankot-chellappa: exact on matched gradients of band-limited heights") {
    int n = 64;
    Rng rng(5);
    HeightField h(n, n);
    for (int m = 0; m < 6; ++m) {
        int kx = 1 + static_cast<int>(rng.uniform_index(5));
        int ky = 1 + static_cast<int>(rng.uniform_index(5));
        double a = rng.uniform(-1.0, 1.0), ph = rng.uniform(0.0, 2.0 * kPi);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                h.at(i, j) += a * std::sin(2.0 * kPi * (static_cast<double>(ky) * i / n +
                                                        static_cast<double>(kx) * j / n) +
                                           ph);
    }
    double mean = h.mean();
    for (double& v : h.data) v -= mean;
    GradientField g = gradient_from_height_matched(h);
    HeightField rec = integrate_frankot_chellappa(g);
    double rmse = 0.0;
    for (size_t i = 0; i < h.data.size(); ++i) {
        double d = rec.data[i] - h.data[i];
        rmse += d * d;
    }
    rmse = std::sqrt(rmse / static_cast<double>(h.data.size()));
    CHECK(rmse < 1e-10);
}

TEST_CASE("frankot-chellappa: periodic sinusoid from analytic cell-center gradients") {
    int n = 128;
    int kx = 2, ky = 1;
    double amp = 1.0, ph = 0.7;
    HeightField h(n, n);
    GradientField g(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double arg = 2.0 * kPi * (static_cast<double>(ky) * i / n +
                                      static_cast<double>(kx) * j / n) + ph;
            h.at(i, j) = amp * std::sin(arg);
            // gradients live at cell centers under the 2x2-loop discretization
            double argc = 2.0 * kPi * (ky * (i + 0.5) / n + kx * (j + 0.5) / n) + ph;
            g.set(i, j, amp * (2.0 * kPi * kx / n) * std::cos(argc),
                  amp * (2.0 * kPi * ky / n) * std::cos(argc));
        }
    double mean = h.mean();
    HeightField rec = integrate_frankot_chellappa(g);
    double rmse = 0.0;
    for (size_t i = 0; i < h.data.size(); ++i) {
        double d = rec.data[i] - (h.data[i] - mean);
        rmse += d * d;
    }
    rmse = std::sqrt(rmse / static_cast<double>(h.data.size()));
    CHECK(rmse < 1e-3);
}

TEST_CASE("frankot-chellappa is odd under gradient negation") {
    Rng rng(17);
    GradientField g(24, 24);
    for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 24; ++j)
            g.set(i, j, rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    GradientField neg(24, 24);
    for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 24; ++j) neg.set(i, j, -g.p(i, j), -g.q(i, j));
    HeightField a = integrate_frankot_chellappa(g);
    HeightField b = integrate_frankot_chellappa(neg);
    for (size_t i = 0; i < a.data.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(-b.data[i]).epsilon(1e-9));
}

TEST_CASE("resample_field: constant and frontal fields survive") {
    NormalField n(160, 160);
    Vec3 v = Vec3{0.2, -0.1, 0.95}.normalized();
    for (int i = 0; i < 160; ++i)
        for (int j = 0; j < 160; ++j) n.set(i, j, v);
    NormalField small = resample_field(n, 96, 96);
    for (int i = 0; i < 96; ++i)
        for (int j = 0; j < 96; ++j) {
            CHECK(small.at(i, j).x == doctest::Approx(v.x));
            CHECK(small.at(i, j).z == doctest::Approx(v.z));
        }
    CHECK_THROWS_AS(resample_field(n, 100, 100), ConfigError);
}

TEST_CASE("resample_field: down-then-up of a smooth field is close to identity") {
    NormalField n = random_smooth_field(160, 160, 3);
    NormalField down = resample_field(n, 96, 96);
    NormalField up = resample_field(down, 160, 160);
    double med = angular_error(n, up).median_deg;
    CHECK(med < 2.0);
}

TEST_CASE("resample_field commutes with flip on foreground") {
    NormalField n = random_smooth_field(64, 64, 11);
    NormalField a = resample_field(flip_convex_concave(n), 48, 48);
    NormalField b = flip_convex_concave(resample_field(n, 48, 48));
    double med = angular_error(a, b).median_deg;
    CHECK(med < 0.5);
}

TEST_CASE("resample_field keeps background crisp") {
    NormalField n(32, 32);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
            if (j < 16)
                n.set(i, j, {0, 0, 1});
            else
                n.set_background(i, j);
        }
    NormalField r = resample_field(n, 16, 16);
    bool saw_fg = false, saw_bg = false;
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            if (r.is_background(i, j)) {
                saw_bg = true;
                continue;
            }
            saw_fg = true;
            // no sentinel bleed: foreground stays exactly frontal
            CHECK(r.at(i, j).z == doctest::Approx(1.0));
        }
    CHECK(saw_fg);
    CHECK(saw_bg);
}

TEST_CASE("angular_error basics") {
    NormalField a(2, 2), b(2, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            a.set(i, j, {0, 0, 1});
            b.set(i, j, {0, 0, 1});
        }
    CHECK(angular_error(a, b).median_deg == doctest::Approx(0.0));

    b.set(0, 0, {1, 0, 0});
    CHECK(angular_error(a, b).per_pixel_deg[0] == doctest::Approx(90.0));

    // 30-degree tilted plane vs its flip: angle is exactly 60 degrees
    double t = rad_from_deg(30.0);
    NormalField p(1, 1), q(1, 1);
    p.set(0, 0, {std::sin(t), 0, std::cos(t)});
    q.set(0, 0, {-std::sin(t), 0, std::cos(t)});
    CHECK(angular_error(p, q).median_deg == doctest::Approx(60.0));

    NormalField wrong(2, 3);
    CHECK_THROWS_AS(angular_error(a, wrong), ConfigError);
}

TEST_CASE("median_of handles even and odd counts") {
    CHECK(median_of({3.0, 1.0, 2.0}) == doctest::Approx(2.0));
    CHECK(median_of({4.0, 1.0, 3.0, 2.0}) == doctest::Approx(2.5));
    CHECK_THROWS_AS(median_of({}), ConfigError);
}

TEST_CASE("resize_image reproduces constants") {
    ShadingImage img(8, 8);
    for (auto& v : img.data) v = 0.4;
    ShadingImage big = resize_image(img, 20, 20);
    for (double v : big.data) CHECK(v == doctest::Approx(0.4));
}
