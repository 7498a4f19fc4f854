#include <doctest.h>

#include <cmath>

#include "sfs/dataset.hpp"
#include "sfs/lighting.hpp"
#include "sfs/rng.hpp"

using namespace sfs;
using namespace sfs::light;

namespace {

// curved patch (piece of an egg-crate) rendered unclamped under a given light
struct MadePatch {
    geom::NormalField x0;
    geom::ShadingImage c;
};

MadePatch make_lit_patch(int d, const Vec3& l, double albedo, double phase) {
    geom::HeightField h(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            h.at(i, j) = 2.5 * std::sin(2.0 * kPi * i / d + phase) *
                         std::sin(2.0 * kPi * j / d + 0.4 * phase);
    MadePatch out;
    out.x0 = geom::normals_from_height_central(h);
    out.c = geom::ShadingImage(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            out.c.at(i, j) = albedo * out.x0.at(i, j).normalized().dot(l);  // unclamped
    return out;
}

}  // namespace

TEST_CASE("infer_light recovers the exact light from a noiseless unclamped render") {
    Vec3 l = Vec3{0.3, -0.2, 0.93}.normalized();
    MadePatch p = make_lit_patch(16, l, 1.0, 0.8);
    LightNomination nom = infer_light(p.x0, p.c, 0);
    REQUIRE_FALSE(nom.planar);
    double angle = std::acos(std::clamp(nom.l.normalized().dot(l), -1.0, 1.0));
    CHECK(angle <= 1e-6);
    CHECK(nom.l.norm() == doctest::Approx(1.0).epsilon(1e-6));

    // scaling c by the albedo scales the nomination, direction unchanged
    MadePatch scaled = make_lit_patch(16, l, 0.6, 0.8);
    LightNomination nom2 = infer_light(scaled.x0, scaled.c, 0);
    CHECK(nom2.l.norm() == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(std::acos(std::clamp(nom2.l.normalized().dot(l), -1.0, 1.0)) <= 1e-6);
}

TEST_CASE("constant-normal patches are flagged planar") {
    geom::NormalField flat(16, 16);
    geom::ShadingImage c(16, 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            flat.set(i, j, Vec3{0.1, 0.1, 0.98}.normalized());
            c.at(i, j) = 0.7;
        }
    CHECK(infer_light(flat, c, 0).planar);

    // all-background patch has too few fit pixels
    geom::NormalField bg(16, 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) bg.set_background(i, j);
    CHECK(infer_light(bg, c, 0).planar);
}

TEST_CASE("cluster_and_flip repairs a quadrant flip exactly") {
    // 4x4 patch grid; every patch curved; render under one light, then flip
    // the top-left 2x2 quadrant
    Vec3 l = Vec3{0.35, 0.25, 0.9}.normalized();
    int rows = 4, cols = 4, d = 16;
    std::vector<geom::NormalField> patches;
    std::vector<LightNomination> noms;
    std::vector<bool> flipped_truth;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            MadePatch p = make_lit_patch(d, l, 1.0, 0.3 + 0.7 * (r * cols + c));
            bool flip = r < 2 && c < 2;
            geom::NormalField field = flip ? geom::flip_convex_concave(p.x0) : p.x0;
            noms.push_back(infer_light(field, p.c, r * cols + c));
            patches.push_back(field);
            flipped_truth.push_back(flip);
        }

    FlipResult res = cluster_and_flip(patches, noms, 5);
    REQUIRE(res.applied);
    for (int k = 0; k < rows * cols; ++k)
        CHECK(static_cast<bool>(res.flip_mask[k]) == flipped_truth[k]);

    // post-flip nominations collapse to a single cluster (all near l)
    for (int k = 0; k < rows * cols; ++k) {
        MadePatch p = make_lit_patch(d, l, 1.0, 0.3 + 0.7 * k);
        LightNomination nom = infer_light(patches[k], p.c, k);
        REQUIRE_FALSE(nom.planar);
        CHECK(std::acos(std::clamp(nom.l.normalized().dot(l), -1.0, 1.0)) < 1e-6);
    }

    // idempotence: re-nominating on the repaired field and applying again
    // changes nothing
    auto before = patches;
    std::vector<LightNomination> noms2;
    for (int k = 0; k < rows * cols; ++k) {
        MadePatch p = make_lit_patch(d, l, 1.0, 0.3 + 0.7 * k);
        noms2.push_back(infer_light(patches[k], p.c, k));
    }
    FlipResult res3 = cluster_and_flip(patches, noms2, 6);
    for (int k = 0; k < rows * cols; ++k) CHECK(res3.flip_mask[k] == 0);
    for (int k = 0; k < rows * cols; ++k) CHECK(patches[k].data == before[k].data);
}

TEST_CASE("cluster_and_flip is equivariant under a global flip") {
    Vec3 l = Vec3{0.4, -0.1, 0.91}.normalized();
    int n = 9, d = 16;
    std::vector<geom::NormalField> patches, flipped;
    std::vector<LightNomination> noms, noms_f;
    for (int k = 0; k < n; ++k) {
        MadePatch p = make_lit_patch(d, l, 1.0, 0.2 + 0.5 * k);
        geom::NormalField f = k < 3 ? geom::flip_convex_concave(p.x0) : p.x0;
        patches.push_back(f);
        flipped.push_back(geom::flip_convex_concave(f));
        noms.push_back(infer_light(patches.back(), p.c, k));
        noms_f.push_back(infer_light(flipped.back(), p.c, k));
    }
    FlipResult a = cluster_and_flip(patches, noms, 3);
    FlipResult b = cluster_and_flip(flipped, noms_f, 3);
    REQUIRE(a.applied);
    REQUIRE(b.applied);
    // same patches get flipped in both worlds, and results stay mirror images
    CHECK(a.flip_mask == b.flip_mask);
    for (int k = 0; k < n; ++k) {
        geom::NormalField mirror = geom::flip_convex_concave(flipped[k]);
        CHECK(mirror.data == patches[k].data);
    }
}

TEST_CASE("all-planar nominations are a no-op") {
    std::vector<geom::NormalField> patches(3, geom::NormalField(16, 16));
    std::vector<LightNomination> noms(3);
    for (auto& n : noms) n.planar = true;
    FlipResult res = cluster_and_flip(patches, noms, 1);
    CHECK_FALSE(res.applied);
    for (auto m : res.flip_mask) CHECK(m == 0);
}

TEST_CASE("size tie breaks toward the cluster nearer the raw mean nomination") {
    // two tight clusters of two patches each; cluster A has strong (long)
    // raw nominations, cluster B weak ones, so A wins the tie
    std::vector<geom::NormalField> patches(4, geom::NormalField(16, 16));
    Vec3 la = Vec3{0.5, 0.0, 0.87}.normalized();
    Vec3 lb = Vec3{-0.5, 0.0, 0.87}.normalized();
    std::vector<LightNomination> noms(4);
    noms[0] = {0, la * 1.0, false};
    noms[1] = {1, la * 0.95, false};
    noms[2] = {2, lb * 0.4, false};
    noms[3] = {3, lb * 0.38, false};
    for (auto& p : patches)
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) p.set(i, j, {0, 0, 1});

    FlipResult res = cluster_and_flip(patches, noms, 9);
    REQUIRE(res.applied);
    CHECK(res.flip_mask[0] == 0);
    CHECK(res.flip_mask[1] == 0);
    CHECK(res.flip_mask[2] == 1);
    CHECK(res.flip_mask[3] == 1);
    CHECK(res.dominant.dot(la) > 0.99);
}

TEST_CASE("planar patches never flip even when a majority exists") {
    Vec3 l = Vec3{0.3, 0.3, 0.9}.normalized();
    std::vector<geom::NormalField> patches;
    std::vector<LightNomination> noms;
    for (int k = 0; k < 5; ++k) {
        MadePatch p = make_lit_patch(16, l, 1.0, 0.4 * k);
        geom::NormalField f = k < 2 ? geom::flip_convex_concave(p.x0) : p.x0;
        patches.push_back(f);
        noms.push_back(infer_light(f, p.c, k));
    }
    patches.push_back(geom::NormalField(16, 16));  // planar extra
    LightNomination planar;
    planar.patch_index = 5;
    noms.push_back(planar);
    auto planar_before = patches.back();

    FlipResult res = cluster_and_flip(patches, noms, 2);
    REQUIRE(res.applied);
    CHECK(res.flip_mask[5] == 0);
    CHECK(patches[5].data == planar_before.data);
    CHECK(res.flip_mask[0] == 1);
    CHECK(res.flip_mask[1] == 1);
}
