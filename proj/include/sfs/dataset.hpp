#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfs/geometry.hpp"
#include "sfs/rng.hpp"

namespace sfs::data {

enum class SceneKind { GaussianBumps, RandomSpline, Ring, Star, Snake, Crater };

SceneKind scene_kind_from_string(const std::string& s);
std::string to_string(SceneKind k);

struct SceneSpec {
    SceneKind kind = SceneKind::GaussianBumps;
    int resolution = 128;
    int count = 1;            // bumps / spline knots per axis / star points
    double amplitude = 8.0;   // pixels; sign selects bumps (+) vs dents (-)
    double width = 16.0;      // pixels
    uint64_t seed = 0;
};

struct LightingPolicy {
    double cone_half_angle_deg = 60.0;  // max angle(l, z)
    double above_fraction = 0.5;        // fraction of lights from the upper image half
    double albedo_min = 0.5;
    double albedo_max = 1.0;
};

struct PatchTuple {
    geom::ShadingImage c;
    geom::NormalField x0;
    bool interior = true;  // no background pixel
};

// Deterministic in (kind, parameters, seed).
geom::HeightField generate_surface(const SceneSpec& spec);

struct RenderedScene {
    geom::ShadingImage image;
    geom::NormalField normals;  // central differences of the height field
    geom::LightDirection light;
};

geom::LightDirection sample_light(const LightingPolicy& policy, Rng& rng);

RenderedScene render_scene(const geom::HeightField& h, const LightingPolicy& policy,
                           uint64_t seed);

// Non-overlapping d x d tuples in row-major order. Dimensions must divide by d.
std::vector<PatchTuple> extract_patches(const geom::ShadingImage& img,
                                        const geom::NormalField& normals,
                                        int d = kPatchSize);

// Every interior patch appears twice: original and convex/concave flip, both
// conditioned on the same image. Non-interior patches appear once.
std::vector<PatchTuple> augment_flips(const std::vector<PatchTuple>& tuples);

// ---- on-disk dataset ----

struct DatasetConfig {
    int n_scenes = 200;
    int resolution = 128;
    std::vector<SceneKind> kinds = {SceneKind::GaussianBumps, SceneKind::RandomSpline,
                                    SceneKind::Ring, SceneKind::Star, SceneKind::Snake,
                                    SceneKind::Crater};
    int count = 3;
    double amplitude = 8.0;
    double width = 14.0;
    LightingPolicy policy;
    bool augment = true;
    uint64_t master_seed = 0;
};

// Writes one directory per scene (image.png, normals.png, meta.json) plus
// dataset.json. Bit-reproducible under a fixed master seed.
void render_dataset(const DatasetConfig& cfg, const std::string& out_dir);

DatasetConfig read_dataset_manifest(const std::string& dir);

// Loads every scene and assembles patch tuples; applies flip augmentation when
// the manifest requests it (override with augment_override 0/1, -1 = manifest).
std::vector<PatchTuple> load_patch_dataset(const std::string& dir, int augment_override = -1);

}  // namespace sfs::data
