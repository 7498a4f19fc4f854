#pragma once

#include <cstdint>
#include <vector>

#include "sfs/geometry.hpp"

namespace sfs::light {

// Eigenvalue-ratio threshold below which a patch counts as planar (its
// least-squares lighting system is singular).
inline constexpr double kPlanarEps = 1e-3;
// Minimum usable pixels for a nomination.
inline constexpr int kMinFitPixels = 8;

struct LightNomination {
    int patch_index = -1;
    Vec3 l{};            // unnormalized least-squares light, albedo-scaled
    bool planar = true;  // planar patches are excluded from clustering
};

// Least-squares shadowless-Lambertian light fit over foreground pixels with
// c > 0: argmin_l sum_i (c_i - <nhat_i, l>)^2 via the 3x3 normal equations.
// The planar flag is set when the system matrix sum(nhat nhat^T) has
// eigenvalue ratio min/max below kPlanarEps.
LightNomination infer_light(const geom::NormalField& x0, const geom::ShadingImage& c,
                            int patch_index = -1);

struct FlipResult {
    std::vector<uint8_t> flip_mask;  // one byte per patch, 1 = flipped
    bool applied = false;            // false when fewer than 2 usable nominations
    Vec3 dominant{};                 // majority-cluster center (normalized)
};

// 2-means over the normalized nominations (k-means++ seeding, 50 restarts,
// best inertia); every minority-cluster patch has its x/y channels negated in
// place. Planar patches never flip. Tie on cluster sizes: the cluster whose
// center lies closer to the mean raw nomination wins.
FlipResult cluster_and_flip(std::vector<geom::NormalField>& patches,
                            const std::vector<LightNomination>& noms, uint64_t seed);

}  // namespace sfs::light
