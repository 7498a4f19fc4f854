#include "sfs/lighting.hpp"

#include <algorithm>
#include <cmath>

#include "sfs/rng.hpp"

namespace sfs::light {

namespace {

// Eigenvalues of a symmetric 3x3 by cyclic Jacobi; enough accuracy for a
// conditioning test.
void sym3_eigenvalues(double a[3][3], double out[3]) {
    double m[3][3];
    std::copy(&a[0][0], &a[0][0] + 9, &m[0][0]);
    for (int sweep = 0; sweep < 32; ++sweep) {
        double off = std::abs(m[0][1]) + std::abs(m[0][2]) + std::abs(m[1][2]);
        if (off < 1e-15) break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(m[p][q]) < 1e-18) continue;
                double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < 3; ++k) {
                    double mkp = m[k][p], mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for (int k = 0; k < 3; ++k) {
                    double mpk = m[p][k], mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
    }
    out[0] = m[0][0];
    out[1] = m[1][1];
    out[2] = m[2][2];
    std::sort(out, out + 3);
}

bool solve3(const double a[3][3], const double b[3], Vec3* x) {
    double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                 a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                 a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if (std::abs(det) < 1e-18) return false;
    auto minor = [&](int r, int c) {
        double sub[2][2];
        int ri = 0;
        for (int i = 0; i < 3; ++i) {
            if (i == r) continue;
            int ci = 0;
            for (int j = 0; j < 3; ++j) {
                if (j == c) continue;
                sub[ri][ci++] = a[i][j];
            }
            ++ri;
        }
        return sub[0][0] * sub[1][1] - sub[0][1] * sub[1][0];
    };
    double inv[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            inv[j][i] = ((i + j) % 2 == 0 ? 1.0 : -1.0) * minor(i, j) / det;
    x->x = inv[0][0] * b[0] + inv[0][1] * b[1] + inv[0][2] * b[2];
    x->y = inv[1][0] * b[0] + inv[1][1] * b[1] + inv[1][2] * b[2];
    x->z = inv[2][0] * b[0] + inv[2][1] * b[1] + inv[2][2] * b[2];
    return true;
}

struct KmeansOut {
    Vec3 center[2];
    std::vector<int> assign;
    int size[2] = {0, 0};
    double inertia = 0.0;
};

KmeansOut kmeans2(const std::vector<Vec3>& pts, Rng& rng) {
    KmeansOut best;
    best.inertia = 1e300;
    int n = static_cast<int>(pts.size());
    for (int restart = 0; restart < 50; ++restart) {
        // k-means++ seeding
        Vec3 c0 = pts[rng.uniform_index(static_cast<uint64_t>(n))];
        std::vector<double> d2(n);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            Vec3 d = pts[i] - c0;
            d2[i] = d.dot(d);
            sum += d2[i];
        }
        Vec3 c1 = c0;
        if (sum > 0.0) {
            double r = rng.uniform() * sum;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) {
                    c1 = pts[i];
                    break;
                }
            }
        }
        Vec3 centers[2] = {c0, c1};
        std::vector<int> assign(n, 0);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (int i = 0; i < n; ++i) {
                Vec3 e0 = pts[i] - centers[0];
                Vec3 e1 = pts[i] - centers[1];
                int a = e1.dot(e1) < e0.dot(e0) ? 1 : 0;
                if (a != assign[i]) {
                    assign[i] = a;
                    changed = true;
                }
            }
            Vec3 sums[2] = {{}, {}};
            int cnt[2] = {0, 0};
            for (int i = 0; i < n; ++i) {
                sums[assign[i]] += pts[i];
                ++cnt[assign[i]];
            }
            for (int k = 0; k < 2; ++k)
                if (cnt[k] > 0) centers[k] = sums[k] * (1.0 / cnt[k]);
            if (!changed) break;
        }
        double inertia = 0.0;
        int cnt[2] = {0, 0};
        for (int i = 0; i < n; ++i) {
            Vec3 e = pts[i] - centers[assign[i]];
            inertia += e.dot(e);
            ++cnt[assign[i]];
        }
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.center[0] = centers[0];
            best.center[1] = centers[1];
            best.assign = assign;
            best.size[0] = cnt[0];
            best.size[1] = cnt[1];
        }
    }
    return best;
}

}  // namespace

LightNomination infer_light(const geom::NormalField& x0, const geom::ShadingImage& c,
                            int patch_index) {
    SFS_CHECK(x0.height == c.height && x0.width == c.width, "infer_light: size mismatch");
    LightNomination nom;
    nom.patch_index = patch_index;
    double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    double b[3] = {0, 0, 0};
    int used = 0;
    for (int i = 0; i < x0.height; ++i)
        for (int j = 0; j < x0.width; ++j) {
            if (x0.is_background(i, j)) continue;
            double ci = c.at(i, j);
            if (ci <= 0.0) continue;  // clamped-to-zero pixels bias the fit
            Vec3 n = x0.at(i, j).normalized();
            if (n.norm() < 0.5) continue;  // zero vector
            double nv[3] = {n.x, n.y, n.z};
            for (int r = 0; r < 3; ++r) {
                for (int s = 0; s < 3; ++s) m[r][s] += nv[r] * nv[s];
                b[r] += ci * nv[r];
            }
            ++used;
        }
    if (used < kMinFitPixels) return nom;  // planar
    double ev[3];
    sym3_eigenvalues(m, ev);
    if (ev[2] <= 0.0 || ev[0] / ev[2] < kPlanarEps) return nom;  // planar / singular
    Vec3 l;
    if (!solve3(m, b, &l)) return nom;
    nom.l = l;
    nom.planar = false;
    return nom;
}

FlipResult cluster_and_flip(std::vector<geom::NormalField>& patches,
                            const std::vector<LightNomination>& noms, uint64_t seed) {
    SFS_CHECK(patches.size() == noms.size(), "cluster_and_flip: nomination count mismatch");
    FlipResult res;
    res.flip_mask.assign(patches.size(), 0);

    std::vector<int> idx;
    std::vector<Vec3> dirs;
    Vec3 raw_mean{};
    for (size_t i = 0; i < noms.size(); ++i) {
        if (noms[i].planar) continue;
        double len = noms[i].l.norm();
        if (len < 1e-12) continue;
        idx.push_back(static_cast<int>(i));
        dirs.push_back(noms[i].l * (1.0 / len));
        raw_mean += noms[i].l;
    }
    if (dirs.size() < 2) return res;  // nothing to vote with; caller warns

    Rng rng(mix_seed(seed, 0x2fca));
    KmeansOut km = kmeans2(dirs, rng);

    // Unimodal nominations: k-means still splits the cloud, but the split is
    // noise, not a convex/concave disagreement (opposed modes sit ~2x the
    // light tilt apart). Leave the field alone.
    double sep = km.center[0].normalized().dot(km.center[1].normalized());
    if (km.size[0] == 0 || km.size[1] == 0 || sep > std::cos(rad_from_deg(10.0))) {
        res.applied = true;
        res.dominant = (km.size[0] >= km.size[1] ? km.center[0] : km.center[1]).normalized();
        return res;
    }

    int minority;
    if (km.size[0] != km.size[1]) {
        minority = km.size[0] < km.size[1] ? 0 : 1;
    } else {
        // tie: the cluster center closer to the mean raw nomination is the
        // majority (magnitudes carry the albedo-weighted confidence)
        Vec3 mh = raw_mean.normalized();
        Vec3 e0 = km.center[0].normalized() - mh;
        Vec3 e1 = km.center[1].normalized() - mh;
        minority = e0.dot(e0) <= e1.dot(e1) ? 1 : 0;
    }
    res.dominant = km.center[1 - minority].normalized();
    res.applied = true;
    for (size_t k = 0; k < idx.size(); ++k) {
        if (km.assign[k] != minority) continue;
        int p = idx[k];
        res.flip_mask[p] = 1;
        patches[p] = geom::flip_convex_concave(patches[p]);
    }
    return res;
}

}  // namespace sfs::light
