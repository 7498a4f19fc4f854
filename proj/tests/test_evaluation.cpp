#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "sfs/evaluation.hpp"
#include "sfs/rng.hpp"

using namespace sfs;
using namespace sfs::eval;

namespace {

geom::NormalField bumpy_field(int n, uint64_t seed) {
    Rng rng(seed);
    geom::NormalField f(n, n);
    double cx = n * rng.uniform(0.3, 0.7), cy = n * rng.uniform(0.3, 0.7);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double gx = -(j - cx) / (0.2 * n * n) * std::exp(-((i - cy) * (i - cy) +
                                                               (j - cx) * (j - cx)) /
                                                             (0.1 * n * n));
            double gy = -(i - cy) / (0.2 * n * n) * std::exp(-((i - cy) * (i - cy) +
                                                               (j - cx) * (j - cx)) /
                                                             (0.1 * n * n));
            f.set(i, j, Vec3{-gx * n, -gy * n, 1.0}.normalized());
        }
    return f;
}

// exhaustive transport oracle: LP vertices for two destination columns have
// at most one fractionally split sample
double wasserstein_bruteforce(const std::vector<geom::NormalField>& samples,
                              const ReferencePair& refs) {
    int n = static_cast<int>(samples.size());
    std::vector<double> c1(n), c2(n);
    for (int i = 0; i < n; ++i) {
        c1[i] = field_distance(samples[i], refs.convex);
        c2[i] = field_distance(samples[i], refs.concave);
    }
    double per = 1.0 / n;
    double best = 1e300;
    int full = n / 2;  // samples sent entirely to the convex column
    for (int mask = 0; mask < (1 << n); ++mask) {
        if (__builtin_popcount(static_cast<unsigned>(mask)) != full) continue;
        double base = 0.0;
        for (int i = 0; i < n; ++i) base += (mask >> i & 1) ? per * c1[i] : per * c2[i];
        if (n % 2 == 0) {
            best = std::min(best, base);
        } else {
            // odd n: half of one remaining sample's mass moves over
            for (int f = 0; f < n; ++f) {
                if (mask >> f & 1) continue;
                double cost = base - per * c2[f] + 0.5 * per * c1[f] + 0.5 * per * c2[f];
                best = std::min(best, cost);
            }
        }
    }
    return best;
}

}  // namespace

TEST_CASE("reference pair construction") {
    geom::NormalField f = bumpy_field(32, 1);
    ReferencePair p = make_reference_pair(f);
    CHECK(p.convex.data == f.data);
    geom::NormalField expect = geom::flip_convex_concave(f);
    CHECK(p.concave.data == expect.data);
}

TEST_CASE("median angular error is symmetric and zero on identity") {
    geom::NormalField a = bumpy_field(32, 2), b = bumpy_field(32, 3);
    CHECK(median_angular_error(a, a) == doctest::Approx(0.0));
    CHECK(median_angular_error(a, b) == doctest::Approx(median_angular_error(b, a)));
}

TEST_CASE("classify_mode: references classify to themselves, ties go convex") {
    geom::NormalField f = bumpy_field(64, 4);
    ReferencePair refs = make_reference_pair(f);
    CHECK(classify_mode(refs.convex, refs) == Mode::Convex);
    CHECK(classify_mode(refs.concave, refs) == Mode::Concave);

    geom::NormalField frontal(64, 64);
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j) frontal.set(i, j, {0, 0, 1});
    CHECK(classify_mode(frontal, refs) == Mode::Convex);  // symmetric tie

    // equivariance: flipping a non-tied sample flips its label
    geom::NormalField s = bumpy_field(64, 5);
    Mode m = classify_mode(s, refs);
    Mode mf = classify_mode(geom::flip_convex_concave(s), refs);
    CHECK(m != mf);
}

TEST_CASE("wasserstein: exact references give zero; degenerate sets give half the gap") {
    geom::NormalField f = bumpy_field(64, 6);
    ReferencePair refs = make_reference_pair(f);

    std::vector<geom::NormalField> both = {refs.convex, refs.concave};
    CHECK(wasserstein_1(both, refs) == doctest::Approx(0.0));

    std::vector<geom::NormalField> degenerate = {refs.convex, refs.convex, refs.convex,
                                                 refs.convex};
    double gap = field_distance(refs.convex, refs.concave);
    CHECK(std::abs(wasserstein_1(degenerate, refs) - 0.5 * gap) <= 1e-9);
}

TEST_CASE("wasserstein matches the exhaustive LP oracle on small sets") {
    Rng rng(7);
    geom::NormalField base = bumpy_field(16, 8);
    ReferencePair refs = make_reference_pair(base);
    for (int n = 1; n <= 6; ++n) {
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<geom::NormalField> samples;
            for (int i = 0; i < n; ++i) {
                geom::NormalField s = bumpy_field(16, 100 + 10 * n + i + trial * 1000);
                if (rng.uniform() < 0.5) s = geom::flip_convex_concave(s);
                samples.push_back(std::move(s));
            }
            double fast = wasserstein_1(samples, refs);
            double slow = wasserstein_bruteforce(samples, refs);
            CHECK(fast == doctest::Approx(slow).epsilon(1e-12));
        }
    }
}

TEST_CASE("wasserstein is invariant under sample reordering and nonnegative") {
    geom::NormalField f = bumpy_field(32, 9);
    ReferencePair refs = make_reference_pair(f);
    std::vector<geom::NormalField> samples;
    for (int i = 0; i < 5; ++i) samples.push_back(bumpy_field(32, 200 + i));
    double a = wasserstein_1(samples, refs);
    std::reverse(samples.begin(), samples.end());
    double b = wasserstein_1(samples, refs);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a >= 0.0);
}

TEST_CASE("evaluate downsamples, counts modes, and reports the exact schema") {
    geom::NormalField f = bumpy_field(128, 10);
    ReferencePair refs = make_reference_pair(f);
    std::vector<geom::NormalField> samples = {refs.convex, refs.convex, refs.concave};
    MetricReport rep = evaluate(samples, refs);
    CHECK(rep.n_samples == 3);
    CHECK(rep.convex_count == 2);
    CHECK(rep.concave_count == 1);
    CHECK(rep.median_ae_deg == doctest::Approx(0.0).epsilon(1e-6));

    nlohmann::json j = nlohmann::json::parse(report_json(rep));
    CHECK(j.contains("median_ae_deg"));
    CHECK(j.contains("wasserstein"));
    CHECK(j.contains("mode_counts"));
    CHECK(j["mode_counts"].contains("convex"));
    CHECK(j["mode_counts"].contains("concave"));
    CHECK(j.contains("n_samples"));
    CHECK(j["mode_counts"]["convex"] == 2);

    // top-5 aggregate: mean of the five best seeds
    std::vector<geom::NormalField> many(7, refs.convex);
    MetricReport top = evaluate(many, refs, true);
    CHECK(top.median_ae_deg == doctest::Approx(0.0).epsilon(1e-6));
}
