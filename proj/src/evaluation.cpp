#include "sfs/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace sfs::eval {

ReferencePair make_reference_pair(const geom::NormalField& render_shape) {
    ReferencePair p;
    p.convex = render_shape;
    p.concave = geom::flip_convex_concave(render_shape);
    return p;
}

double median_angular_error(const geom::NormalField& sample,
                            const geom::NormalField& reference) {
    return geom::angular_error(sample, reference).median_deg;
}

Mode classify_mode(const geom::NormalField& sample, const ReferencePair& refs) {
    double ec = median_angular_error(sample, refs.convex);
    double ek = median_angular_error(sample, refs.concave);
    return ek < ec ? Mode::Concave : Mode::Convex;
}

double field_distance(const geom::NormalField& a, const geom::NormalField& b) {
    SFS_CHECK(a.height == b.height && a.width == b.width, "field_distance: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double wasserstein_1(const std::vector<geom::NormalField>& samples, const ReferencePair& refs) {
    SFS_CHECK(!samples.empty(), "wasserstein_1: need at least one sample");
    size_t n = samples.size();
    // Each sample i ships mass x_i to the convex reference and 1/n - x_i to
    // the concave one, sum x_i = 1/2. Minimizing sum x_i (c1_i - c2_i) +
    // const is solved by filling the smallest deltas first.
    std::vector<double> c1(n), c2(n);
    for (size_t i = 0; i < n; ++i) {
        c1[i] = field_distance(samples[i], refs.convex);
        c2[i] = field_distance(samples[i], refs.concave);
    }
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return c1[a] - c2[a] < c1[b] - c2[b]; });
    double per = 1.0 / static_cast<double>(n);
    double remaining = 0.5;
    double cost = 0.0;
    for (size_t k = 0; k < n; ++k) {
        size_t i = order[k];
        double to_c1 = std::min(per, remaining);
        remaining -= to_c1;
        cost += to_c1 * c1[i] + (per - to_c1) * c2[i];
    }
    return cost;
}

MetricReport evaluate(const std::vector<geom::NormalField>& samples, const ReferencePair& refs,
                      bool top5) {
    SFS_CHECK(!samples.empty(), "evaluate: empty sample set");
    auto shrink = [](const geom::NormalField& f) {
        if (f.height == kMetricResolution && f.width == kMetricResolution) return f;
        return geom::resample_field(f, kMetricResolution, kMetricResolution);
    };
    ReferencePair small;
    small.convex = shrink(refs.convex);
    small.concave = shrink(refs.concave);
    std::vector<geom::NormalField> ss;
    ss.reserve(samples.size());
    for (const auto& s : samples) ss.push_back(shrink(s));

    MetricReport rep;
    rep.n_samples = static_cast<int>(ss.size());
    std::vector<double> errs;
    for (const auto& s : ss) {
        double ec = median_angular_error(s, small.convex);
        double ek = median_angular_error(s, small.concave);
        if (ek < ec)
            ++rep.concave_count;
        else
            ++rep.convex_count;
        errs.push_back(std::min(ec, ek));
    }
    if (top5) {
        std::sort(errs.begin(), errs.end());
        size_t k = std::min<size_t>(5, errs.size());
        rep.median_ae_deg = std::accumulate(errs.begin(), errs.begin() + k, 0.0) / k;
    } else {
        rep.median_ae_deg = geom::median_of(errs);
    }
    rep.wasserstein = wasserstein_1(ss, small);
    return rep;
}

std::string report_json(const MetricReport& r) {
    nlohmann::json j;
    j["median_ae_deg"] = r.median_ae_deg;
    j["wasserstein"] = r.wasserstein;
    j["mode_counts"] = {{"convex", r.convex_count}, {"concave", r.concave_count}};
    j["n_samples"] = r.n_samples;
    return j.dump(2);
}

}  // namespace sfs::eval
