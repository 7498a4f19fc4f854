#pragma once

#include <string>
#include <vector>

#include "sfs/geometry.hpp"

namespace sfs::eval {

inline constexpr int kMetricResolution = 64;

// The rendering shape's field and its convex/concave flip, each carrying
// half the reference probability mass.
struct ReferencePair {
    geom::NormalField convex;
    geom::NormalField concave;
};

ReferencePair make_reference_pair(const geom::NormalField& render_shape);

// Median over foreground of |acos(n_a . n_b)| in degrees.
double median_angular_error(const geom::NormalField& sample, const geom::NormalField& reference);

enum class Mode { Convex, Concave };
// Nearer reference by median angular error; ties go to convex.
Mode classify_mode(const geom::NormalField& sample, const ReferencePair& refs);

// Euclidean distance between flattened fields (the Wasserstein ground metric).
double field_distance(const geom::NormalField& a, const geom::NormalField& b);

// Exact 1-Wasserstein distance between the empirical distribution over
// samples (mass 1/n each) and the uniform two-point reference distribution.
// Two destination columns make the transport LP solvable by sorting.
double wasserstein_1(const std::vector<geom::NormalField>& samples, const ReferencePair& refs);

struct MetricReport {
    double median_ae_deg = 0.0;
    double wasserstein = 0.0;
    int convex_count = 0;
    int concave_count = 0;
    int n_samples = 0;
};

// Downsamples everything to kMetricResolution first. top5 switches the
// angular-error aggregate from the median over seeds to the mean of the five
// best seeds.
MetricReport evaluate(const std::vector<geom::NormalField>& samples, const ReferencePair& refs,
                      bool top5 = false);

std::string report_json(const MetricReport& r);

}  // namespace sfs::eval
