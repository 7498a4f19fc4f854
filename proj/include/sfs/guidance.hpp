#pragma once

#include <string>
#include <vector>

#include "sfs/diffusion.hpp"
#include "sfs/geometry.hpp"
#include "sfs/model.hpp"

namespace sfs::guide {

struct GuidanceConfig {
    double lambda = 0.5;   // integrability weight in (0,1]
    double eta = 0.0;      // guidance step size (>= 0); 0 disables guidance
    int j_steps = 3;       // gradient steps per sampling round
    int warmup_rounds = 8; // unguided DDIM rounds at the start of a fresh chain
    // Differentiate the guidance loss through the denoiser instead of
    // treating eps as frozen. Requires a UNet backend.
    bool backprop_through_model = false;
};

// ---- guidance losses (double precision) ----

// Sum over 2x2 pixel loops of the squared integrability residual on (p,q).
// Loops touching a background pixel are skipped; an all-background patch
// contributes zero.
double loss_integrability(const geom::NormalField& patch);
double loss_integrability_pq(const geom::GradientField& pq);

// Curvature-continuity seam loss between adjacent patches. n1,n2 are patch
// u's two lines nearest to the seam, m1,m2 patch v's. Per seam pixel:
// acos(m1_hat . normalize(2 n2 - n1)) + acos(n2_hat . normalize(2 m1 - m2)),
// extrapolation on the raw vectors, dots clamped to [-1,1]; a near-zero
// extrapolated vector contributes pi. horizontal = true means u is left of v.
double loss_seam(const geom::NormalField& u, const geom::NormalField& v, bool horizontal);

struct LossBreakdown {
    double total = 0.0;
    double seam = 0.0;           // (1/|E|) sum of seam losses
    double integrability = 0.0;  // (1/|V|) sum of integrability losses (unweighted)
};

// Eq-style weighting: total = seam + lambda * integrability (both terms
// already averaged over edges / vertices). Patches are a row-major
// rows x cols grid of d x d fields. When grad is non-null it receives
// d(total)/d(raw patch values), same layout as the inputs.
LossBreakdown total_guidance_loss(const std::vector<geom::NormalField>& patches, int rows,
                                  int cols, double lambda,
                                  std::vector<geom::NormalField>* grad = nullptr);

// ---- patch-graph sampling state ----

struct PatchGraphState {
    int rows = 0, cols = 0, d = kPatchSize;
    Tensor x;     // [P, d, d, 3] current x_t for every patch, lockstep t
    Tensor cond;  // [P, d, d, 1]

    int patches() const { return rows * cols; }
};

PatchGraphState make_graph_state(const geom::ShadingImage& image, int d = kPatchSize);

// Fresh Gaussian x_T; per-patch streams derived from the seed so results are
// independent of evaluation order.
void init_noise(PatchGraphState& state, uint64_t seed);

Tensor field_to_patches(const geom::NormalField& field, int d = kPatchSize);
geom::NormalField patches_to_field(const Tensor& x, int rows, int cols, bool clamp_unit = true);

struct DenoiserHandle {
    diff::Denoiser fn;                 // batched eps prediction (always used)
    model::UNet* unet = nullptr;       // enables backprop_through_model
};

DenoiserHandle make_unet_denoiser(model::UNet& model);

struct TraceRow {
    int t = 0;
    double total = 0.0, seam = 0.0, integrability = 0.0;
};

// Column names are part of the trace format.
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);

// One guided round: J gradient updates on x_t against the loss of the
// predicted x0_hat (all patches updated in lockstep from a frozen snapshot),
// then one DDIM step t -> t_prev for every patch. guided = false (or eta = 0)
// reduces to the plain DDIM round.
void guided_ddim_round(PatchGraphState& state, int t, int t_prev, const DenoiserHandle& den,
                       const diff::NoiseSchedule& sched, const GuidanceConfig& cfg, bool guided,
                       std::vector<TraceRow>* trace);

// Runs rounds from ddim_steps[start_index] down to 0. The first
// `warmup_rounds` rounds are unguided.
void run_chain(PatchGraphState& state, int start_index, const DenoiserHandle& den,
               const diff::NoiseSchedule& sched, const GuidanceConfig& cfg, int warmup_rounds,
               std::vector<TraceRow>* trace);

// Full reverse chain from Gaussian noise with guidance after warmup; returns
// the assembled global field.
geom::NormalField sample_single_scale(const geom::ShadingImage& image, uint64_t seed,
                                      const DenoiserHandle& den,
                                      const diff::NoiseSchedule& sched,
                                      const GuidanceConfig& cfg,
                                      std::vector<TraceRow>* trace = nullptr);

}  // namespace sfs::guide
