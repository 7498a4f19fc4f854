#pragma once

#include <string>
#include <vector>

#include "sfs/guidance.hpp"
#include "sfs/lighting.hpp"

namespace sfs::scale {

struct Stage {
    int res = 0;            // square stage resolution, divisible by 16
    double eta = 0.0;       // guidance rate at this stage
    bool lighting = false;  // cluster-and-flip the incoming field
    int restart_t = 0;      // forward-noising timestep entering this stage
};

struct MultiscaleSchedule {
    std::vector<Stage> stages;
    int fusion_count = 3;  // final stages fused in (p,q) space
};

// JSON: {"stages":[{"res":..,"eta":..,"light":..,"restart_t":..},...],
//        "fusion_count": n}
MultiscaleSchedule load_schedule(const std::string& path);
void save_schedule(const std::string& path, const MultiscaleSchedule& s);

// Hard invariants (throws ConfigError): non-empty; resolutions divisible by
// 16; first stage restart_t == T; later stages 0 < restart_t < T;
// 1 <= fusion_count <= #stages.
void validate_schedule(const MultiscaleSchedule& s, int T);

// Soft advice: integer-multiple consecutive resolutions in the coarse-to-fine
// leg, inert first-stage lighting flag.
std::vector<std::string> lint_schedule(const MultiscaleSchedule& s);

// Table-style shipped defaults.
MultiscaleSchedule perception_schedule();
MultiscaleSchedule captured_photo_schedule();

struct StageResult {
    int resolution = 0;
    geom::NormalField field;
    std::vector<guide::TraceRow> trace;
    std::vector<uint8_t> flip_mask;  // per patch; empty when lighting didn't run
    int flip_rows = 0, flip_cols = 0;
};

struct VCycleConfig {
    guide::GuidanceConfig guidance;  // eta is overridden per stage
    bool lighting_enabled = true;    // ablation switch
    bool single_scale = false;       // run only the first stage
    bool collect_traces = false;
};

// Forward-noise the field to restart_t (Eq-1 style) and resume guided DDIM
// from the nearest sub-sequence timestep at or below it. restart_t must be in
// (0, T].
geom::NormalField noise_and_resume(const geom::NormalField& field,
                                   const geom::ShadingImage& cond, int restart_t, double eta,
                                   const guide::DenoiserHandle& den,
                                   const diff::NoiseSchedule& sched,
                                   const guide::GuidanceConfig& base_cfg, uint64_t noise_seed,
                                   std::vector<guide::TraceRow>* trace = nullptr);

struct VCycleResult {
    geom::NormalField fused;
    std::vector<StageResult> stages;
};

// Stage 1 samples from pure noise at full resolution; each later stage
// resamples the previous field, optionally applies lighting-consistency
// flips, and always noise-and-resumes. The last fusion_count stage fields are
// fused in (p,q) space.
VCycleResult run_v_cycle(const geom::ShadingImage& image, const MultiscaleSchedule& schedule,
                         const guide::DenoiserHandle& den, const diff::NoiseSchedule& sched,
                         const VCycleConfig& cfg, uint64_t seed);

// (p,q)-space fusion: convert, resample to the highest resolution, average
// over foreground, convert back.
geom::NormalField fuse_final_stages(const std::vector<const geom::NormalField*>& fields);

}  // namespace sfs::scale
