#include "sfs/multiscale.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sfs/rng.hpp"

using nlohmann::json;

namespace sfs::scale {

MultiscaleSchedule load_schedule(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open schedule file " + path);
    json j = json::parse(f, nullptr, /*allow_exceptions=*/true);
    MultiscaleSchedule s;
    for (const auto& js : j.at("stages")) {
        Stage st;
        st.res = js.at("res").get<int>();
        st.eta = js.at("eta").get<double>();
        st.lighting = js.at("light").get<bool>();
        st.restart_t = js.at("restart_t").get<int>();
        s.stages.push_back(st);
    }
    s.fusion_count = j.at("fusion_count").get<int>();
    return s;
}

void save_schedule(const std::string& path, const MultiscaleSchedule& s) {
    json j;
    j["stages"] = json::array();
    for (const auto& st : s.stages)
        j["stages"].push_back({{"res", st.res},
                               {"eta", st.eta},
                               {"light", st.lighting},
                               {"restart_t", st.restart_t}});
    j["fusion_count"] = s.fusion_count;
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path);
    f << j.dump(2) << "\n";
}

void validate_schedule(const MultiscaleSchedule& s, int T) {
    SFS_CHECK(!s.stages.empty(), "schedule: at least one stage required");
    for (const auto& st : s.stages) {
        SFS_CHECK(st.res > 0 && st.res % kPatchSize == 0,
                  "schedule: stage resolution must be a positive multiple of 16");
        SFS_CHECK(st.eta >= 0.0, "schedule: eta must be >= 0");
    }
    SFS_CHECK(s.stages[0].restart_t == T,
              "schedule: the first stage must start from pure noise (restart_t == T)");
    for (size_t i = 1; i < s.stages.size(); ++i)
        SFS_CHECK(s.stages[i].restart_t > 0 && s.stages[i].restart_t < T,
                  "schedule: later stages need 0 < restart_t < T");
    SFS_CHECK(s.fusion_count >= 1 && s.fusion_count <= static_cast<int>(s.stages.size()),
              "schedule: fusion_count out of range");
}

std::vector<std::string> lint_schedule(const MultiscaleSchedule& s) {
    std::vector<std::string> warnings;
    if (!s.stages.empty() && s.stages[0].lighting)
        warnings.push_back(
            "stage 1 has the lighting flag set but starts from pure noise; the flag has no "
            "effect there");
    // coarse-to-fine legs benefit from resolutions that are not integer
    // multiples, so seam pixels move between stages
    for (size_t i = 1; i < s.stages.size(); ++i) {
        int a = s.stages[i - 1].res, b = s.stages[i].res;
        if (b > a && b % a == 0)
            warnings.push_back("stage " + std::to_string(i + 1) + " resolution " +
                               std::to_string(b) + " is an integer multiple of the previous " +
                               std::to_string(a) + "; seams will land on the same pixels");
    }
    return warnings;
}

MultiscaleSchedule perception_schedule() {
    MultiscaleSchedule s;
    const int res[] = {160, 128, 64, 80, 96, 112, 128, 144, 160};
    const double eta[] = {20, 15, 10, 10, 10, 15, 15, 20, 20};
    for (int i = 0; i < 9; ++i) {
        Stage st;
        st.res = res[i];
        st.eta = eta[i];
        st.lighting = i < 2;
        st.restart_t = i == 0 ? 300 : 232;
        s.stages.push_back(st);
    }
    s.fusion_count = 3;
    return s;
}

MultiscaleSchedule captured_photo_schedule() {
    MultiscaleSchedule s;
    const int res[] = {256, 160, 96, 128, 192, 224, 240, 256};
    const double eta[] = {30, 20, 12, 15, 20, 25, 28, 30};
    for (int i = 0; i < 8; ++i) {
        Stage st;
        st.res = res[i];
        st.eta = eta[i];
        st.lighting = i >= 3 && i <= 4;
        st.restart_t = i == 0 ? 300 : 238;
        s.stages.push_back(st);
    }
    s.fusion_count = 3;
    return s;
}

geom::NormalField noise_and_resume(const geom::NormalField& field,
                                   const geom::ShadingImage& cond, int restart_t, double eta,
                                   const guide::DenoiserHandle& den,
                                   const diff::NoiseSchedule& sched,
                                   const guide::GuidanceConfig& base_cfg, uint64_t noise_seed,
                                   std::vector<guide::TraceRow>* trace) {
    SFS_CHECK(field.height == cond.height && field.width == cond.width,
              "noise_and_resume: field and condition must share a resolution");
    SFS_CHECK(restart_t > 0 && restart_t <= sched.T,
              "noise_and_resume: restart_t must be in (0, T]");

    guide::PatchGraphState state = guide::make_graph_state(cond);
    Tensor x0 = guide::field_to_patches(field);
    Tensor omega = Tensor::like(x0);
    {
        int64_t per = static_cast<int64_t>(state.d) * state.d * 3;
        for (int p = 0; p < state.patches(); ++p) {
            Rng rng(mix_seed(noise_seed, static_cast<uint64_t>(p), 0x0a9e));
            float* dst = omega.data() + p * per;
            for (int64_t i = 0; i < per; ++i) dst[i] = rng.gaussian_f();
        }
    }
    state.x = diff::forward_noising(x0, restart_t, omega, sched);

    guide::GuidanceConfig cfg = base_cfg;
    cfg.eta = eta;
    int start = sched.ddim_index_at_or_below(restart_t);
    guide::run_chain(state, start, den, sched, cfg, /*warmup_rounds=*/0, trace);
    return guide::patches_to_field(state.x, state.rows, state.cols);
}

namespace {

// Slice a field and condition into d x d patches, nominate lights, flip the
// minority cluster, reassemble.
light::FlipResult lighting_pass(geom::NormalField& field, const geom::ShadingImage& cond,
                                uint64_t seed, int* rows_out, int* cols_out) {
    int d = kPatchSize;
    int rows = field.height / d, cols = field.width / d;
    *rows_out = rows;
    *cols_out = cols;
    std::vector<geom::NormalField> patches(static_cast<size_t>(rows) * cols);
    std::vector<light::LightNomination> noms(patches.size());
    for (int pi = 0; pi < rows; ++pi)
        for (int pj = 0; pj < cols; ++pj) {
            int idx = pi * cols + pj;
            geom::NormalField p(d, d);
            geom::ShadingImage c(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    p.set(i, j, field.at(pi * d + i, pj * d + j));
                    c.at(i, j) = cond.at(pi * d + i, pj * d + j);
                }
            noms[idx] = light::infer_light(p, c, idx);
            patches[idx] = std::move(p);
        }
    light::FlipResult res = light::cluster_and_flip(patches, noms, seed);
    if (res.applied) {
        for (int pi = 0; pi < rows; ++pi)
            for (int pj = 0; pj < cols; ++pj) {
                int idx = pi * cols + pj;
                if (!res.flip_mask[idx]) continue;
                for (int i = 0; i < d; ++i)
                    for (int j = 0; j < d; ++j)
                        field.set(pi * d + i, pj * d + j, patches[idx].at(i, j));
            }
    }
    return res;
}

}  // namespace

VCycleResult run_v_cycle(const geom::ShadingImage& image, const MultiscaleSchedule& schedule,
                         const guide::DenoiserHandle& den, const diff::NoiseSchedule& sched,
                         const VCycleConfig& cfg, uint64_t seed) {
    validate_schedule(schedule, sched.T);
    VCycleResult out;
    size_t n_stages = cfg.single_scale ? 1 : schedule.stages.size();

    for (size_t si = 0; si < n_stages; ++si) {
        const Stage& st = schedule.stages[si];
        uint64_t stage_seed = mix_seed(seed, static_cast<uint64_t>(si), 0x57a6e);
        geom::ShadingImage cond = st.res == image.height && st.res == image.width
                                      ? image
                                      : geom::resize_image(image, st.res, st.res);
        StageResult sr;
        sr.resolution = st.res;
        std::vector<guide::TraceRow>* trace = cfg.collect_traces ? &sr.trace : nullptr;

        guide::GuidanceConfig gcfg = cfg.guidance;
        gcfg.eta = st.eta;

        if (si == 0) {
            sr.field = guide::sample_single_scale(cond, stage_seed, den, sched, gcfg, trace);
        } else {
            geom::NormalField incoming =
                geom::resample_field(out.stages.back().field, st.res, st.res);
            if (st.lighting && cfg.lighting_enabled) {
                light::FlipResult fr = lighting_pass(incoming, cond,
                                                     mix_seed(stage_seed, 0xf11b),
                                                     &sr.flip_rows, &sr.flip_cols);
                sr.flip_mask = fr.flip_mask;
                // flips break seams; the mandatory resume repairs them
            }
            sr.field = noise_and_resume(incoming, cond, st.restart_t, st.eta, den, sched,
                                        cfg.guidance, mix_seed(stage_seed, 0x0a), trace);
        }
        out.stages.push_back(std::move(sr));
    }

    int fuse_n = std::min<int>(schedule.fusion_count, static_cast<int>(out.stages.size()));
    std::vector<const geom::NormalField*> tail;
    for (size_t i = out.stages.size() - fuse_n; i < out.stages.size(); ++i)
        tail.push_back(&out.stages[i].field);
    out.fused = fuse_final_stages(tail);
    return out;
}

geom::NormalField fuse_final_stages(const std::vector<const geom::NormalField*>& fields) {
    SFS_CHECK(!fields.empty(), "fuse_final_stages: need at least one field");
    int best_h = 0, best_w = 0;
    for (const auto* f : fields) {
        best_h = std::max(best_h, f->height);
        best_w = std::max(best_w, f->width);
    }
    size_t px = static_cast<size_t>(best_h) * best_w;
    std::vector<double> acc_p(px, 0.0), acc_q(px, 0.0);
    std::vector<int> cnt(px, 0);
    for (const auto* f : fields) {
        geom::PqConversion conv = geom::normals_to_pq(*f);
        std::vector<uint8_t> bg;
        geom::GradientField g =
            f->height == best_h && f->width == best_w
                ? conv.pq
                : geom::resample_gradient(conv.pq, conv.background, best_h, best_w, &bg);
        if (f->height == best_h && f->width == best_w) bg = conv.background;
        for (int i = 0; i < best_h; ++i)
            for (int j = 0; j < best_w; ++j) {
                size_t idx = static_cast<size_t>(i) * best_w + j;
                if (bg[idx]) continue;
                acc_p[idx] += g.p(i, j);
                acc_q[idx] += g.q(i, j);
                ++cnt[idx];
            }
    }
    geom::GradientField avg(best_h, best_w);
    std::vector<uint8_t> background(px, 0);
    for (size_t idx = 0; idx < px; ++idx) {
        if (cnt[idx] == 0) {
            background[idx] = 1;
            continue;
        }
        avg.data[idx * 2] = acc_p[idx] / cnt[idx];
        avg.data[idx * 2 + 1] = acc_q[idx] / cnt[idx];
    }
    return geom::pq_to_normals(avg, &background);
}

}  // namespace sfs::scale
