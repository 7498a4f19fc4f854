#include "sfs/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sfs/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sfs::data {

SceneKind scene_kind_from_string(const std::string& s) {
    if (s == "gaussian-bumps") return SceneKind::GaussianBumps;
    if (s == "random-spline") return SceneKind::RandomSpline;
    if (s == "ring") return SceneKind::Ring;
    if (s == "star") return SceneKind::Star;
    if (s == "snake") return SceneKind::Snake;
    if (s == "crater") return SceneKind::Crater;
    throw ConfigError("unknown scene kind: " + s);
}

std::string to_string(SceneKind k) {
    switch (k) {
        case SceneKind::GaussianBumps: return "gaussian-bumps";
        case SceneKind::RandomSpline: return "random-spline";
        case SceneKind::Ring: return "ring";
        case SceneKind::Star: return "star";
        case SceneKind::Snake: return "snake";
        case SceneKind::Crater: return "crater";
    }
    throw ConfigError("unknown scene kind enum");
}

namespace {

void add_gaussian(geom::HeightField& h, double cy, double cx, double amp, double sigma) {
    double s2 = 2.0 * sigma * sigma;
    for (int i = 0; i < h.height; ++i)
        for (int j = 0; j < h.width; ++j) {
            double dy = i - cy, dx = j - cx;
            h.at(i, j) += amp * std::exp(-(dx * dx + dy * dy) / s2);
        }
}

geom::HeightField gen_gaussian_bumps(const SceneSpec& spec, Rng& rng) {
    geom::HeightField h(spec.resolution, spec.resolution);
    if (spec.count <= 0 || spec.amplitude == 0.0) return h;
    // Bumps live on a jittered grid so `count` bumps give `count` separated
    // extrema.
    int grid = 1;
    while (grid * grid < spec.count) ++grid;
    std::vector<int> cells(static_cast<size_t>(grid) * grid);
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    rng.shuffle(cells.begin(), cells.end());
    double cell = static_cast<double>(spec.resolution) / grid;
    for (int b = 0; b < spec.count; ++b) {
        int gy = cells[b] / grid, gx = cells[b] % grid;
        double cy = (gy + 0.3 + 0.4 * rng.uniform()) * cell;
        double cx = (gx + 0.3 + 0.4 * rng.uniform()) * cell;
        double amp = spec.amplitude * (0.7 + 0.3 * rng.uniform());
        double sigma = spec.width * (0.8 + 0.4 * rng.uniform());
        add_gaussian(h, cy, cx, amp, sigma);
    }
    return h;
}

// Uniform cubic B-spline basis.
inline void bspline_w(double t, double w[4]) {
    double t2 = t * t, t3 = t2 * t;
    w[0] = (1 - 3 * t + 3 * t2 - t3) / 6.0;
    w[1] = (4 - 6 * t2 + 3 * t3) / 6.0;
    w[2] = (1 + 3 * t + 3 * t2 - 3 * t3) / 6.0;
    w[3] = t3 / 6.0;
}

geom::HeightField gen_random_spline(const SceneSpec& spec, Rng& rng) {
    int knots = std::max(2, spec.count);
    int n = knots + 3;  // control grid
    std::vector<double> ctrl(static_cast<size_t>(n) * n);
    for (auto& v : ctrl) v = spec.amplitude * (2.0 * rng.uniform() - 1.0);
    geom::HeightField h(spec.resolution, spec.resolution);
    for (int i = 0; i < spec.resolution; ++i) {
        double fy = static_cast<double>(i) / spec.resolution * knots;
        int ky = std::min(static_cast<int>(fy), knots - 1);
        double ty = fy - ky;
        double wy[4];
        bspline_w(ty, wy);
        for (int j = 0; j < spec.resolution; ++j) {
            double fx = static_cast<double>(j) / spec.resolution * knots;
            int kx = std::min(static_cast<int>(fx), knots - 1);
            double tx = fx - kx;
            double wx[4];
            bspline_w(tx, wx);
            double acc = 0.0;
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b)
                    acc += wy[a] * wx[b] * ctrl[static_cast<size_t>(ky + a) * n + kx + b];
            h.at(i, j) = acc;
        }
    }
    return h;
}

geom::HeightField gen_ring(const SceneSpec& spec, Rng& rng) {
    geom::HeightField h(spec.resolution, spec.resolution);
    double c = spec.resolution / 2.0;
    double r0 = spec.resolution * (0.22 + 0.12 * rng.uniform());
    double s2 = 2.0 * spec.width * spec.width;
    for (int i = 0; i < h.height; ++i)
        for (int j = 0; j < h.width; ++j) {
            double r = std::hypot(i - c, j - c);
            h.at(i, j) = spec.amplitude * std::exp(-(r - r0) * (r - r0) / s2);
        }
    return h;
}

geom::HeightField gen_star(const SceneSpec& spec, Rng& rng) {
    geom::HeightField h(spec.resolution, spec.resolution);
    double c = spec.resolution / 2.0;
    int points = std::max(3, spec.count);
    double base = spec.resolution * 0.26;
    double mod = spec.resolution * 0.08;
    double phase = 2.0 * kPi * rng.uniform();
    double s2 = 2.0 * spec.width * spec.width;
    for (int i = 0; i < h.height; ++i)
        for (int j = 0; j < h.width; ++j) {
            double dy = i - c, dx = j - c;
            double r = std::hypot(dy, dx);
            double th = std::atan2(dy, dx);
            double r0 = base + mod * std::cos(points * th + phase);
            h.at(i, j) = spec.amplitude * std::exp(-(r - r0) * (r - r0) / s2);
        }
    return h;
}

geom::HeightField gen_snake(const SceneSpec& spec, Rng& rng) {
    geom::HeightField h(spec.resolution, spec.resolution);
    double res = spec.resolution;
    double waves = 0.5 + 0.5 * std::max(1, spec.count);
    double phase = 2.0 * kPi * rng.uniform();
    double s2 = 2.0 * spec.width * spec.width;
    for (int i = 0; i < h.height; ++i)
        for (int j = 0; j < h.width; ++j) {
            double x = j / res;
            double yc = res * (0.5 + 0.22 * std::sin(2.0 * kPi * waves * x + phase));
            double d = i - yc;
            // taper the ridge ends so it stays inside the frame
            double edge = std::clamp(std::min(x, 1.0 - x) * 8.0, 0.0, 1.0);
            h.at(i, j) = spec.amplitude * edge * std::exp(-d * d / s2);
        }
    return h;
}

geom::HeightField gen_crater(const SceneSpec& spec, Rng& rng) {
    geom::HeightField h(spec.resolution, spec.resolution);
    double c = spec.resolution / 2.0;
    double w = spec.width * (1.5 + rng.uniform());
    for (int i = 0; i < h.height; ++i)
        for (int j = 0; j < h.width; ++j) {
            double r2 = ((i - c) * (i - c) + (j - c) * (j - c)) / (w * w);
            // inverted Ricker: central dent with a raised rim
            h.at(i, j) = -spec.amplitude * (1.0 - r2) * std::exp(-r2 / 2.0);
        }
    return h;
}

}  // namespace

geom::HeightField generate_surface(const SceneSpec& spec) {
    SFS_CHECK(spec.resolution > 0, "generate_surface: resolution must be positive");
    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(spec.kind) + 1));
    switch (spec.kind) {
        case SceneKind::GaussianBumps: return gen_gaussian_bumps(spec, rng);
        case SceneKind::RandomSpline: return gen_random_spline(spec, rng);
        case SceneKind::Ring: return gen_ring(spec, rng);
        case SceneKind::Star: return gen_star(spec, rng);
        case SceneKind::Snake: return gen_snake(spec, rng);
        case SceneKind::Crater: return gen_crater(spec, rng);
    }
    throw ConfigError("generate_surface: unknown kind");
}

geom::LightDirection sample_light(const LightingPolicy& policy, Rng& rng) {
    SFS_CHECK(policy.cone_half_angle_deg >= 0.0 && policy.cone_half_angle_deg < 90.0,
              "lighting policy: cone half-angle must be in [0, 90)");
    SFS_CHECK(policy.above_fraction >= 0.0 && policy.above_fraction <= 1.0,
              "lighting policy: above-fraction must be in [0,1]");
    SFS_CHECK(policy.albedo_min > 0.0 && policy.albedo_max <= 1.0 &&
                  policy.albedo_min <= policy.albedo_max,
              "lighting policy: albedo range must be within (0,1]");
    double cos_min = std::cos(rad_from_deg(policy.cone_half_angle_deg));
    double cos_t = cos_min + (1.0 - cos_min) * rng.uniform();  // uniform in solid angle
    double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
    bool above = rng.uniform() < policy.above_fraction;
    // rows grow downward, so "lit from above" means l_y < 0
    double phi = above ? kPi + kPi * rng.uniform() : kPi * rng.uniform();
    geom::LightDirection light;
    light.l = Vec3{sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t}.normalized();
    light.albedo = rng.uniform(policy.albedo_min, policy.albedo_max);
    return light;
}

RenderedScene render_scene(const geom::HeightField& h, const LightingPolicy& policy,
                           uint64_t seed) {
    RenderedScene out;
    Rng rng(mix_seed(seed, 0x11647));
    out.normals = geom::normals_from_height_central(h);
    out.light = sample_light(policy, rng);
    out.image = geom::render_lambertian(out.normals, out.light);
    return out;
}

std::vector<PatchTuple> extract_patches(const geom::ShadingImage& img,
                                        const geom::NormalField& normals, int d) {
    SFS_CHECK(img.height == normals.height && img.width == normals.width,
              "extract_patches: image and normals must match");
    SFS_CHECK(img.height % d == 0 && img.width % d == 0,
              "extract_patches: dimensions must be divisible by the patch size");
    int rows = img.height / d, cols = img.width / d;
    std::vector<PatchTuple> out;
    out.reserve(static_cast<size_t>(rows) * cols);
    for (int pi = 0; pi < rows; ++pi) {
        for (int pj = 0; pj < cols; ++pj) {
            PatchTuple t;
            t.c = geom::ShadingImage(d, d);
            t.x0 = geom::NormalField(d, d);
            t.interior = true;
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    t.c.at(i, j) = img.at(pi * d + i, pj * d + j);
                    t.x0.set(i, j, normals.at(pi * d + i, pj * d + j));
                    if (t.x0.is_background(i, j)) t.interior = false;
                }
            out.push_back(std::move(t));
        }
    }
    return out;
}

std::vector<PatchTuple> augment_flips(const std::vector<PatchTuple>& tuples) {
    std::vector<PatchTuple> out;
    out.reserve(tuples.size() * 2);
    for (const auto& t : tuples) {
        out.push_back(t);
        if (t.interior) {
            PatchTuple f;
            f.c = t.c;  // same conditioning image
            f.x0 = geom::flip_convex_concave(t.x0);
            f.interior = true;
            out.push_back(std::move(f));
        }
    }
    return out;
}

// ---- on-disk dataset ----

namespace {

json policy_to_json(const LightingPolicy& p) {
    return json{{"cone_half_angle_deg", p.cone_half_angle_deg},
                {"above_fraction", p.above_fraction},
                {"albedo_min", p.albedo_min},
                {"albedo_max", p.albedo_max}};
}

LightingPolicy policy_from_json(const json& j) {
    LightingPolicy p;
    p.cone_half_angle_deg = j.at("cone_half_angle_deg").get<double>();
    p.above_fraction = j.at("above_fraction").get<double>();
    p.albedo_min = j.at("albedo_min").get<double>();
    p.albedo_max = j.at("albedo_max").get<double>();
    return p;
}

std::string scene_dir_name(int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04d", idx);
    return buf;
}

}  // namespace

void render_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    SFS_CHECK(cfg.n_scenes > 0, "render_dataset: n_scenes must be positive");
    SFS_CHECK(cfg.resolution % kPatchSize == 0,
              "render_dataset: resolution must be divisible by 16");
    SFS_CHECK(!cfg.kinds.empty(), "render_dataset: at least one scene kind required");
    fs::create_directories(out_dir);

    for (int s = 0; s < cfg.n_scenes; ++s) {
        SceneSpec spec;
        spec.kind = cfg.kinds[s % cfg.kinds.size()];
        spec.resolution = cfg.resolution;
        spec.count = cfg.count;
        // alternate surface polarity across scenes
        spec.amplitude = (s / cfg.kinds.size()) % 2 == 0 ? cfg.amplitude : -cfg.amplitude;
        spec.width = cfg.width;
        spec.seed = mix_seed(cfg.master_seed, static_cast<uint64_t>(s), 0xda7a);
        geom::HeightField h = generate_surface(spec);
        RenderedScene scene = render_scene(h, cfg.policy, mix_seed(spec.seed, 0x11937));

        fs::path dir = fs::path(out_dir) / scene_dir_name(s);
        fs::create_directories(dir);
        io::write_gray_png((dir / "image.png").string(), scene.image);
        io::write_normal_png((dir / "normals.png").string(), scene.normals);
        json meta{{"light", {scene.light.l.x, scene.light.l.y, scene.light.l.z}},
                  {"albedo", scene.light.albedo},
                  {"seed", spec.seed},
                  {"kind", to_string(spec.kind)}};
        std::ofstream mf(dir / "meta.json");
        mf << meta.dump(2) << "\n";
    }

    json manifest;
    manifest["n_scenes"] = cfg.n_scenes;
    manifest["resolution"] = cfg.resolution;
    std::vector<std::string> kind_names;
    for (auto k : cfg.kinds) kind_names.push_back(to_string(k));
    manifest["kinds"] = kind_names;
    manifest["count"] = cfg.count;
    manifest["amplitude"] = cfg.amplitude;
    manifest["width"] = cfg.width;
    manifest["policy"] = policy_to_json(cfg.policy);
    manifest["augment"] = cfg.augment;
    manifest["master_seed"] = cfg.master_seed;
    std::ofstream mf(fs::path(out_dir) / "dataset.json");
    mf << manifest.dump(2) << "\n";
}

DatasetConfig read_dataset_manifest(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "dataset.json");
    if (!f) throw ConfigError("no dataset.json in " + dir);
    json j = json::parse(f);
    DatasetConfig cfg;
    cfg.n_scenes = j.at("n_scenes").get<int>();
    cfg.resolution = j.at("resolution").get<int>();
    cfg.kinds.clear();
    for (const auto& k : j.at("kinds")) cfg.kinds.push_back(scene_kind_from_string(k));
    cfg.count = j.at("count").get<int>();
    cfg.amplitude = j.at("amplitude").get<double>();
    cfg.width = j.at("width").get<double>();
    cfg.policy = policy_from_json(j.at("policy"));
    cfg.augment = j.at("augment").get<bool>();
    cfg.master_seed = j.at("master_seed").get<uint64_t>();
    return cfg;
}

std::vector<PatchTuple> load_patch_dataset(const std::string& dir, int augment_override) {
    DatasetConfig cfg = read_dataset_manifest(dir);
    bool augment = augment_override < 0 ? cfg.augment : augment_override != 0;
    std::vector<PatchTuple> all;
    for (int s = 0; s < cfg.n_scenes; ++s) {
        fs::path sd = fs::path(dir) / scene_dir_name(s);
        geom::ShadingImage img = io::read_gray_png((sd / "image.png").string());
        geom::NormalField nrm = io::read_normal_png((sd / "normals.png").string());
        auto tuples = extract_patches(img, nrm);
        if (augment) tuples = augment_flips(tuples);
        for (auto& t : tuples) all.push_back(std::move(t));
    }
    SFS_CHECK(!all.empty(), "load_patch_dataset: dataset is empty");
    return all;
}

}  // namespace sfs::data
