#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sfs/dataset.hpp"
#include "sfs/train.hpp"

using namespace sfs;
using namespace sfs::train;
namespace fs = std::filesystem;

namespace {

model::UNetConfig tiny_config() {
    model::UNetConfig cfg;
    cfg.base_width = 8;
    cfg.mults = {1, 1, 2, 2};
    cfg.temb_dim = 16;
    cfg.groups = 4;
    cfg.attn_heads = 2;
    return cfg;
}

PackedDataset tiny_dataset(int scenes, uint64_t seed) {
    std::vector<data::PatchTuple> tuples;
    for (int s = 0; s < scenes; ++s) {
        data::SceneSpec spec;
        spec.kind = data::SceneKind::GaussianBumps;
        spec.resolution = 32;
        spec.count = 1;
        spec.amplitude = 6.0;
        spec.width = 6.0;
        spec.seed = mix_seed(seed, s);
        geom::HeightField h = data::generate_surface(spec);
        data::RenderedScene scene = data::render_scene(h, {}, mix_seed(seed, s, 1));
        auto t = data::extract_patches(scene.image, scene.normals);
        for (auto& x : t) tuples.push_back(std::move(x));
    }
    return pack_tuples(tuples);
}

}  // namespace

TEST_CASE("smooth_l1 values and gradient") {
    Tensor pred(1, 1, 1, 3), target(1, 1, 1, 3);
    pred.v = {0.0f, 0.5f, 2.0f};
    target.v = {0.0f, 0.0f, 0.0f};
    // per-element: 0, 0.5*0.25, 2-0.5 -> mean
    CHECK(smooth_l1(pred, target, 1.0) == doctest::Approx((0.0 + 0.125 + 1.5) / 3.0));
    Tensor g;
    smooth_l1_grad(pred, target, 1.0, g);
    CHECK(g.v[0] == doctest::Approx(0.0));
    CHECK(g.v[1] == doctest::Approx(0.5 / 3.0));
    CHECK(g.v[2] == doctest::Approx(1.0 / 3.0));

    // transition point scales the quadratic region
    pred.v = {0.5f, 0.0f, 0.0f};
    CHECK(smooth_l1(pred, target, 2.0) == doctest::Approx((0.5 * 0.25 / 2.0) / 3.0));
}

TEST_CASE("untrained loss matches the numeric expectation for N(0,1) vs zero") {
    // E[smooth-l1(z, 0)] for z ~ N(0,1), beta = 1, by Simpson quadrature
    auto f = [](double z) {
        double a = std::abs(z);
        double v = a < 1.0 ? 0.5 * z * z : a - 0.5;
        return v * std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
    };
    int n = 4000;
    double lo = -8.0, hi = 8.0, hstep = (hi - lo) / n, expect = 0.0;
    for (int i = 0; i <= n; ++i) {
        double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        expect += w * f(lo + i * hstep);
    }
    expect *= hstep / 3.0;

    // the zero-initialized model predicts zero noise, so its loss against
    // unit-gaussian targets estimates that expectation
    PackedDataset ds = tiny_dataset(4, 5);
    model::UNet m(tiny_config());
    m.init_params(1);
    diff::NoiseSchedule sched = diff::make_cosine_schedule(300, 50);
    double loss = evaluate_loss(ds, sched, m, 1.0, 7);
    CHECK(std::abs(loss - expect) < 0.02);
}

TEST_CASE("two epochs of training reduce the held-out loss") {
    PackedDataset ds = tiny_dataset(2, 9);
    model::UNet m(tiny_config());
    diff::NoiseSchedule sched = diff::make_cosine_schedule(300, 50);
    TrainingConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.lr = 2e-4;
    cfg.seed = 3;

    model::UNet before(tiny_config());
    before.init_params(cfg.seed);
    double initial = evaluate_loss(ds, sched, before, cfg.smooth_l1_beta, 11);

    TrainResult res = fit(ds, cfg, sched, m);
    REQUIRE(res.epochs_run == 2);
    for (double l : res.epoch_loss) CHECK(std::isfinite(l));
    double after = evaluate_loss(ds, sched, m, cfg.smooth_l1_beta, 11);
    CHECK(after < initial);
}

TEST_CASE("training is deterministic and resumable bit-exactly") {
    PackedDataset ds = tiny_dataset(1, 21);
    diff::NoiseSchedule sched = diff::make_cosine_schedule(300, 50);
    fs::path dir = fs::temp_directory_path() / "sfs_train_test";
    fs::remove_all(dir);

    TrainingConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;
    cfg.seed = 8;

    model::UNet a(tiny_config());
    TrainResult ra = fit(ds, cfg, sched, a);
    model::UNet b(tiny_config());
    TrainResult rb = fit(ds, cfg, sched, b);
    CHECK(ra.epoch_loss == rb.epoch_loss);  // bitwise-equal loss curve
    auto pa = a.params(), pb = b.params();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->w.v == pb[i]->w.v);

    // run 2 epochs with checkpoints, resume for 2 more, compare to the
    // uninterrupted run
    TrainingConfig half = cfg;
    half.epochs = 2;
    half.ckpt_dir = dir.string();
    model::UNet c(tiny_config());
    fit(ds, half, sched, c);
    TrainingConfig rest = cfg;
    rest.resume_from = (dir / "last.ckpt").string();
    model::UNet d(tiny_config());
    TrainResult rd = fit(ds, rest, sched, d);
    CHECK(rd.epochs_run == 2);
    auto pd = d.params();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->w.v == pd[i]->w.v);
}

TEST_CASE("training rejects an empty dataset") {
    PackedDataset empty;
    model::UNet m(tiny_config());
    diff::NoiseSchedule sched = diff::make_cosine_schedule(300, 50);
    CHECK_THROWS_AS(fit(empty, {}, sched, m), ConfigError);
}
