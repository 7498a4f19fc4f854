#include "sfs/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>

#include "sfs/kernels.hpp"
#include "sfs/rng.hpp"

namespace fs = std::filesystem;

namespace sfs::train {

double smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
    SFS_CHECK(pred.same_shape(target), "smooth_l1: shape mismatch");
    double acc = 0.0;
    const float* p = pred.data();
    const float* t = target.data();
    for (int64_t i = 0; i < pred.size(); ++i) {
        double e = std::abs(static_cast<double>(p[i]) - t[i]);
        acc += e < beta ? 0.5 * e * e / beta : e - 0.5 * beta;
    }
    return acc / static_cast<double>(pred.size());
}

void smooth_l1_grad(const Tensor& pred, const Tensor& target, double beta, Tensor& dpred) {
    if (!dpred.same_shape(pred)) dpred = Tensor::like(pred);
    const float* p = pred.data();
    const float* t = target.data();
    float* d = dpred.data();
    double inv_n = 1.0 / static_cast<double>(pred.size());
    for (int64_t i = 0; i < pred.size(); ++i) {
        double e = static_cast<double>(p[i]) - t[i];
        double g = std::abs(e) < beta ? e / beta : (e > 0 ? 1.0 : -1.0);
        d[i] = static_cast<float>(g * inv_n);
    }
}

PackedDataset pack_tuples(const std::vector<data::PatchTuple>& tuples) {
    SFS_CHECK(!tuples.empty(), "pack_tuples: empty dataset");
    int d = tuples[0].c.height;
    PackedDataset ds;
    ds.count = static_cast<int>(tuples.size());
    ds.cond = Tensor(ds.count, d, d, 1);
    ds.x0 = Tensor(ds.count, d, d, 3);
    for (int p = 0; p < ds.count; ++p) {
        const auto& t = tuples[p];
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                ds.cond.at(p, i, j, 0) = static_cast<float>(t.c.at(i, j));
                Vec3 v = t.x0.at(i, j);
                ds.x0.at(p, i, j, 0) = static_cast<float>(v.x);
                ds.x0.at(p, i, j, 1) = static_cast<float>(v.y);
                ds.x0.at(p, i, j, 2) = static_cast<float>(v.z);
            }
    }
    return ds;
}

namespace {

void gather_batch(const PackedDataset& ds, const std::vector<int>& idx, int64_t lo, int64_t hi,
                  Tensor& cond, Tensor& x0) {
    int d = ds.cond.h;
    int b = static_cast<int>(hi - lo);
    if (cond.n != b) cond = Tensor(b, d, d, 1);
    if (x0.n != b) x0 = Tensor(b, d, d, 3);
    int64_t cstride = static_cast<int64_t>(d) * d;
    int64_t xstride = cstride * 3;
    for (int i = 0; i < b; ++i) {
        int src = idx[static_cast<size_t>(lo) + i];
        std::copy_n(ds.cond.data() + src * cstride, cstride, cond.data() + i * cstride);
        std::copy_n(ds.x0.data() + src * xstride, xstride, x0.data() + i * xstride);
    }
}

void concat_cond_x(const Tensor& cond, const Tensor& x, Tensor& out) {
    int b = x.n, d = x.h;
    if (out.n != b || out.c != 4) out = Tensor(b, d, d, 4);
    int64_t px = static_cast<int64_t>(b) * d * d;
    for (int64_t i = 0; i < px; ++i) {
        out.data()[i * 4] = cond.data()[i];
        out.data()[i * 4 + 1] = x.data()[i * 3];
        out.data()[i * 4 + 2] = x.data()[i * 3 + 1];
        out.data()[i * 4 + 3] = x.data()[i * 3 + 2];
    }
}

struct Adam {
    model::AdamState st;

    void init(const std::vector<model::Param*>& ps) {
        st.step = 0;
        st.m.resize(ps.size());
        st.v.resize(ps.size());
        for (size_t i = 0; i < ps.size(); ++i) {
            st.m[i].assign(static_cast<size_t>(ps[i]->size()), 0.0f);
            st.v[i].assign(static_cast<size_t>(ps[i]->size()), 0.0f);
        }
    }

    void step(std::vector<model::Param*>& ps, double lr, double wd) {
        ++st.step;
        float bc1 = static_cast<float>(1.0 - std::pow(0.9, static_cast<double>(st.step)));
        float bc2 = static_cast<float>(1.0 - std::pow(0.999, static_cast<double>(st.step)));
        for (size_t i = 0; i < ps.size(); ++i) {
            // norm parameters are conventionally exempt from weight decay
            bool decay_exempt = ps[i]->name.ends_with(".gamma") ||
                                ps[i]->name.ends_with(".beta") ||
                                ps[i]->name.ends_with(".b");
            kern::adamw_f32(ps[i]->w.data(), st.m[i].data(), st.v[i].data(), ps[i]->g.data(),
                            ps[i]->size(), static_cast<float>(lr), 0.9f, 0.999f, 1e-8f,
                            decay_exempt ? 0.0f : static_cast<float>(wd), bc1, bc2);
        }
    }
};

}  // namespace

TrainResult fit(const PackedDataset& ds, const TrainingConfig& cfg,
                  const diff::NoiseSchedule& sched, model::UNet& model,
                  const std::function<void(int, double)>& on_epoch) {
    SFS_CHECK(ds.count > 0, "train: empty dataset");
    SFS_CHECK(cfg.epochs > 0 && cfg.batch_size > 0 && cfg.lr > 0, "train: bad config");

    auto ps = model.params();
    Adam adam;
    int start_epoch = 0;
    if (!cfg.resume_from.empty()) {
        model::CheckpointExtra extra;
        model::load_checkpoint(cfg.resume_from, model, &extra);
        start_epoch = extra.epoch;
        if (extra.has_adam) {
            adam.st = std::move(extra.adam);
        } else {
            adam.init(ps);
        }
    } else {
        model.init_params(cfg.seed);
        adam.init(ps);
    }

    std::unique_ptr<model::UNetState> state(model.new_state());
    std::vector<int> perm(ds.count);
    std::iota(perm.begin(), perm.end(), 0);

    TrainResult result;
    Tensor cond, x0, omega, x_t, x4, eps, deps;
    std::vector<int> tsteps;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // epoch order is a pure function of (seed, epoch) so resumed runs
        // replay the identical stream
        std::iota(perm.begin(), perm.end(), 0);
        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch), 0x5u));
        shuffle_rng.shuffle(perm.begin(), perm.end());
        Rng draw_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch), 0x7u));

        double loss_sum = 0.0;
        int64_t batches = 0;
        for (int64_t lo = 0; lo < ds.count; lo += cfg.batch_size) {
            int64_t hi = std::min<int64_t>(lo + cfg.batch_size, ds.count);
            gather_batch(ds, perm, lo, hi, cond, x0);
            int b = static_cast<int>(hi - lo);

            tsteps.resize(b);
            for (int i = 0; i < b; ++i)
                tsteps[i] = 1 + static_cast<int>(draw_rng.uniform_index(sched.T));
            if (omega.n != b) omega = Tensor(b, x0.h, x0.w, 3);
            for (auto& v : omega.v) v = draw_rng.gaussian_f();

            // per-sample forward noising (t differs within the batch)
            if (!x_t.same_shape(x0)) x_t = Tensor::like(x0);
            int64_t stride = static_cast<int64_t>(x0.h) * x0.w * 3;
            for (int i = 0; i < b; ++i) {
                double ab = sched.alpha_bar(tsteps[i]);
                float c0 = static_cast<float>(std::sqrt(ab));
                float c1 = static_cast<float>(std::sqrt(1.0 - ab));
                const float* xs = x0.data() + i * stride;
                const float* ws = omega.data() + i * stride;
                float* xd = x_t.data() + i * stride;
                for (int64_t k = 0; k < stride; ++k) xd[k] = c0 * xs[k] + c1 * ws[k];
            }

            concat_cond_x(cond, x_t, x4);
            model.forward(*state, x4, tsteps, eps);
            double loss = smooth_l1(eps, omega, cfg.smooth_l1_beta);
            if (!std::isfinite(loss)) throw NumericalError("train: non-finite loss");
            loss_sum += loss;
            ++batches;

            smooth_l1_grad(eps, omega, cfg.smooth_l1_beta, deps);
            model.zero_grads();
            model.backward(*state, deps, nullptr, true);
            adam.step(ps, cfg.lr, cfg.weight_decay);
        }

        double mean_loss = loss_sum / static_cast<double>(batches);
        result.epoch_loss.push_back(mean_loss);
        ++result.epochs_run;
        if (on_epoch) on_epoch(epoch, mean_loss);

        if (!cfg.ckpt_dir.empty()) {
            fs::create_directories(cfg.ckpt_dir);
            model::CheckpointExtra extra;
            extra.T = sched.T;
            extra.epoch = epoch + 1;
            extra.has_adam = true;
            extra.adam = adam.st;
            model::save_checkpoint((fs::path(cfg.ckpt_dir) / "last.ckpt").string(), model, extra);
            if (cfg.snapshot_every > 0 && (epoch + 1) % cfg.snapshot_every == 0) {
                model::save_checkpoint(
                    (fs::path(cfg.ckpt_dir) / ("ckpt_epoch_" + std::to_string(epoch + 1) + ".ckpt"))
                        .string(),
                    model, extra);
            }
        }
    }
    return result;
}

double evaluate_loss(const PackedDataset& ds, const diff::NoiseSchedule& sched,
                     const model::UNet& model, double beta, uint64_t seed) {
    std::unique_ptr<model::UNetState> state(model.new_state());
    Rng rng(mix_seed(seed, 0xe7a1));
    int d = ds.x0.h;
    int64_t stride = static_cast<int64_t>(d) * d * 3;
    int64_t cstride = static_cast<int64_t>(d) * d;
    const int chunk = 256;
    double loss_weighted = 0.0;
    for (int lo = 0; lo < ds.count; lo += chunk) {
        int b = std::min(chunk, ds.count - lo);
        Tensor cond(b, d, d, 1), x0(b, d, d, 3), omega(b, d, d, 3);
        std::copy_n(ds.cond.data() + lo * cstride, b * cstride, cond.data());
        std::copy_n(ds.x0.data() + lo * stride, b * stride, x0.data());
        for (auto& v : omega.v) v = rng.gaussian_f();
        std::vector<int> tsteps(b);
        for (int i = 0; i < b; ++i) tsteps[i] = 1 + static_cast<int>(rng.uniform_index(sched.T));
        Tensor x_t = Tensor::like(x0);
        for (int i = 0; i < b; ++i) {
            double ab = sched.alpha_bar(tsteps[i]);
            float c0 = static_cast<float>(std::sqrt(ab));
            float c1 = static_cast<float>(std::sqrt(1.0 - ab));
            for (int64_t k = 0; k < stride; ++k)
                x_t.data()[i * stride + k] =
                    c0 * x0.data()[i * stride + k] + c1 * omega.data()[i * stride + k];
        }
        Tensor x4, eps;
        concat_cond_x(cond, x_t, x4);
        model.forward(*state, x4, tsteps, eps);
        loss_weighted += smooth_l1(eps, omega, beta) * b;
    }
    return loss_weighted / static_cast<double>(ds.count);
}

}  // namespace sfs::train
