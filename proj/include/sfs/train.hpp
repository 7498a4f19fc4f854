#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sfs/dataset.hpp"
#include "sfs/diffusion.hpp"
#include "sfs/model.hpp"

namespace sfs::train {

struct TrainingConfig {
    int epochs = 500;
    double lr = 2e-4;
    int batch_size = 256;
    double weight_decay = 1e-2;
    double smooth_l1_beta = 1.0;
    uint64_t seed = 0;
    std::string ckpt_dir;      // empty: no checkpoints written
    int snapshot_every = 0;    // additionally keep ckpt_epoch_N every N epochs
    std::string resume_from;   // optional checkpoint to continue from
};

double smooth_l1(const Tensor& pred, const Tensor& target, double beta);
// dpred = dL/dpred for L = mean smooth-L1
void smooth_l1_grad(const Tensor& pred, const Tensor& target, double beta, Tensor& dpred);

// Tuples packed as flat tensors for batching.
struct PackedDataset {
    Tensor cond;  // [P, d, d, 1]
    Tensor x0;    // [P, d, d, 3]
    int count = 0;
};
PackedDataset pack_tuples(const std::vector<data::PatchTuple>& tuples);

struct TrainResult {
    std::vector<double> epoch_loss;  // mean loss per completed epoch (whole run)
    int epochs_run = 0;
};

// Minimizes smooth-L1(omega, eps_theta(x_t, t; c)) over uniformly sampled t
// with AdamW. Deterministic in (dataset, config); resumable bit-exactly.
TrainResult fit(const PackedDataset& ds, const TrainingConfig& cfg,
                  const diff::NoiseSchedule& sched, model::UNet& model,
                  const std::function<void(int epoch, double loss)>& on_epoch = {});

// Mean training loss of the model over the dataset with a fixed evaluation
// noise stream; used for held-out checks.
double evaluate_loss(const PackedDataset& ds, const diff::NoiseSchedule& sched,
                     const model::UNet& model, double beta, uint64_t seed);

}  // namespace sfs::train
