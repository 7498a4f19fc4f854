#pragma once

#include <functional>
#include <vector>

#include "sfs/tensor.hpp"

namespace sfs::diff {

// Cosine noise schedule with a deterministic DDIM sub-sequence.
// beta[t-1] is the step-t variance (t = 1..T); alpha_cum[t] is the cumulative
// product of (1 - beta) with alpha_cum[0] = 1.
struct NoiseSchedule {
    int T = 300;
    std::vector<double> beta;       // size T
    std::vector<double> alpha_cum;  // size T+1
    std::vector<double> sigma;      // size T, all zero (deterministic DDIM)
    std::vector<int> ddim_steps;    // strictly increasing, within [0, T)

    double alpha_bar(int t) const { return alpha_cum[static_cast<size_t>(t)]; }

    // Largest DDIM sub-sequence index whose timestep is <= t.
    int ddim_index_at_or_below(int t) const;
};

NoiseSchedule make_cosine_schedule(int T = 300, int ddim_count = 50);

// Batched conditional noise predictor: eps = eps_theta(x_t, t; c).
// x_t: [B,d,d,3], cond: [B,d,d,1], eps out: [B,d,d,3].
using Denoiser = std::function<void(const Tensor& x_t, const Tensor& cond, int t, Tensor& eps)>;

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) omega. t in [0, T].
Tensor forward_noising(const Tensor& x0, int t, const Tensor& omega, const NoiseSchedule& s);

// x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
Tensor predict_x0_from_eps(const Tensor& x_t, int t, const Tensor& eps, const NoiseSchedule& s);
Tensor predict_x0(const Tensor& x_t, int t, const Tensor& cond, const Denoiser& model,
                  const NoiseSchedule& s);

// x_{t_prev} = sqrt(abar_{t_prev}) x0_hat + sqrt(1 - abar_{t_prev}) eps
Tensor ddim_step_from_eps(const Tensor& x_t, int t, int t_prev, const Tensor& eps,
                          const NoiseSchedule& s);
Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& cond, const Denoiser& model,
                 const NoiseSchedule& s);

}  // namespace sfs::diff
