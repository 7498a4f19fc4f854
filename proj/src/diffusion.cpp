#include "sfs/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "sfs/common.hpp"

namespace sfs::diff {

int NoiseSchedule::ddim_index_at_or_below(int t) const {
    SFS_CHECK(!ddim_steps.empty() && t >= ddim_steps.front(),
              "no DDIM timestep at or below the requested t");
    auto it = std::upper_bound(ddim_steps.begin(), ddim_steps.end(), t);
    return static_cast<int>(it - ddim_steps.begin()) - 1;
}

NoiseSchedule make_cosine_schedule(int T, int ddim_count) {
    SFS_CHECK(T >= 2, "make_cosine_schedule: T must be >= 2");
    SFS_CHECK(ddim_count >= 1, "make_cosine_schedule: ddim_count must be >= 1");
    NoiseSchedule s;
    s.T = T;
    const double offset = 0.008;
    auto f = [&](int t) {
        double x = (static_cast<double>(t) / T + offset) / (1.0 + offset) * kPi / 2.0;
        double c = std::cos(x);
        return c * c;
    };
    double f0 = f(0);
    s.beta.resize(T);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        double abar = f(t) / f0;
        double b = 1.0 - abar / prev;
        s.beta[t - 1] = std::min(b, 0.999);
        prev = abar;
    }
    s.alpha_cum.resize(T + 1);
    s.alpha_cum[0] = 1.0;
    for (int t = 1; t <= T; ++t) s.alpha_cum[t] = s.alpha_cum[t - 1] * (1.0 - s.beta[t - 1]);
    s.sigma.assign(T, 0.0);

    int count = std::min(ddim_count, T);
    int stride = std::max(1, T / count);
    for (int t = 0; t < T && static_cast<int>(s.ddim_steps.size()) < count; t += stride)
        s.ddim_steps.push_back(t);
    return s;
}

Tensor forward_noising(const Tensor& x0, int t, const Tensor& omega, const NoiseSchedule& s) {
    SFS_CHECK(t >= 0 && t <= s.T, "forward_noising: t out of range");
    SFS_CHECK(omega.same_shape(x0), "forward_noising: omega must match x0's shape");
    double ab = s.alpha_bar(t);
    float c0 = static_cast<float>(std::sqrt(ab));
    float c1 = static_cast<float>(std::sqrt(1.0 - ab));
    Tensor out = Tensor::like(x0);
    const float* a = x0.data();
    const float* w = omega.data();
    float* o = out.data();
    for (int64_t i = 0; i < x0.size(); ++i) o[i] = c0 * a[i] + c1 * w[i];
    return out;
}

Tensor predict_x0_from_eps(const Tensor& x_t, int t, const Tensor& eps, const NoiseSchedule& s) {
    SFS_CHECK(t >= 0 && t <= s.T, "predict_x0: t out of range");
    double ab = s.alpha_bar(t);
    float cn = static_cast<float>(std::sqrt(1.0 - ab));
    float inv = static_cast<float>(1.0 / std::sqrt(ab));
    Tensor out = Tensor::like(x_t);
    const float* x = x_t.data();
    const float* e = eps.data();
    float* o = out.data();
    for (int64_t i = 0; i < x_t.size(); ++i) o[i] = (x[i] - cn * e[i]) * inv;
    return out;
}

Tensor predict_x0(const Tensor& x_t, int t, const Tensor& cond, const Denoiser& model,
                  const NoiseSchedule& s) {
    Tensor eps;
    model(x_t, cond, t, eps);
    return predict_x0_from_eps(x_t, t, eps, s);
}

Tensor ddim_step_from_eps(const Tensor& x_t, int t, int t_prev, const Tensor& eps,
                          const NoiseSchedule& s) {
    SFS_CHECK(t_prev < t, "ddim_step: t_prev must be < t");
    SFS_CHECK(t_prev >= 0 && t <= s.T, "ddim_step: timestep out of range");
    Tensor x0 = predict_x0_from_eps(x_t, t, eps, s);
    double abp = s.alpha_bar(t_prev);
    float c0 = static_cast<float>(std::sqrt(abp));
    float c1 = static_cast<float>(std::sqrt(1.0 - abp));
    Tensor out = Tensor::like(x_t);
    const float* xv = x0.data();
    const float* e = eps.data();
    float* o = out.data();
    for (int64_t i = 0; i < x_t.size(); ++i) o[i] = c0 * xv[i] + c1 * e[i];
    return out;
}

Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& cond, const Denoiser& model,
                 const NoiseSchedule& s) {
    Tensor eps;
    model(x_t, cond, t, eps);
    return ddim_step_from_eps(x_t, t, t_prev, eps, s);
}

}  // namespace sfs::diff
