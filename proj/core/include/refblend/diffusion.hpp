#pragma once

#include <vector>

#include "refblend/tensor.hpp"

namespace refblend {

// Linear-beta noise schedule. Indexing convention: t in {0..T} with
// alpha_bar[0] = 1; the sampler visits T..1. beta[0] is unused padding.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;      // size T+1, beta[t] defined for t >= 1
    std::vector<double> alpha;     // 1 - beta
    std::vector<double> alpha_bar; // cumulative product, alpha_bar[0] = 1
};

NoiseSchedule build_schedule(int T, double beta_min, double beta_max);

// Closed-form forward noising: z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps.
// t = 0 returns z0 unchanged.
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Deterministic (eta = 0) DDIM update from t down to t_prev:
// zhat0 = (z_t - sqrt(1-abar_t) eps) / sqrt(abar_t),
// z_prev = sqrt(abar_prev) zhat0 + sqrt(1-abar_prev) eps.
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                 const NoiseSchedule& sched);

// Classifier-free guidance: eps_u + scale * (eps_c - eps_u).
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double scale);

// Descending timestep ladder for sampling `steps` of a schedule with sched.T
// steps: evenly spaced, last entry pairs with t_prev = 0.
std::vector<int> sample_timesteps(const NoiseSchedule& sched, int steps);

} // namespace refblend
