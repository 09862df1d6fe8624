#include "refblend/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "refblend/numerics.hpp"

namespace refblend {

NoiseSchedule build_schedule(int T, double beta_min, double beta_max) {
    if (T < 1) throw UsageError("schedule_bounds", "T must be >= 1");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw UsageError("schedule_bounds", "need 0 < beta_min <= beta_max < 1");

    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        s.beta[static_cast<size_t>(t)] = beta_min + (beta_max - beta_min) * frac;
        s.alpha[static_cast<size_t>(t)] = 1.0 - s.beta[static_cast<size_t>(t)];
        s.alpha_bar[static_cast<size_t>(t)] =
            s.alpha_bar[static_cast<size_t>(t) - 1] * s.alpha[static_cast<size_t>(t)];
    }
    return s;
}

static void require_step(int t, const NoiseSchedule& sched, const char* op) {
    if (t < 0 || t > sched.T)
        throw UsageError("step_range", std::string(op) + ": t=" + std::to_string(t) +
                                           " outside schedule 0.." + std::to_string(sched.T));
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    require_step(t, sched, "forward_diffuse");
    if (!z0.same_shape(eps))
        throw UsageError("shape_mismatch", "forward_diffuse: z0 and eps shapes differ");
    if (t == 0) return z0;

    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    double sa = std::sqrt(ab);
    double sb = std::sqrt(1.0 - ab);
    Tensor out(z0.shape);
    for (int64_t i = 0; i < z0.numel(); ++i)
        out.data[static_cast<size_t>(i)] =
            sa * z0.data[static_cast<size_t>(i)] + sb * eps.data[static_cast<size_t>(i)];
    return out;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                 const NoiseSchedule& sched) {
    require_step(t, sched, "ddim_step");
    require_step(t_prev, sched, "ddim_step");
    if (t_prev > t) throw UsageError("step_range", "ddim_step: t_prev must be <= t");
    if (!z_t.same_shape(eps_pred))
        throw UsageError("shape_mismatch", "ddim_step: z_t and eps_pred shapes differ");
    if (t_prev == t) return z_t;

    double ab_t = sched.alpha_bar[static_cast<size_t>(t)];
    double ab_p = sched.alpha_bar[static_cast<size_t>(t_prev)];
    double inv_sa = 1.0 / std::sqrt(ab_t);
    double sb_t = std::sqrt(1.0 - ab_t);
    double sa_p = std::sqrt(ab_p);
    double sb_p = std::sqrt(1.0 - ab_p);
    Tensor out(z_t.shape);
    for (int64_t i = 0; i < z_t.numel(); ++i) {
        double zhat0 = (z_t.data[static_cast<size_t>(i)] - sb_t * eps_pred.data[static_cast<size_t>(i)]) * inv_sa;
        out.data[static_cast<size_t>(i)] = sa_p * zhat0 + sb_p * eps_pred.data[static_cast<size_t>(i)];
    }
    check_finite(out, "ddim_step");
    return out;
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double scale) {
    if (!eps_uncond.same_shape(eps_cond))
        throw UsageError("shape_mismatch", "cfg_combine: shapes differ");
    Tensor out(eps_uncond.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double u = eps_uncond.data[static_cast<size_t>(i)];
        double c = eps_cond.data[static_cast<size_t>(i)];
        out.data[static_cast<size_t>(i)] = u + scale * (c - u);
    }
    return out;
}

std::vector<int> sample_timesteps(const NoiseSchedule& sched, int steps) {
    if (steps < 1 || steps > sched.T)
        throw UsageError("step_range", "sampler steps must be in 1..T");
    std::vector<int> ts(static_cast<size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        // Evenly spaced, ending exactly at sched.T; steps == T gives T..1.
        int t = static_cast<int>(std::llround(static_cast<double>(k + 1) * sched.T / steps));
        ts[static_cast<size_t>(k)] = std::max(1, t);
    }
    std::reverse(ts.begin(), ts.end());
    for (size_t i = 1; i < ts.size(); ++i) {
        if (ts[i] >= ts[i - 1])
            throw UsageError("step_range", "timestep ladder not strictly decreasing");
    }
    return ts;
}

} // namespace refblend
