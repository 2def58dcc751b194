#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "satfuse/common.hpp"
#include "satfuse/tensor.hpp"

namespace satfuse {

// Discrete variance-preserving schedule. Arrays are stored for t = 1..T at
// index t-1; alpha_bar_at(0) == 1 by convention so the final DDIM step
// returns the clean estimate exactly.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    double alpha_bar_at(int t) const {
        if (t == 0) return 1.0;
        check_t(t);
        return alpha_bar[static_cast<std::size_t>(t) - 1];
    }
    double beta_at(int t) const {
        check_t(t);
        return beta[static_cast<std::size_t>(t) - 1];
    }
    void check_t(int t) const {
        if (t < 1 || t > T)
            throw ConfigError("timestep " + std::to_string(t) + " outside [1, " +
                              std::to_string(T) + "]");
    }
};

// Linear beta schedule from beta_start to beta_end over T steps.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// Descending inference timesteps: round(j*T/steps) for j = steps..1,
// deduplicated. The sampler appends a final target of t = 0.
std::vector<int> inference_timesteps(int T, int steps);

// DDIM sigma for a jump from t_cur down to t_prev (t_prev < t_cur):
//   sigma = sqrt((1-abar_prev)/(1-abar_cur)) * sqrt(1 - abar_cur/abar_prev)
double ddim_sigma_between(int t_prev, int t_cur, const NoiseSchedule& sched);

// Single-step sigma, i.e. the jump t -> t-1.
double ddim_sigma(int t, const NoiseSchedule& sched);

// z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps
template <typename S>
TensorT<S> forward_noise(const TensorT<S>& z0, int t, const TensorT<S>& eps,
                         const NoiseSchedule& sched) {
    sched.check_t(t);
    if (!z0.same_shape(eps)) throw ShapeError("forward_noise: z0/eps shape mismatch");
    const double ab = sched.alpha_bar_at(t);
    const S ca = static_cast<S>(std::sqrt(ab));
    const S cb = static_cast<S>(std::sqrt(1.0 - ab));
    TensorT<S> out = z0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = ca * z0.data[i] + cb * eps.data[i];
    return out;
}

// Tweedie clean estimate: z0_hat = (z_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
template <typename S>
TensorT<S> tweedie(const TensorT<S>& z_t, const TensorT<S>& eps_hat, int t,
                   const NoiseSchedule& sched) {
    sched.check_t(t);
    if (!z_t.same_shape(eps_hat)) throw ShapeError("tweedie: z_t/eps_hat shape mismatch");
    const double ab = sched.alpha_bar_at(t);
    const S inv = static_cast<S>(1.0 / std::sqrt(ab));
    const S cb = static_cast<S>(std::sqrt(1.0 - ab));
    TensorT<S> out = z_t;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (z_t.data[i] - cb * eps_hat.data[i]) * inv;
    return out;
}

// DDIM update landing on t_prev:
//   z_prev = sqrt(abar_prev) z0_hat
//          + sqrt(1 - abar_prev - eta*sigma^2) eps_hat + eta*sigma * noise
// The eta = 0 path never reads `noise` (pass nullptr).
template <typename S>
TensorT<S> ddim_step_between(const TensorT<S>& z0_hat, const TensorT<S>& eps_hat, int t_prev,
                             int t_cur, double eta,
                             const std::type_identity_t<TensorT<S>>* noise,
                             const NoiseSchedule& sched) {
    sched.check_t(t_cur);
    if (t_prev < 0 || t_prev >= t_cur)
        throw ConfigError("ddim step needs 0 <= t_prev < t_cur, got " + std::to_string(t_prev) +
                          ", " + std::to_string(t_cur));
    if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must be in [0,1]");
    if (!z0_hat.same_shape(eps_hat)) throw ShapeError("ddim_step: z0_hat/eps_hat shape mismatch");
    const double ab_prev = sched.alpha_bar_at(t_prev);
    const double sigma = ddim_sigma_between(t_prev, t_cur, sched);
    const double radicand = 1.0 - ab_prev - eta * sigma * sigma;
    if (!(radicand >= -1e-12))  // also catches NaN from a malformed schedule
        throw ConfigError("ddim radicand negative for eta=" + std::to_string(eta) +
                          " at t=" + std::to_string(t_cur));
    const S c0 = static_cast<S>(std::sqrt(ab_prev));
    const S ce = static_cast<S>(std::sqrt(radicand < 0.0 ? 0.0 : radicand));
    TensorT<S> out = z0_hat;
    if (eta == 0.0) {
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = c0 * z0_hat.data[i] + ce * eps_hat.data[i];
        return out;
    }
    if (noise == nullptr) throw ConfigError("ddim_step with eta > 0 requires a noise tensor");
    if (!z0_hat.same_shape(*noise)) throw ShapeError("ddim_step: noise shape mismatch");
    const S cn = static_cast<S>(eta * sigma);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = c0 * z0_hat.data[i] + ce * eps_hat.data[i] + cn * noise->data[i];
    return out;
}

// Single-step form, landing on t-1.
template <typename S>
TensorT<S> ddim_step(const TensorT<S>& z0_hat, const TensorT<S>& eps_hat, int t, double eta,
                     const std::type_identity_t<TensorT<S>>* noise, const NoiseSchedule& sched) {
    return ddim_step_between<S>(z0_hat, eps_hat, t - 1, t, eta, noise, sched);
}

// Closed-form score stand-in for data ~ N(mu, sigma0^2 I).
template <typename S>
struct GaussianOracleT {
    TensorT<S> mu;
    double sigma0 = 1.0;
};
using GaussianOracle = GaussianOracleT<float>;

// Posterior mean E[z0 | z_t] = mu + (sqrt(abar) s0^2 / (abar s0^2 + 1-abar)) (z_t - sqrt(abar) mu)
template <typename S>
TensorT<S> oracle_posterior_mean(const TensorT<S>& z_t, int t, const GaussianOracleT<S>& oracle,
                                 const NoiseSchedule& sched) {
    sched.check_t(t);
    if (!z_t.same_shape(oracle.mu)) throw ShapeError("oracle: z_t/mu shape mismatch");
    if (!(oracle.sigma0 > 0.0)) throw ConfigError("oracle sigma0 must be > 0");
    const double ab = sched.alpha_bar_at(t);
    const double var0 = oracle.sigma0 * oracle.sigma0;
    const double gain = std::sqrt(ab) * var0 / (ab * var0 + 1.0 - ab);
    const double sab = std::sqrt(ab);
    TensorT<S> out = z_t;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double mu = static_cast<double>(oracle.mu.data[i]);
        out.data[i] = static_cast<S>(mu + gain * (static_cast<double>(z_t.data[i]) - sab * mu));
    }
    return out;
}

// Implied noise eps* = (z_t - sqrt(abar_t) E[z0|z_t]) / sqrt(1-abar_t).
template <typename S>
TensorT<S> oracle_eps(const TensorT<S>& z_t, int t, const GaussianOracleT<S>& oracle,
                      const NoiseSchedule& sched) {
    const TensorT<S> mean = oracle_posterior_mean(z_t, t, oracle, sched);
    const double ab = sched.alpha_bar_at(t);
    const double sab = std::sqrt(ab);
    const double inv = 1.0 / std::sqrt(1.0 - ab);
    TensorT<S> out = z_t;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<S>(
            (static_cast<double>(z_t.data[i]) - sab * static_cast<double>(mean.data[i])) * inv);
    return out;
}

} // namespace satfuse
