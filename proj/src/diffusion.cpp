#include "satfuse/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace satfuse {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule needs T >= 1, got " + std::to_string(T));
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    double running = 1.0;
    for (int t = 1; t <= T; ++t) {
        const std::size_t i = static_cast<std::size_t>(t) - 1;
        const double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
        s.beta[i] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        running *= s.alpha[i];
        s.alpha_bar[i] = running;
    }
    return s;
}

std::vector<int> inference_timesteps(int T, int steps) {
    if (T < 1) throw ConfigError("inference_timesteps: T must be >= 1");
    if (steps < 1 || steps > T)
        throw ConfigError("inference_timesteps: steps must be in [1, T]");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    for (int j = steps; j >= 1; --j) {
        int t = static_cast<int>(std::lround(static_cast<double>(j) * T / steps));
        t = std::clamp(t, 1, T);
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;
}

double ddim_sigma_between(int t_prev, int t_cur, const NoiseSchedule& sched) {
    sched.check_t(t_cur);
    if (t_prev < 0 || t_prev >= t_cur)
        throw ConfigError("ddim_sigma needs 0 <= t_prev < t_cur");
    const double ab_cur = sched.alpha_bar_at(t_cur);
    const double ab_prev = sched.alpha_bar_at(t_prev);
    return std::sqrt((1.0 - ab_prev) / (1.0 - ab_cur)) * std::sqrt(1.0 - ab_cur / ab_prev);
}

double ddim_sigma(int t, const NoiseSchedule& sched) {
    return ddim_sigma_between(t - 1, t, sched);
}

} // namespace satfuse
