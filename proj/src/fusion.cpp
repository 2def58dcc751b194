#include "satfuse/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "satfuse/codec.hpp"
#include "satfuse/denoiser.hpp"
#include "satfuse/diffusion.hpp"
#include "satfuse/metrics.hpp"
#include "satfuse/parallel.hpp"

namespace satfuse {

void FusionConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0,1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
    if (k < 1) throw ConfigError("k must be >= 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must be in [0,1]");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (!(step_size > 0.0)) throw ConfigError("step_size must be > 0");
}

std::uint32_t FusionConfig::resolved_batch(std::size_t n_trajectories) const {
    const std::uint32_t n = static_cast<std::uint32_t>(n_trajectories);
    const std::uint32_t b = batch_b == 0 ? std::min<std::uint32_t>(n, 8) : batch_b;
    if (b < 1 || b > n)
        throw ConfigError("batch_b must be in [1, N], got " + std::to_string(b) + " for N=" +
                          std::to_string(n));
    return b;
}

double distance(const Tensor& x, const Tensor& y, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
    if (!x.same_shape(y)) throw ShapeError("distance: shape mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double d = static_cast<double>(x.data[i]) - static_cast<double>(y.data[i]);
        sq += d * d;
    }
    const double msq = sq / static_cast<double>(x.numel());
    if (alpha == 0.0) return msq;
    return (1.0 - alpha) * msq + alpha * perceptual_proxy(decode(x), decode(y));
}

namespace {

// Objective sum_i d(c, pts[i]) and, when grad != nullptr, its gradient in c.
// decoded_pts must hold decode(pts[i]) when alpha > 0.
double center_objective(const Tensor& c, const std::vector<Tensor>& pts,
                        const std::vector<Tensor>& decoded_pts, double alpha, Tensor* grad) {
    const double n_inv = 1.0 / static_cast<double>(c.numel());
    if (grad != nullptr) *grad = Tensor(c.shape);

    double obj = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double sq = 0.0;
        for (std::size_t e = 0; e < c.data.size(); ++e) {
            const double d = static_cast<double>(c.data[e]) - static_cast<double>(pts[i].data[e]);
            sq += d * d;
            if (grad != nullptr)
                grad->data[e] += static_cast<float>((1.0 - alpha) * 2.0 * d * n_inv);
        }
        obj += (1.0 - alpha) * sq * n_inv;
    }

    if (alpha > 0.0) {
        const Tensor dec_c = decode(c);
        const auto& fx = FeatureExtractor::instance();
        Tensor grad_img;
        if (grad != nullptr) grad_img = Tensor(dec_c.shape);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (grad != nullptr) {
                auto [p, vjp] = fx.proxy_vjp(dec_c, decoded_pts[i]);
                obj += alpha * p;
                for (std::size_t e = 0; e < grad_img.data.size(); ++e)
                    grad_img.data[e] += vjp.data[e];
            } else {
                obj += alpha * fx.proxy(dec_c, decoded_pts[i]);
            }
        }
        if (grad != nullptr) {
            const Tensor enc = encode(grad_img);
            for (std::size_t e = 0; e < grad->data.size(); ++e)
                grad->data[e] += static_cast<float>(alpha) * enc.data[e];
        }
    }
    return obj;
}

double pair_l2(const Tensor& a, const Tensor& b) {
    double sq = 0.0;
    for (std::size_t e = 0; e < a.data.size(); ++e) {
        const double d = static_cast<double>(a.data[e]) - static_cast<double>(b.data[e]);
        sq += d * d;
    }
    return std::sqrt(sq);
}

void pairwise_disagreement(const std::vector<Tensor>& z0, double& max_out, double& mean_out) {
    max_out = 0.0;
    mean_out = 0.0;
    const std::size_t n = z0.size();
    if (n < 2) return;
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = pair_l2(z0[i], z0[j]);
            max_out = std::max(max_out, d);
            total += d;
            ++pairs;
        }
    }
    mean_out = total / static_cast<double>(pairs);
}

} // namespace

Tensor find_center(const std::vector<Tensor>& z0_list, double alpha, std::uint32_t inner_iters,
                   double step_size) {
    if (z0_list.empty()) throw ConfigError("find_center needs a nonempty list");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0,1]");
    if (!(step_size > 0.0)) throw ConfigError("step_size must be > 0");
    for (const Tensor& z : z0_list)
        if (!z.same_shape(z0_list.front())) throw ShapeError("find_center: shape mismatch");

    // init: elementwise mean
    Tensor c(z0_list.front().shape);
    for (std::size_t e = 0; e < c.data.size(); ++e) {
        double acc = 0.0;
        for (const Tensor& z : z0_list) acc += static_cast<double>(z.data[e]);
        c.data[e] = static_cast<float>(acc / static_cast<double>(z0_list.size()));
    }

    std::vector<Tensor> decoded;
    if (alpha > 0.0) {
        decoded.reserve(z0_list.size());
        for (const Tensor& z : z0_list) decoded.push_back(decode(z));
    }

    Tensor grad;
    for (std::uint32_t it = 0; it < inner_iters; ++it) {
        const double obj = center_objective(c, z0_list, decoded, alpha, &grad);
        if (!std::isfinite(obj) || !all_finite(grad.data.data(), grad.data.size()))
            throw NumericError("center objective became non-finite at inner iteration " +
                               std::to_string(it));
        double step = step_size;
        for (int halving = 0; halving <= 5; ++halving) {
            Tensor cand = c;
            for (std::size_t e = 0; e < cand.data.size(); ++e)
                cand.data[e] -= static_cast<float>(step) * grad.data[e];
            const double cand_obj = center_objective(cand, z0_list, decoded, alpha, nullptr);
            if (std::isfinite(cand_obj) && cand_obj <= obj) {
                c = std::move(cand);
                break;
            }
            step *= 0.5;  // after 5 failed halvings the iterate is kept as is
        }
    }
    return c;
}

Tensor fusion_update(const Tensor& z0_hat, const Tensor& center, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0,1]");
    if (!z0_hat.same_shape(center)) throw ShapeError("fusion_update: shape mismatch");
    if (lambda == 0.0) return z0_hat;
    if (lambda == 1.0) return center;
    Tensor out = z0_hat;
    const float l = static_cast<float>(lambda);
    for (std::size_t e = 0; e < out.data.size(); ++e)
        out.data[e] = z0_hat.data[e] + l * (center.data[e] - z0_hat.data[e]);
    return out;
}

FusionResult satdiffmoe(const std::vector<LrView>& lr_list, const Checkpoint& ckpt,
                        const FusionConfig& config, std::uint64_t seed) {
    const auto t_start = std::chrono::steady_clock::now();
    config.validate();
    const std::size_t n = lr_list.size();
    if (n == 0) throw ConfigError("fusion needs at least one LR revisit");
    const std::uint32_t batch_b = config.resolved_batch(n);
    const NoiseSchedule sched = ckpt.schedule();

    std::vector<TrajectoryState> traj(n);
    for (std::size_t i = 0; i < n; ++i) {
        TrajectoryState& tr = traj[i];
        tr.index = static_cast<std::uint32_t>(i);
        tr.z_lr = encode(lr_list[i].image);
        if (tr.z_lr.channels() != ckpt.net.config().in_channels)
            throw ConfigError("LR image channels do not match the checkpoint (" +
                              std::to_string(tr.z_lr.channels()) + " vs " +
                              std::to_string(ckpt.net.config().in_channels) +
                              " latent channels)");
        if (!tr.z_lr.same_shape(traj.front().z_lr))
            throw ShapeError("LR revisits must share one shape");
        tr.dt_norm = ckpt.train.use_dt ? dt_normalized(lr_list[i].dt_days) : 0.0;
        tr.stream_seed = mix_seed(seed, stream::trajectory, i);
        tr.rng = Rng(tr.stream_seed);
        tr.z_t = Tensor(tr.z_lr.shape);
        tr.rng.fill_normal(tr.z_t.data.data(), tr.z_t.data.size());
    }

    Rng fusion_rng(mix_seed(seed, stream::fusion_batch));
    const std::vector<int> ts = inference_timesteps(sched.T, static_cast<int>(config.steps));
    const std::size_t total = ts.size();
    const int threads = std::min<int>(max_threads(), static_cast<int>(n));

    FusionResult result;
    result.step_stats.reserve(total);
    std::vector<Tensor> eps_hats(n), z0_hats(n);

    for (std::size_t s = 0; s < total; ++s) {
        const int t_cur = ts[s];
        const int t_prev = (s + 1 < total) ? ts[s + 1] : 0;

        parallel_for(n, threads, [&](std::size_t i) {
            TrajectoryState& tr = traj[i];
            Tensor eps_lr(tr.z_lr.shape);
            tr.rng.fill_normal(eps_lr.data.data(), eps_lr.data.size());
            const Tensor z_lr_t = forward_noise(tr.z_lr, t_cur, eps_lr, sched);
            const Tensor full = concat_latents(z_lr_t, tr.z_t);
            eps_hats[i] = mask_hr(ckpt.net.forward(full, t_cur, tr.dt_norm));
            z0_hats[i] = tweedie(tr.z_t, eps_hats[i], t_cur, sched);
        });
        for (std::size_t i = 0; i < n; ++i)
            if (!all_finite(z0_hats[i].data.data(), z0_hats[i].data.size()))
                throw NumericError("non-finite latent in trajectory " + std::to_string(i) +
                                   " at step " + std::to_string(s) + " (t=" +
                                   std::to_string(t_cur) + ")");

        FusionStepStats stats;
        stats.t = t_cur;
        stats.fused = (total - s) % config.k == 0;
        pairwise_disagreement(z0_hats, stats.max_pairwise, stats.mean_pairwise);
        stats.max_pairwise_after = stats.max_pairwise;

        if (stats.fused) {
            // Freshly sampled batch of batch_b trajectories, without
            // replacement (partial Fisher-Yates on the fusion stream).
            std::vector<std::uint32_t> pool(n);
            std::iota(pool.begin(), pool.end(), 0u);
            for (std::uint32_t j = 0; j < batch_b; ++j)
                std::swap(pool[j], pool[j + fusion_rng.index(n - j)]);

            if (config.lambda > 0.0) {  // lambda == 0 pulls by zero: skip the solve
                std::vector<Tensor> batch_pts;
                batch_pts.reserve(batch_b);
                for (std::uint32_t j = 0; j < batch_b; ++j) batch_pts.push_back(z0_hats[pool[j]]);
                const Tensor center =
                    find_center(batch_pts, config.alpha, config.inner_iters, config.step_size);
                for (std::size_t i = 0; i < n; ++i)
                    z0_hats[i] = fusion_update(z0_hats[i], center, config.lambda);
            }
            double mean_after = 0.0;
            pairwise_disagreement(z0_hats, stats.max_pairwise_after, mean_after);
        }
        result.step_stats.push_back(stats);

        parallel_for(n, threads, [&](std::size_t i) {
            TrajectoryState& tr = traj[i];
            if (config.eta > 0.0) {
                Tensor noise(tr.z_t.shape);
                tr.rng.fill_normal(noise.data.data(), noise.data.size());
                tr.z_t = ddim_step_between(z0_hats[i], eps_hats[i], t_prev, t_cur, config.eta,
                                           &noise, sched);
            } else {
                tr.z_t = ddim_step_between<float>(z0_hats[i], eps_hats[i], t_prev, t_cur, 0.0,
                                                  nullptr, sched);
            }
        });
        for (std::size_t i = 0; i < n; ++i)
            if (!all_finite(traj[i].z_t.data.data(), traj[i].z_t.data.size()))
                throw NumericError("non-finite latent in trajectory " + std::to_string(i) +
                                   " at step " + std::to_string(s) + " (t=" +
                                   std::to_string(t_prev) + ")");
    }

    // Consensus output: center over all N final clean latents, decoded.
    std::vector<Tensor> finals;
    finals.reserve(n);
    for (const TrajectoryState& tr : traj) finals.push_back(tr.z_t);
    const Tensor center = find_center(finals, config.alpha, config.inner_iters, config.step_size);
    result.image = decode(center);
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

} // namespace satfuse
