#pragma once

#include <cstdint>
#include <vector>

#include "satfuse/rng.hpp"
#include "satfuse/synthdata.hpp"
#include "satfuse/tensor.hpp"
#include "satfuse/trainer.hpp"

namespace satfuse {

struct FusionConfig {
    double lambda = 0.1;        // pull strength toward the center
    double alpha = 0.2;         // perceptual weight inside distance()
    std::uint32_t k = 5;        // fuse on every k-th reverse step
    std::uint32_t batch_b = 0;  // trajectories used for the center; 0 = min(N, 8)
    double eta = 0.0;
    std::uint32_t steps = 50;

    // center solver (gradient descent from the elementwise mean)
    std::uint32_t inner_iters = 20;
    double step_size = 0.1;

    void validate() const;  // throws ConfigError naming the field
    std::uint32_t resolved_batch(std::size_t n_trajectories) const;
};

struct TrajectoryState {
    std::uint32_t index = 0;
    Tensor z_t;   // HR-half latent at the current noise level
    Tensor z_lr;  // clean encoded LR conditioning
    double dt_norm = 0.0;
    std::uint64_t stream_seed = 0;
    Rng rng{0};  // per-trajectory noise stream (z_T first, then per-step draws)
};

// Pairwise z0_hat disagreement (euclidean norm), recorded every step.
struct FusionStepStats {
    int t = 0;
    bool fused = false;
    double max_pairwise = 0.0;
    double mean_pairwise = 0.0;
    double max_pairwise_after = 0.0;  // equals max_pairwise on non-fusion steps
};

struct FusionResult {
    Tensor image;
    std::vector<FusionStepStats> step_stats;
    double wall_seconds = 0.0;
};

// d(x, y) = (1-alpha) * mean squared latent difference
//         + alpha * perceptual_proxy(decode(x), decode(y)).
double distance(const Tensor& x, const Tensor& y, double alpha);

// Gradient descent on c -> sum_i distance(c, z0_list[i]), initialized at the
// elementwise mean. The objective never increases: on an increase the step
// is halved and retried (at most 5 halvings per iteration, else the iterate
// is kept). Decode is linear with encode as its exact adjoint, so the
// perceptual term's gradient is pulled back through encode.
Tensor find_center(const std::vector<Tensor>& z0_list, double alpha,
                   std::uint32_t inner_iters = 20, double step_size = 0.1);

// z0 + lambda * (center - z0). The endpoints and the c == z0 fixed point are
// exact, which keeps single-trajectory runs bit-identical to the baseline.
Tensor fusion_update(const Tensor& z0_hat, const Tensor& center, double lambda);

// N-trajectory fused sampling: every trajectory conditions on its own LR
// revisit; on fusion steps ((steps_total - s) % k == 0 for 0-based s,
// including the first) the clean estimates of ALL trajectories are pulled
// toward the center of a freshly drawn batch_b-subset; the decoded center of
// all N final latents is returned.
FusionResult satdiffmoe(const std::vector<LrView>& lr_list, const Checkpoint& ckpt,
                        const FusionConfig& config, std::uint64_t seed);

} // namespace satfuse
