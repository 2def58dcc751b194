#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "satfuse/denoiser.hpp"
#include "satfuse/diffusion.hpp"
#include "satfuse/rng.hpp"
#include "satfuse/synthdata.hpp"

namespace satfuse {

// dt conditioning enters the net as years: dt_days / 365, clamped in embed.
inline double dt_normalized(double dt_days) { return dt_days / 365.0; }

struct TrainConfig {
    std::uint32_t batch_size = 4;
    double learning_rate = 1e-4;
    std::uint32_t iterations = 2000;
    std::uint64_t seed = 0;

    // noise schedule
    std::uint32_t timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // adaptive-moment optimizer
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    std::uint32_t checkpoint_every = 500;
    bool use_dt = true;  // false trains/samples with the dt input pinned to 0
    UNetConfig net;

    void validate() const;  // throws ConfigError naming the field
};

struct Checkpoint {
    UNet net{UNetConfig{}};
    TrainConfig train;   // config echo (includes the schedule params)
    SceneConfig scene;   // data config echo
    std::uint64_t iteration = 0;
    std::vector<double> loss_history;  // raw per-iteration loss

    NoiseSchedule schedule() const {
        return make_schedule(static_cast<int>(train.timesteps), train.beta_start, train.beta_end);
    }
};

// Batch objective. Per scene: draw one LR revisit uniformly, t ~ U{1..T},
// eps ~ N(0,I) over the full concat latent (both halves are noised); the
// loss is the mean over the batch of |mask_hr(eps_hat - eps)|^2 divided by
// the HR-half element count. Optionally accumulates parameter gradients.
// `tap`, a test hook, may edit eps_hat before the loss is formed.
double training_loss(const std::vector<const Scene*>& batch, const UNet& net,
                     const NoiseSchedule& sched, Rng& rng, bool use_dt, Grads* grads = nullptr,
                     const std::function<void(Tensor&)>& tap = {});

// Mean of the (up to) `window` history entries ending at iteration
// `end_iter` (1-based, inclusive).
double smoothed_loss(const std::vector<double>& history, std::size_t end_iter,
                     std::size_t window = 100);

using TrainLogger = std::function<void(std::uint32_t iteration, double loss)>;

// Adam on training_loss. Deterministic given (seed, config, dataset): batch
// order and noise come from fixed derived streams. Writes a checkpoint to
// checkpoint_dir every checkpoint_every iterations when the dir is nonempty.
// Non-finite loss aborts with a NumericError naming the iteration.
Checkpoint train(const std::vector<Scene>& dataset, const SceneConfig& scene_config,
                 const TrainConfig& config, const std::string& checkpoint_dir = "",
                 const TrainLogger& logger = {});

// One reverse step of a conditional trajectory: re-noise the clean LR latent
// to level t_cur (noise drawn from `rng`), predict, Tweedie, DDIM to t_prev.
// With eta > 0 the DDIM noise is drawn from `rng` after the LR noise.
Tensor conditional_step(const UNet& net, const NoiseSchedule& sched, const Tensor& z_lr_clean,
                        const Tensor& z_hr, int t_cur, int t_prev, double dt_norm, double eta,
                        Rng& rng);

// No-fusion baseline: DDIM sampling of the HR half conditioned on one LR
// image. Draws (z_T, then per-step LR noise) from one derived stream, so the
// result is bit-identical to a single-trajectory fusion run.
Tensor sample_conditional(const Tensor& lr_image, double dt_days, const Checkpoint& ckpt,
                          std::uint32_t steps = 50, double eta = 0.0, std::uint64_t seed = 0);

// Checkpoint file: magic "SFCK", u32 LE version, u32 LE JSON-metadata length,
// the metadata, then per tensor: u32 LE name length, name bytes, tensor blob.
// Written atomically (temp file + rename). load is a bit-exact round trip.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace satfuse
