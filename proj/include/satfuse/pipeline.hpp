#pragma once

#include <cstdint>
#include <string>

#include "satfuse/fusion.hpp"
#include "satfuse/synthdata.hpp"
#include "satfuse/tensor.hpp"
#include "satfuse/trainer.hpp"

namespace satfuse {

inline constexpr const char* kToolVersion = "0.1.0";

// Flat union of every subcommand's knobs. JSON round-trippable; unknown keys
// are rejected; every field has a default so a config file may be partial.
struct RunConfig {
    // scene / dataset
    std::uint32_t hr_size = 32;
    std::uint32_t lr_factor = 4;
    std::uint32_t n_lr = 16;
    double dt_min = -180.0;
    double dt_max = 180.0;
    double cloud_prob = 0.3;
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;
    std::uint32_t n_scenes = 200;
    bool overwrite = false;

    // training
    std::uint32_t batch_size = 4;
    double learning_rate = 1e-4;
    std::uint32_t iterations = 2000;
    std::uint32_t timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint32_t checkpoint_every = 500;
    bool use_dt = true;
    std::uint32_t base_channels = 32;  // in_channels is derived from the data
    std::uint32_t emb_dim = 128;
    std::uint32_t sin_dim = 64;

    // fusion / sampling
    double lambda = 0.1;
    double alpha = 0.2;
    std::uint32_t k = 5;
    std::uint32_t batch_b = 0;  // 0 = min(N, 8)
    double eta = 0.0;
    std::uint32_t steps = 50;
    std::uint32_t inner_iters = 20;
    double step_size = 0.1;

    // selection
    std::uint32_t scene = 0;
    std::uint32_t lr_index = 0;
    std::uint32_t eval_scenes = 0;  // 0 = every scene in the manifest
    std::string kind = "n-sweep";   // ablate: n-sweep | module | hyper

    // paths
    std::string data_dir;
    std::string ckpt;
    std::string ckpt_nodt;
    std::string pred_dir;
    std::string out_dir;

    SceneConfig scene_config() const;
    TrainConfig train_config(std::uint32_t data_channels = 3) const;
    FusionConfig fusion_config() const;
};

// Unknown keys or wrong value types raise ConfigError naming the key.
RunConfig run_config_from_json_text(const std::string& text);
std::string run_config_to_json_text(const RunConfig& cfg);

// defaults <- config file (optional) <- overrides JSON (optional).
RunConfig resolve_config(const std::string& config_path, const std::string& overrides_json);

// Binary P6 preview: values clamped to [0,1] and rounded to 8 bits. The .f32
// artifact next to it stays lossless.
void write_ppm(const std::string& path, const Tensor& img);

// Subcommand drivers. Each writes resolved_config.json (config + subcommand +
// tool version) into out_dir next to its declared outputs.
void run_gen_data(const RunConfig& cfg);
void run_train(const RunConfig& cfg, const TrainLogger& logger = {});
void run_sample(const RunConfig& cfg);
void run_fuse(const RunConfig& cfg);
void run_eval(const RunConfig& cfg);
void run_ablate(const RunConfig& cfg);

} // namespace satfuse
