#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "satfuse/tensor.hpp"

namespace satfuse {

struct SceneConfig {
    std::uint32_t hr_size = 32;   // square, 3 channels
    std::uint32_t lr_factor = 4;
    std::uint32_t n_lr = 16;
    double dt_min = -180.0;
    double dt_max = 180.0;
    double cloud_prob = 0.3;
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

struct LrView {
    Tensor image;     // already upsampled back to hr_size
    double dt_days = 0.0;
};

struct Scene {
    Tensor hr;
    std::vector<LrView> lr_list;
    std::string scene_id;
    std::uint64_t seed = 0;  // derived scene stream seed
};

// Deterministic procedural HR + degraded LR revisits for one scene index.
Scene generate_scene(const SceneConfig& config, std::uint32_t scene_index);

// Degradation pipeline, fixed order:
// tint(dt) -> optional cloud -> gaussian blur -> avgpool -> noise -> clamp
// -> bilinear upsample back to hr_size. Deterministic given rng_seed.
Tensor degrade(const Tensor& hr, double dt_days, std::uint64_t rng_seed,
               const SceneConfig& config);

// Seasonal per-channel tint factor; anchored so s_c(0) = 1 for every channel.
double tint_factor(double dt_days, int channel);

struct ManifestEntry {
    std::string scene_id;
    std::uint64_t seed = 0;
    std::vector<double> dt_days;
};

struct Manifest {
    SceneConfig config;
    std::vector<ManifestEntry> scenes;
};

struct DatasetSummary {
    std::uint32_t n_scenes = 0;
    std::string manifest_path;
};

// Writes manifest.json plus one subdirectory per scene (hr.f32, lr_<i>.f32).
// Refuses an existing non-empty out_dir unless overwrite is set.
DatasetSummary generate_dataset(const SceneConfig& config, std::uint32_t n_scenes,
                                const std::string& out_dir, bool overwrite = false);

Manifest load_manifest(const std::string& dataset_dir);
Scene load_scene(const std::string& dataset_dir, const Manifest& manifest, std::size_t index);

} // namespace satfuse
