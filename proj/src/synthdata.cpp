#include "satfuse/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "json_config.hpp"
#include "satfuse/image.hpp"
#include "satfuse/parallel.hpp"
#include "satfuse/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace satfuse {

void SceneConfig::validate() const {
    if (hr_size == 0 || hr_size % 2 != 0)
        throw ConfigError("hr_size must be a positive even number, got " + std::to_string(hr_size));
    if (lr_factor == 0 || hr_size % lr_factor != 0)
        throw ConfigError("lr_factor must divide hr_size, got lr_factor=" +
                          std::to_string(lr_factor) + " hr_size=" + std::to_string(hr_size));
    if (n_lr < 1) throw ConfigError("n_lr must be >= 1");
    if (!(dt_min < dt_max))
        throw ConfigError("dt_range_days must be a nonempty interval, got [" +
                          std::to_string(dt_min) + ", " + std::to_string(dt_max) + "]");
    if (!(cloud_prob >= 0.0 && cloud_prob <= 1.0)) throw ConfigError("cloud_prob must be in [0,1]");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
}

double tint_factor(double dt_days, int channel) {
    // Seasonal sinusoid, phase-shifted per channel, anchored so every
    // channel passes through 1 at dt = 0.
    static const double phase[3] = {0.0, 2.0 * std::numbers::pi / 3.0,
                                    4.0 * std::numbers::pi / 3.0};
    const double p = phase[channel % 3];
    const double w = 2.0 * std::numbers::pi * dt_days / 365.0;
    return 1.0 + 0.15 * (std::sin(w + p) - std::sin(p));
}

namespace {

// Smooth background: per-channel base tone plus a bilinearly interpolated
// coarse random field.
void paint_background(Tensor& img, Rng& rng) {
    const std::uint32_t n = img.height();
    constexpr std::uint32_t G = 4;
    double base[3];
    for (auto& b : base) b = rng.uniform(0.25, 0.55);
    double grid[G * G * 3];
    for (auto& g : grid) g = rng.uniform(-1.0, 1.0);
    for (std::uint32_t y = 0; y < n; ++y) {
        const double gy = (n == 1) ? 0.0 : static_cast<double>(y) * (G - 1) / (n - 1);
        const std::uint32_t y0 = std::min(static_cast<std::uint32_t>(gy), G - 2);
        const double fy = gy - y0;
        for (std::uint32_t x = 0; x < n; ++x) {
            const double gx = (n == 1) ? 0.0 : static_cast<double>(x) * (G - 1) / (n - 1);
            const std::uint32_t x0 = std::min(static_cast<std::uint32_t>(gx), G - 2);
            const double fx = gx - x0;
            for (std::uint32_t c = 0; c < 3; ++c) {
                const double v00 = grid[(y0 * G + x0) * 3 + c];
                const double v01 = grid[(y0 * G + x0 + 1) * 3 + c];
                const double v10 = grid[((y0 + 1) * G + x0) * 3 + c];
                const double v11 = grid[((y0 + 1) * G + x0 + 1) * 3 + c];
                const double f = (v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                                 (v10 * (1 - fx) + v11 * fx) * fy;
                img.at(y, x, c) = static_cast<float>(base[c] + 0.12 * f);
            }
        }
    }
}

void paint_rectangles(Tensor& img, Rng& rng) {
    const std::uint32_t n = img.height();
    const std::uint64_t count = 1 + rng.index(3);  // 1..3 "buildings"
    for (std::uint64_t r = 0; r < count; ++r) {
        const std::uint32_t w = n / 8 + static_cast<std::uint32_t>(rng.index(std::max<std::uint64_t>(n / 4, 1)));
        const std::uint32_t h = n / 8 + static_cast<std::uint32_t>(rng.index(std::max<std::uint64_t>(n / 4, 1)));
        const std::uint32_t x0 = static_cast<std::uint32_t>(rng.index(n));
        const std::uint32_t y0 = static_cast<std::uint32_t>(rng.index(n));
        double color[3];
        for (auto& c : color) c = rng.uniform(0.1, 0.9);
        for (std::uint32_t y = y0; y < std::min(y0 + h, n); ++y)
            for (std::uint32_t x = x0; x < std::min(x0 + w, n); ++x)
                for (std::uint32_t c = 0; c < 3; ++c)
                    img.at(y, x, c) = static_cast<float>(0.85 * color[c] + 0.15 * img.at(y, x, c));
    }
}

void paint_lines(Tensor& img, Rng& rng) {
    const std::uint32_t n = img.height();
    const std::uint64_t count = 1 + rng.index(2);  // 1..2 "roads"
    for (std::uint64_t r = 0; r < count; ++r) {
        // Endpoints on opposite borders so the line crosses the tile.
        const bool vertical = rng.uniform() < 0.5;
        double x0, y0, x1, y1;
        if (vertical) {
            x0 = rng.uniform(0.0, n - 1.0);
            x1 = rng.uniform(0.0, n - 1.0);
            y0 = 0.0;
            y1 = n - 1.0;
        } else {
            y0 = rng.uniform(0.0, n - 1.0);
            y1 = rng.uniform(0.0, n - 1.0);
            x0 = 0.0;
            x1 = n - 1.0;
        }
        const double width = 0.6 + rng.uniform() * 1.2;
        const double shade = rng.uniform(0.05, 0.25);
        const double dx = x1 - x0, dy = y1 - y0;
        const double len2 = dx * dx + dy * dy;
        for (std::uint32_t y = 0; y < n; ++y)
            for (std::uint32_t x = 0; x < n; ++x) {
                const double t = len2 > 0.0
                                     ? std::clamp(((x - x0) * dx + (y - y0) * dy) / len2, 0.0, 1.0)
                                     : 0.0;
                const double px = x0 + t * dx, py = y0 + t * dy;
                const double dist = std::hypot(x - px, y - py);
                const double a = std::clamp(width + 0.5 - dist, 0.0, 1.0);
                if (a <= 0.0) continue;
                for (std::uint32_t c = 0; c < 3; ++c)
                    img.at(y, x, c) =
                        static_cast<float>((1.0 - a) * img.at(y, x, c) + a * shade);
            }
    }
}

void paint_texture(Tensor& img, Rng& rng) {
    for (auto& v : img.data) v = static_cast<float>(v + 0.02 * rng.normal());
}

Tensor generate_hr(const SceneConfig& cfg, Rng& rng) {
    Tensor img = Tensor::hwc(cfg.hr_size, cfg.hr_size, 3);
    paint_background(img, rng);
    paint_rectangles(img, rng);
    paint_lines(img, rng);
    paint_texture(img, rng);
    clamp01(img);
    return img;
}

std::string scene_name(std::uint32_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04u", index);
    return buf;
}

} // namespace

json scene_config_to_json(const SceneConfig& c) {
    return json{{"hr_size", c.hr_size},       {"lr_factor", c.lr_factor},
                {"n_lr", c.n_lr},             {"dt_range_days", {c.dt_min, c.dt_max}},
                {"cloud_prob", c.cloud_prob}, {"noise_sigma", c.noise_sigma},
                {"seed", c.seed}};
}

SceneConfig scene_config_from_json(const json& j) {
    SceneConfig c;
    c.hr_size = j.at("hr_size").get<std::uint32_t>();
    c.lr_factor = j.at("lr_factor").get<std::uint32_t>();
    c.n_lr = j.at("n_lr").get<std::uint32_t>();
    c.dt_min = j.at("dt_range_days").at(0).get<double>();
    c.dt_max = j.at("dt_range_days").at(1).get<double>();
    c.cloud_prob = j.at("cloud_prob").get<double>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

Tensor degrade(const Tensor& hr, double dt_days, std::uint64_t rng_seed,
               const SceneConfig& config) {
    config.validate();
    if (hr.shape.size() != 3 || hr.channels() != 3 || hr.height() != config.hr_size ||
        hr.width() != config.hr_size)
        throw ShapeError("degrade expects a (hr_size, hr_size, 3) image");
    if (!all_finite(hr.data.data(), hr.data.size()))
        throw NumericError("degrade: non-finite input image");

    Rng rng(rng_seed);
    const std::uint32_t n = config.hr_size;
    Tensor img = hr;

    // (1) seasonal tint
    double s[3];
    for (int c = 0; c < 3; ++c) s[c] = tint_factor(dt_days, c);
    for (std::uint32_t y = 0; y < n; ++y)
        for (std::uint32_t x = 0; x < n; ++x)
            for (std::uint32_t c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<float>(img.at(y, x, c) * s[c]);

    // (2) one soft-edged bright patch with probability cloud_prob
    if (rng.uniform() < config.cloud_prob) {
        const double cw = n * rng.uniform(0.2, 0.45);
        const double ch = n * rng.uniform(0.2, 0.45);
        const double cx = rng.uniform(0.0, static_cast<double>(n));
        const double cy = rng.uniform(0.0, static_cast<double>(n));
        const double bright = rng.uniform(0.75, 0.95);
        const double edge = std::max(2.0, n / 16.0);
        for (std::uint32_t y = 0; y < n; ++y) {
            const double ay = std::clamp((ch / 2 - std::abs(y - cy)) / edge, 0.0, 1.0);
            if (ay <= 0.0) continue;
            for (std::uint32_t x = 0; x < n; ++x) {
                const double ax = std::clamp((cw / 2 - std::abs(x - cx)) / edge, 0.0, 1.0);
                const double a = 0.9 * ax * ay;
                if (a <= 0.0) continue;
                for (std::uint32_t c = 0; c < 3; ++c)
                    img.at(y, x, c) =
                        static_cast<float>((1.0 - a) * img.at(y, x, c) + a * bright);
            }
        }
    }

    // (3) blur, (4) pool
    img = gaussian_blur(img, config.lr_factor / 2.0);
    img = avgpool(img, config.lr_factor);

    // (5) sensor noise, (6) clamp
    if (config.noise_sigma > 0.0)
        for (auto& v : img.data) v = static_cast<float>(v + config.noise_sigma * rng.normal());
    clamp01(img);

    // (7) back to HR size
    return upsample_bilinear(img, config.lr_factor);
}

Scene generate_scene(const SceneConfig& config, std::uint32_t scene_index) {
    config.validate();
    Scene scene;
    scene.scene_id = scene_name(scene_index);
    scene.seed = mix_seed(config.seed, stream::scene, scene_index);
    Rng rng(scene.seed);
    scene.hr = generate_hr(config, rng);
    scene.lr_list.resize(config.n_lr);
    for (std::uint32_t i = 0; i < config.n_lr; ++i)
        scene.lr_list[i].dt_days = rng.uniform(config.dt_min, config.dt_max);
    for (std::uint32_t i = 0; i < config.n_lr; ++i) {
        const std::uint64_t dseed = mix_seed(scene.seed, stream::degrade, i);
        scene.lr_list[i].image = degrade(scene.hr, scene.lr_list[i].dt_days, dseed, config);
    }
    return scene;
}

DatasetSummary generate_dataset(const SceneConfig& config, std::uint32_t n_scenes,
                                const std::string& out_dir, bool overwrite) {
    config.validate();
    fs::path root(out_dir);
    std::error_code ec;
    if (fs::exists(root) && fs::is_directory(root) && !fs::is_empty(root, ec)) {
        if (!overwrite)
            throw IoError("output directory exists and is not empty: " + out_dir +
                          " (pass overwrite to replace it)");
        fs::remove_all(root, ec);
        if (ec) throw IoError("cannot clear " + out_dir + ": " + ec.message());
    }
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    std::vector<ManifestEntry> entries(n_scenes);
    parallel_for(n_scenes, max_threads(), [&](std::size_t i) {
        const Scene scene = generate_scene(config, static_cast<std::uint32_t>(i));
        const fs::path dir = root / scene.scene_id;
        fs::create_directories(dir);
        write_tensor((dir / "hr.f32").string(), scene.hr);
        for (std::size_t k = 0; k < scene.lr_list.size(); ++k)
            write_tensor((dir / ("lr_" + std::to_string(k) + ".f32")).string(),
                         scene.lr_list[k].image);
        ManifestEntry e;
        e.scene_id = scene.scene_id;
        e.seed = scene.seed;
        for (const auto& lr : scene.lr_list) e.dt_days.push_back(lr.dt_days);
        entries[i] = std::move(e);
    });

    json m;
    m["config"] = scene_config_to_json(config);
    m["scenes"] = json::array();
    for (const auto& e : entries)
        m["scenes"].push_back(
            json{{"scene_id", e.scene_id}, {"seed", e.seed}, {"dt_days", e.dt_days}});
    const fs::path mpath = root / "manifest.json";
    std::ofstream out(mpath);
    if (!out) throw IoError("cannot write " + mpath.string());
    out << m.dump(2) << "\n";
    out.close();
    if (!out) throw IoError("write failed for " + mpath.string());

    DatasetSummary s;
    s.n_scenes = n_scenes;
    s.manifest_path = mpath.string();
    return s;
}

Manifest load_manifest(const std::string& dataset_dir) {
    const fs::path mpath = fs::path(dataset_dir) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw IoError("cannot open " + mpath.string());
    json m;
    try {
        in >> m;
        Manifest out;
        out.config = scene_config_from_json(m.at("config"));
        for (const auto& s : m.at("scenes")) {
            ManifestEntry e;
            e.scene_id = s.at("scene_id").get<std::string>();
            e.seed = s.at("seed").get<std::uint64_t>();
            e.dt_days = s.at("dt_days").get<std::vector<double>>();
            out.scenes.push_back(std::move(e));
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError("bad manifest " + mpath.string() + ": " + e.what());
    }
}

Scene load_scene(const std::string& dataset_dir, const Manifest& manifest, std::size_t index) {
    if (index >= manifest.scenes.size())
        throw ConfigError("scene index " + std::to_string(index) + " out of range");
    const ManifestEntry& e = manifest.scenes[index];
    const fs::path dir = fs::path(dataset_dir) / e.scene_id;
    Scene scene;
    scene.scene_id = e.scene_id;
    scene.seed = e.seed;
    scene.hr = read_tensor((dir / "hr.f32").string());
    scene.lr_list.resize(e.dt_days.size());
    for (std::size_t i = 0; i < e.dt_days.size(); ++i) {
        scene.lr_list[i].dt_days = e.dt_days[i];
        scene.lr_list[i].image = read_tensor((dir / ("lr_" + std::to_string(i) + ".f32")).string());
    }
    return scene;
}

} // namespace satfuse
