#include "satfuse/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "satfuse/common.hpp"
#include "satfuse/metrics.hpp"
#include "satfuse/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace satfuse {

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

template <typename T>
void set_field(T& dst, const json& v, const std::string& key) {
    try {
        dst = v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for config key '" + key + "'");
    }
}

void apply_json(RunConfig& c, const json& j) {
    if (!j.is_object()) throw ConfigError("config JSON must be an object");
    for (const auto& [key, val] : j.items()) {
#define SF_FIELD(name)                 \
    if (key == #name) {                \
        set_field(c.name, val, key);   \
        continue;                      \
    }
        SF_FIELD(hr_size)
        SF_FIELD(lr_factor)
        SF_FIELD(n_lr)
        SF_FIELD(dt_min)
        SF_FIELD(dt_max)
        SF_FIELD(cloud_prob)
        SF_FIELD(noise_sigma)
        SF_FIELD(seed)
        SF_FIELD(n_scenes)
        SF_FIELD(overwrite)
        SF_FIELD(batch_size)
        SF_FIELD(learning_rate)
        SF_FIELD(iterations)
        SF_FIELD(timesteps)
        SF_FIELD(beta_start)
        SF_FIELD(beta_end)
        SF_FIELD(adam_beta1)
        SF_FIELD(adam_beta2)
        SF_FIELD(adam_eps)
        SF_FIELD(checkpoint_every)
        SF_FIELD(use_dt)
        SF_FIELD(base_channels)
        SF_FIELD(emb_dim)
        SF_FIELD(sin_dim)
        SF_FIELD(lambda)
        SF_FIELD(alpha)
        SF_FIELD(k)
        SF_FIELD(batch_b)
        SF_FIELD(eta)
        SF_FIELD(steps)
        SF_FIELD(inner_iters)
        SF_FIELD(step_size)
        SF_FIELD(scene)
        SF_FIELD(lr_index)
        SF_FIELD(eval_scenes)
        SF_FIELD(kind)
        SF_FIELD(data_dir)
        SF_FIELD(ckpt)
        SF_FIELD(ckpt_nodt)
        SF_FIELD(pred_dir)
        SF_FIELD(out_dir)
#undef SF_FIELD
        throw ConfigError("unknown config key '" + key + "'");
    }
}

json to_json(const RunConfig& c) {
    return json{
        {"hr_size", c.hr_size},
        {"lr_factor", c.lr_factor},
        {"n_lr", c.n_lr},
        {"dt_min", c.dt_min},
        {"dt_max", c.dt_max},
        {"cloud_prob", c.cloud_prob},
        {"noise_sigma", c.noise_sigma},
        {"seed", c.seed},
        {"n_scenes", c.n_scenes},
        {"overwrite", c.overwrite},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"iterations", c.iterations},
        {"timesteps", c.timesteps},
        {"beta_start", c.beta_start},
        {"beta_end", c.beta_end},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"adam_eps", c.adam_eps},
        {"checkpoint_every", c.checkpoint_every},
        {"use_dt", c.use_dt},
        {"base_channels", c.base_channels},
        {"emb_dim", c.emb_dim},
        {"sin_dim", c.sin_dim},
        {"lambda", c.lambda},
        {"alpha", c.alpha},
        {"k", c.k},
        {"batch_b", c.batch_b},
        {"eta", c.eta},
        {"steps", c.steps},
        {"inner_iters", c.inner_iters},
        {"step_size", c.step_size},
        {"scene", c.scene},
        {"lr_index", c.lr_index},
        {"eval_scenes", c.eval_scenes},
        {"kind", c.kind},
        {"data_dir", c.data_dir},
        {"ckpt", c.ckpt},
        {"ckpt_nodt", c.ckpt_nodt},
        {"pred_dir", c.pred_dir},
        {"out_dir", c.out_dir},
    };
}

json parse_json(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("invalid JSON in " + what);
    return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

void write_json_file(const fs::path& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

// Every run directory carries its own provenance.
void echo_config(const RunConfig& cfg, const std::string& subcommand) {
    write_json_file(fs::path(cfg.out_dir) / "resolved_config.json",
                    json{{"tool_version", kToolVersion},
                         {"subcommand", subcommand},
                         {"config", to_json(cfg)}});
}

void require_out_dir(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw ConfigError("out_dir is required");
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create out_dir '" + cfg.out_dir + "': " + ec.message());
}

Manifest open_manifest(const RunConfig& cfg) {
    if (cfg.data_dir.empty()) throw ConfigError("data_dir is required");
    return load_manifest(cfg.data_dir);
}

Checkpoint open_checkpoint(const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string(what) + " is required");
    return load_checkpoint(path);
}

Scene open_scene(const RunConfig& cfg, const Manifest& man) {
    if (cfg.scene >= man.scenes.size())
        throw ConfigError("scene index " + std::to_string(cfg.scene) + " out of range (dataset has " +
                          std::to_string(man.scenes.size()) + " scenes)");
    return load_scene(cfg.data_dir, man, cfg.scene);
}

std::size_t scenes_used(const RunConfig& cfg, const Manifest& man) {
    if (man.scenes.empty()) throw ConfigError("dataset has no scenes");
    std::size_t n = man.scenes.size();
    if (cfg.eval_scenes > 0) n = std::min<std::size_t>(n, cfg.eval_scenes);
    return n;
}

std::vector<Scene> load_scenes(const std::string& dir, const Manifest& man, std::size_t count) {
    std::vector<Scene> out(count);
    parallel_for(count, max_threads(), [&](std::size_t i) { out[i] = load_scene(dir, man, i); });
    return out;
}

struct MetricRow {
    double psnr = 0.0, ssim = 0.0, proxy = 0.0, wall = 0.0;
};

json summarize(const std::string& label, const std::vector<MetricRow>& rows, json extra) {
    double psnr = 0, ssim = 0, proxy = 0, wall = 0;
    json per_psnr = json::array(), per_ssim = json::array(), per_proxy = json::array();
    for (const auto& r : rows) {
        psnr += r.psnr;
        ssim += r.ssim;
        proxy += r.proxy;
        wall += r.wall;
        per_psnr.push_back(r.psnr);
        per_ssim.push_back(r.ssim);
        per_proxy.push_back(r.proxy);
    }
    const double n = static_cast<double>(rows.size());
    extra["label"] = label;
    extra["psnr_mean"] = psnr / n;
    extra["ssim_mean"] = ssim / n;
    extra["proxy_mean"] = proxy / n;
    extra["wall_seconds_total"] = wall;
    extra["wall_seconds_mean"] = wall / n;
    extra["per_scene"] =
        json{{"psnr", per_psnr}, {"ssim", per_ssim}, {"proxy", per_proxy}};
    return extra;
}

} // namespace

SceneConfig RunConfig::scene_config() const {
    SceneConfig s;
    s.hr_size = hr_size;
    s.lr_factor = lr_factor;
    s.n_lr = n_lr;
    s.dt_min = dt_min;
    s.dt_max = dt_max;
    s.cloud_prob = cloud_prob;
    s.noise_sigma = noise_sigma;
    s.seed = seed;
    return s;
}

TrainConfig RunConfig::train_config(std::uint32_t data_channels) const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    t.iterations = iterations;
    t.seed = seed;
    t.timesteps = timesteps;
    t.beta_start = beta_start;
    t.beta_end = beta_end;
    t.adam_beta1 = adam_beta1;
    t.adam_beta2 = adam_beta2;
    t.adam_eps = adam_eps;
    t.checkpoint_every = checkpoint_every;
    t.use_dt = use_dt;
    t.net.in_channels = 4 * data_channels;  // codec packs 4 subbands per channel
    t.net.base_channels = base_channels;
    t.net.emb_dim = emb_dim;
    t.net.sin_dim = sin_dim;
    return t;
}

FusionConfig RunConfig::fusion_config() const {
    FusionConfig f;
    f.lambda = lambda;
    f.alpha = alpha;
    f.k = k;
    f.batch_b = batch_b;
    f.eta = eta;
    f.steps = steps;
    f.inner_iters = inner_iters;
    f.step_size = step_size;
    return f;
}

RunConfig run_config_from_json_text(const std::string& text) {
    RunConfig cfg;
    apply_json(cfg, parse_json(text, "config"));
    return cfg;
}

std::string run_config_to_json_text(const RunConfig& cfg) {
    return to_json(cfg).dump(2) + "\n";
}

RunConfig resolve_config(const std::string& config_path, const std::string& overrides_json) {
    RunConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path, std::ios::binary);
        if (!in) throw IoError("cannot open config file '" + config_path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        apply_json(cfg, parse_json(ss.str(), "config file '" + config_path + "'"));
    }
    if (!overrides_json.empty()) apply_json(cfg, parse_json(overrides_json, "overrides"));
    return cfg;
}

void write_ppm(const std::string& path, const Tensor& img) {
    if (img.shape.size() != 3 || img.channels() != 3)
        throw ShapeError("ppm preview needs an (H, W, 3) image");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width()) * 3);
    for (std::uint32_t y = 0; y < img.height(); ++y) {
        for (std::uint32_t x = 0; x < img.width(); ++x)
            for (std::uint32_t c = 0; c < 3; ++c) {
                const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
                row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("short write to '" + path + "'");
}

void run_gen_data(const RunConfig& cfg) {
    if (cfg.n_scenes == 0) throw ConfigError("n_scenes must be >= 1");
    if (cfg.out_dir.empty()) throw ConfigError("out_dir is required");
    generate_dataset(cfg.scene_config(), cfg.n_scenes, cfg.out_dir, cfg.overwrite);
    echo_config(cfg, "gen-data");
}

void run_train(const RunConfig& cfg, const TrainLogger& logger) {
    require_out_dir(cfg);
    const Manifest man = open_manifest(cfg);
    const std::vector<Scene> dataset = load_scenes(cfg.data_dir, man, man.scenes.size());
    // The manifest's scene config describes the actual data and wins over any
    // scene fields in cfg; the resolved echo records what was requested.
    Timer timer;
    const Checkpoint ckpt = train(dataset, man.config, cfg.train_config(), cfg.out_dir, logger);
    const double wall = timer.seconds();
    save_checkpoint(ckpt, (fs::path(cfg.out_dir) / "ckpt_final.sfck").string());
    write_json_file(fs::path(cfg.out_dir) / "train_report.json",
                    json{{"iterations", ckpt.iteration},
                         {"final_loss", ckpt.loss_history.back()},
                         {"smoothed_loss", smoothed_loss(ckpt.loss_history, ckpt.loss_history.size())},
                         {"wall_seconds", wall},
                         {"n_scenes", dataset.size()},
                         {"param_count", ckpt.net.param_count()},
                         {"loss_history", ckpt.loss_history}});
    echo_config(cfg, "train");
}

void run_sample(const RunConfig& cfg) {
    require_out_dir(cfg);
    const Checkpoint ckpt = open_checkpoint(cfg.ckpt, "ckpt");
    const Manifest man = open_manifest(cfg);
    const Scene scene = open_scene(cfg, man);
    if (cfg.lr_index >= scene.lr_list.size())
        throw ConfigError("lr_index " + std::to_string(cfg.lr_index) + " out of range (scene has " +
                          std::to_string(scene.lr_list.size()) + " revisits)");
    const LrView& lr = scene.lr_list[cfg.lr_index];
    Timer timer;
    const Tensor out = sample_conditional(lr.image, lr.dt_days, ckpt, cfg.steps, cfg.eta, cfg.seed);
    const double wall = timer.seconds();
    write_tensor((fs::path(cfg.out_dir) / "sample.f32").string(), out);
    write_ppm((fs::path(cfg.out_dir) / "sample.ppm").string(), out);
    write_json_file(fs::path(cfg.out_dir) / "report.json",
                    json{{"scene_id", scene.scene_id},
                         {"lr_index", cfg.lr_index},
                         {"dt_days", lr.dt_days},
                         {"steps", cfg.steps},
                         {"eta", cfg.eta},
                         {"seed", cfg.seed},
                         {"psnr", psnr(out, scene.hr)},
                         {"ssim", ssim(out, scene.hr)},
                         {"proxy", perceptual_proxy(out, scene.hr)},
                         {"wall_seconds", wall}});
    echo_config(cfg, "sample");
}

void run_fuse(const RunConfig& cfg) {
    require_out_dir(cfg);
    const Checkpoint ckpt = open_checkpoint(cfg.ckpt, "ckpt");
    const Manifest man = open_manifest(cfg);
    const Scene scene = open_scene(cfg, man);
    if (cfg.n_lr == 0) throw ConfigError("n_lr must be >= 1");
    if (cfg.n_lr > scene.lr_list.size())
        throw ConfigError("n_lr " + std::to_string(cfg.n_lr) + " exceeds the scene's " +
                          std::to_string(scene.lr_list.size()) + " revisits");
    const std::vector<LrView> revisits(scene.lr_list.begin(), scene.lr_list.begin() + cfg.n_lr);
    const FusionConfig fc = cfg.fusion_config();
    const FusionResult result = satdiffmoe(revisits, ckpt, fc, cfg.seed);
    write_tensor((fs::path(cfg.out_dir) / "fused.f32").string(), result.image);
    write_ppm((fs::path(cfg.out_dir) / "fused.ppm").string(), result.image);
    json steps_j = json::array();
    for (const auto& s : result.step_stats)
        steps_j.push_back(json{{"t", s.t},
                               {"fused", s.fused},
                               {"max_pairwise", s.max_pairwise},
                               {"mean_pairwise", s.mean_pairwise},
                               {"max_pairwise_after", s.max_pairwise_after}});
    write_json_file(fs::path(cfg.out_dir) / "report.json",
                    json{{"scene_id", scene.scene_id},
                         {"n_lr", cfg.n_lr},
                         {"lambda", fc.lambda},
                         {"alpha", fc.alpha},
                         {"k", fc.k},
                         {"batch_b", fc.resolved_batch(revisits.size())},
                         {"eta", fc.eta},
                         {"steps", fc.steps},
                         {"inner_iters", fc.inner_iters},
                         {"step_size", fc.step_size},
                         {"seed", cfg.seed},
                         {"psnr", psnr(result.image, scene.hr)},
                         {"ssim", ssim(result.image, scene.hr)},
                         {"proxy", perceptual_proxy(result.image, scene.hr)},
                         {"wall_seconds", result.wall_seconds},
                         {"step_stats", steps_j}});
    echo_config(cfg, "fuse");
}

void run_eval(const RunConfig& cfg) {
    require_out_dir(cfg);
    if (cfg.pred_dir.empty()) throw ConfigError("pred_dir is required");
    const Manifest man = open_manifest(cfg);
    const std::size_t n = scenes_used(cfg, man);
    std::vector<Tensor> preds(n), hrs(n);
    std::vector<MetricRow> rows(n);
    parallel_for(n, max_threads(), [&](std::size_t i) {
        const std::string& id = man.scenes[i].scene_id;
        hrs[i] = read_tensor((fs::path(cfg.data_dir) / id / "hr.f32").string());
        preds[i] = read_tensor((fs::path(cfg.pred_dir) / (id + ".f32")).string());
        rows[i] = {psnr(preds[i], hrs[i]), ssim(preds[i], hrs[i]),
                   perceptual_proxy(preds[i], hrs[i]), 0.0};
    });
    json rows_j = json::array();
    double mean[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        rows_j.push_back(json{{"scene_id", man.scenes[i].scene_id},
                              {"psnr", rows[i].psnr},
                              {"ssim", rows[i].ssim},
                              {"proxy", rows[i].proxy}});
        const double v[3] = {rows[i].psnr, rows[i].ssim, rows[i].proxy};
        for (int m = 0; m < 3; ++m) {
            mean[m] += v[m];
            sq[m] += v[m] * v[m];
        }
    }
    json agg;
    const char* names[3] = {"psnr", "ssim", "proxy"};
    for (int m = 0; m < 3; ++m) {
        const double mu = mean[m] / static_cast<double>(n);
        const double var = std::max(0.0, sq[m] / static_cast<double>(n) - mu * mu);
        agg[std::string(names[m]) + "_mean"] = mu;
        agg[std::string(names[m]) + "_std"] = std::sqrt(var);
    }
    write_json_file(fs::path(cfg.out_dir) / "eval.json",
                    json{{"n_scenes", n},
                         {"rows", rows_j},
                         {"aggregate", agg},
                         {"feature_moment_distance", feature_moment_distance(preds, hrs)},
                         {"feature_moment_note",
                          "realism indicator from fixed random features; not comparable to FID"}});
    echo_config(cfg, "eval");
}

void run_ablate(const RunConfig& cfg) {
    require_out_dir(cfg);
    if (cfg.kind != "n-sweep" && cfg.kind != "module" && cfg.kind != "hyper")
        throw ConfigError("ablate kind must be one of n-sweep, module, hyper; got '" + cfg.kind + "'");
    const Checkpoint ckpt = open_checkpoint(cfg.ckpt, "ckpt");
    const Manifest man = open_manifest(cfg);
    const std::size_t n = scenes_used(cfg, man);
    const std::vector<Scene> scenes = load_scenes(cfg.data_dir, man, n);
    // Matched pairs: scene i keeps one seed across every row of a sweep.
    std::vector<std::uint64_t> seeds(n);
    for (std::size_t i = 0; i < n; ++i) seeds[i] = mix_seed(cfg.seed, i);
    json scene_ids = json::array();
    for (std::size_t i = 0; i < n; ++i) scene_ids.push_back(scenes[i].scene_id);

    const auto fuse_row = [&](const FusionConfig& fc, std::uint32_t n_lr) {
        std::vector<MetricRow> rows(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (n_lr > scenes[i].lr_list.size())
                throw ConfigError("ablate needs " + std::to_string(n_lr) + " revisits but " +
                                  scenes[i].scene_id + " has " +
                                  std::to_string(scenes[i].lr_list.size()));
            const std::vector<LrView> revisits(scenes[i].lr_list.begin(),
                                               scenes[i].lr_list.begin() + n_lr);
            const FusionResult r = satdiffmoe(revisits, ckpt, fc, seeds[i]);
            rows[i] = {psnr(r.image, scenes[i].hr), ssim(r.image, scenes[i].hr),
                       perceptual_proxy(r.image, scenes[i].hr), r.wall_seconds};
        }
        return rows;
    };
    const auto baseline_row = [&](const Checkpoint& model) {
        std::vector<MetricRow> rows(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (cfg.lr_index >= scenes[i].lr_list.size())
                throw ConfigError("lr_index " + std::to_string(cfg.lr_index) + " out of range for " +
                                  scenes[i].scene_id);
            const LrView& lr = scenes[i].lr_list[cfg.lr_index];
            Timer timer;
            const Tensor img =
                sample_conditional(lr.image, lr.dt_days, model, cfg.steps, cfg.eta, seeds[i]);
            rows[i] = {psnr(img, scenes[i].hr), ssim(img, scenes[i].hr),
                       perceptual_proxy(img, scenes[i].hr), timer.seconds()};
        }
        return rows;
    };

    json table = json{{"kind", cfg.kind},
                      {"tool_version", kToolVersion},
                      {"seed", cfg.seed},
                      {"scene_ids", scene_ids},
                      {"rows", json::array()}};
    if (cfg.kind == "n-sweep") {
        const std::uint32_t sweep[] = {1, 2, 4, 8, 16};
        for (std::uint32_t N : sweep) {
            json row = summarize("n=" + std::to_string(N), fuse_row(cfg.fusion_config(), N),
                                 json{{"n", N}});
            row["batch_b"] = cfg.fusion_config().resolved_batch(N);
            table["rows"].push_back(std::move(row));
        }
    } else if (cfg.kind == "module") {
        const Checkpoint nodt = open_checkpoint(cfg.ckpt_nodt, "ckpt_nodt");
        if (nodt.train.use_dt)
            throw ConfigError("ckpt_nodt must be a checkpoint trained with use_dt=false");
        table["rows"].push_back(summarize("no-dt no-fusion", baseline_row(nodt),
                                          json{{"use_dt", false}, {"fusion", false}}));
        table["rows"].push_back(summarize("dt no-fusion", baseline_row(ckpt),
                                          json{{"use_dt", true}, {"fusion", false}}));
        table["rows"].push_back(summarize("dt+fusion", fuse_row(cfg.fusion_config(), cfg.n_lr),
                                          json{{"use_dt", true}, {"fusion", true}}));
    } else {
        for (double a : {0.0, 0.2, 0.5, 1.0})
            for (double l : {0.0, 0.05, 0.1, 0.3}) {
                FusionConfig fc = cfg.fusion_config();
                fc.alpha = a;
                fc.lambda = l;
                char label[48];
                std::snprintf(label, sizeof(label), "alpha=%g lambda=%g", a, l);
                table["rows"].push_back(summarize(
                    label, fuse_row(fc, cfg.n_lr), json{{"alpha", a}, {"lambda", l}}));
            }
    }
    std::string name = "ablate_" + cfg.kind + ".json";
    std::replace(name.begin(), name.end(), '-', '_');
    write_json_file(fs::path(cfg.out_dir) / name, table);
    echo_config(cfg, "ablate");
}

} // namespace satfuse
