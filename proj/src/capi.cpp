#include "satfuse.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "json.hpp"
#include "satfuse/common.hpp"
#include "satfuse/pipeline.hpp"
#include "satfuse/trainer.hpp"

using nlohmann::json;

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) return nullptr;
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <typename Fn>
sf_status guarded(Fn&& fn) {
    g_last_error.clear();
    try {
        fn();
        return SF_OK;
    } catch (const satfuse::Error& e) {
        g_last_error = e.what();
        return static_cast<sf_status>(static_cast<int>(e.kind()));
    } catch (const std::bad_alloc&) {
        g_last_error = "numeric: out of memory";
        return SF_ERROR_NUMERIC;
    } catch (const std::exception& e) {
        g_last_error = std::string("numeric: ") + e.what();
        return SF_ERROR_NUMERIC;
    }
}

satfuse::RunConfig parse_config(const char* config_json) {
    if (!config_json || !*config_json) throw satfuse::ConfigError("config JSON is required");
    return satfuse::run_config_from_json_text(config_json);
}

} // namespace

extern "C" {

struct sf_checkpoint {
    satfuse::Checkpoint ckpt;
};

const char* sf_version(void) { return satfuse::kToolVersion; }

const char* sf_last_error(void) { return g_last_error.c_str(); }

void sf_string_free(char* s) { std::free(s); }

sf_status sf_resolve_config(const char* config_path, const char* overrides_json, char** out_json) {
    return guarded([&] {
        if (!out_json) throw satfuse::ConfigError("out_json must not be null");
        satfuse::RunConfig cfg = satfuse::resolve_config(config_path ? config_path : "",
                                                         overrides_json ? overrides_json : "");
        *out_json = dup_string(satfuse::run_config_to_json_text(cfg));
        if (!*out_json) throw std::bad_alloc();
    });
}

sf_status sf_gen_data(const char* config_json) {
    return guarded([&] { satfuse::run_gen_data(parse_config(config_json)); });
}

sf_status sf_train(const char* config_json) {
    return guarded([&] {
        satfuse::RunConfig cfg = parse_config(config_json);
        const std::uint32_t every = std::max(1u, cfg.checkpoint_every / 5);
        satfuse::run_train(cfg, [&](std::uint32_t it, double loss) {
            if (it == 1 || it == cfg.iterations || it % every == 0)
                std::fprintf(stderr, "train: iter %u/%u loss %.6f\n", it, cfg.iterations, loss);
        });
    });
}

sf_status sf_sample(const char* config_json) {
    return guarded([&] { satfuse::run_sample(parse_config(config_json)); });
}

sf_status sf_fuse(const char* config_json) {
    return guarded([&] { satfuse::run_fuse(parse_config(config_json)); });
}

sf_status sf_eval(const char* config_json) {
    return guarded([&] { satfuse::run_eval(parse_config(config_json)); });
}

sf_status sf_ablate(const char* config_json) {
    return guarded([&] { satfuse::run_ablate(parse_config(config_json)); });
}

sf_status sf_checkpoint_open(const char* path, sf_checkpoint** out) {
    return guarded([&] {
        if (!out) throw satfuse::ConfigError("out must not be null");
        if (!path || !*path) throw satfuse::ConfigError("checkpoint path is required");
        *out = new sf_checkpoint{satfuse::load_checkpoint(path)};
    });
}

void sf_checkpoint_close(sf_checkpoint* ckpt) { delete ckpt; }

sf_status sf_checkpoint_info(const sf_checkpoint* ckpt, char** out_json) {
    return guarded([&] {
        if (!ckpt) throw satfuse::ConfigError("ckpt must not be null");
        if (!out_json) throw satfuse::ConfigError("out_json must not be null");
        const satfuse::Checkpoint& c = ckpt->ckpt;
        json j{{"iteration", c.iteration},
               {"param_count", c.net.param_count()},
               {"final_loss", c.loss_history.empty() ? 0.0 : c.loss_history.back()},
               {"use_dt", c.train.use_dt},
               {"net",
                {{"in_channels", c.net.config().in_channels},
                 {"base_channels", c.net.config().base_channels},
                 {"emb_dim", c.net.config().emb_dim},
                 {"sin_dim", c.net.config().sin_dim}}},
               {"scene",
                {{"hr_size", c.scene.hr_size},
                 {"lr_factor", c.scene.lr_factor},
                 {"n_lr", c.scene.n_lr}}},
               {"timesteps", c.train.timesteps}};
        *out_json = dup_string(j.dump(2) + "\n");
        if (!*out_json) throw std::bad_alloc();
    });
}

} // extern "C"
