// satfuse command line. Flags mirror config keys (kebab-case); a JSON config
// file may set any key and explicit flags override it. All real work happens
// behind the C API.
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "satfuse.h"

using nlohmann::json;

namespace {

// Collects only the flags the user actually passed, so file values survive.
struct SubCommand {
    CLI::App* cmd = nullptr;
    std::string config_path;
    std::vector<std::function<void(json&)>> collectors;
    sf_status (*run)(const char*) = nullptr;

    SubCommand(CLI::App& app, const std::string& name, const std::string& desc,
               sf_status (*fn)(const char*)) {
        cmd = app.add_subcommand(name, desc);
        run = fn;
        cmd->add_option("--config", config_path, "JSON config file (flags override it)");
    }

    template <typename T>
    CLI::Option* opt(const std::string& flag, const std::string& key, const std::string& desc) {
        auto val = std::make_shared<T>();
        CLI::Option* o = cmd->add_option(flag, *val, desc);
        collectors.push_back([o, val, key](json& j) {
            if (o->count() > 0) j[key] = *val;
        });
        return o;
    }

    void flag(const std::string& name, const std::string& key, const std::string& desc) {
        auto val = std::make_shared<bool>(false);
        CLI::Option* o = cmd->add_flag(name, *val, desc);
        collectors.push_back([o, val, key](json& j) {
            if (o->count() > 0) j[key] = *val;
        });
    }

    json overrides() const {
        json j = json::object();
        for (const auto& c : collectors) c(j);
        return j;
    }
};

void add_scene_opts(SubCommand& s) {
    s.opt<std::uint32_t>("--hr-size", "hr_size", "HR image side length");
    s.opt<std::uint32_t>("--lr-factor", "lr_factor", "downsampling factor");
    s.opt<std::uint32_t>("--n-lr", "n_lr", "LR revisits per scene");
    s.opt<double>("--dt-min", "dt_min", "min revisit offset (days)");
    s.opt<double>("--dt-max", "dt_max", "max revisit offset (days)");
    s.opt<double>("--cloud-prob", "cloud_prob", "per-revisit cloud probability");
    s.opt<double>("--noise-sigma", "noise_sigma", "sensor noise sigma");
}

void add_fusion_opts(SubCommand& s) {
    s.opt<double>("--lambda", "lambda", "pull strength toward the center");
    s.opt<double>("--alpha", "alpha", "perceptual weight in the center distance");
    s.opt<std::uint32_t>("--k", "k", "fuse every k-th reverse step");
    s.opt<std::uint32_t>("--batch-b", "batch_b", "center batch size (0 = min(N, 8))");
    s.opt<double>("--eta", "eta", "DDIM stochasticity");
    s.opt<std::uint32_t>("--steps", "steps", "reverse sampling steps");
    s.opt<std::uint32_t>("--inner-iters", "inner_iters", "center solver iterations");
    s.opt<double>("--step-size", "step_size", "center solver step size");
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"satfuse: multi-revisit satellite image fusion via diffusion sampling"};
    app.set_version_flag("--version", sf_version());
    app.require_subcommand(1);

    std::vector<SubCommand> subs;
    subs.reserve(6);

    {
        SubCommand& s = subs.emplace_back(app, "gen-data", "generate a synthetic dataset", sf_gen_data);
        add_scene_opts(s);
        s.opt<std::uint64_t>("--seed", "seed", "dataset seed");
        s.opt<std::uint32_t>("--n-scenes", "n_scenes", "number of scenes");
        s.opt<std::string>("--out", "out_dir", "output dataset directory");
        s.flag("--overwrite", "overwrite", "replace an existing dataset directory");
    }
    {
        SubCommand& s = subs.emplace_back(app, "train", "train the conditional denoiser", sf_train);
        s.opt<std::string>("--data", "data_dir", "dataset directory");
        s.opt<std::string>("--out", "out_dir", "run directory");
        s.opt<std::uint64_t>("--seed", "seed", "training seed");
        s.opt<std::uint32_t>("--iterations", "iterations", "optimizer iterations");
        s.opt<std::uint32_t>("--batch-size", "batch_size", "scenes per iteration");
        s.opt<double>("--learning-rate", "learning_rate", "Adam learning rate");
        s.opt<std::uint32_t>("--timesteps", "timesteps", "diffusion timesteps T");
        s.opt<double>("--beta-start", "beta_start", "noise schedule start");
        s.opt<double>("--beta-end", "beta_end", "noise schedule end");
        s.opt<double>("--adam-beta1", "adam_beta1", "Adam beta1");
        s.opt<double>("--adam-beta2", "adam_beta2", "Adam beta2");
        s.opt<double>("--adam-eps", "adam_eps", "Adam epsilon");
        s.opt<std::uint32_t>("--checkpoint-every", "checkpoint_every", "checkpoint interval");
        s.opt<bool>("--use-dt", "use_dt", "condition on the revisit time offset");
        s.opt<std::uint32_t>("--base-channels", "base_channels", "UNet width");
        s.opt<std::uint32_t>("--emb-dim", "emb_dim", "embedding width");
        s.opt<std::uint32_t>("--sin-dim", "sin_dim", "sinusoidal encoding size");
    }
    {
        SubCommand& s = subs.emplace_back(app, "sample", "single-revisit conditional sampling", sf_sample);
        s.opt<std::string>("--ckpt", "ckpt", "checkpoint file");
        s.opt<std::string>("--data", "data_dir", "dataset directory");
        s.opt<std::uint32_t>("--scene", "scene", "scene index");
        s.opt<std::uint32_t>("--lr-index", "lr_index", "revisit index");
        s.opt<std::uint32_t>("--steps", "steps", "reverse sampling steps");
        s.opt<double>("--eta", "eta", "DDIM stochasticity");
        s.opt<std::uint64_t>("--seed", "seed", "sampling seed");
        s.opt<std::string>("--out", "out_dir", "run directory");
    }
    {
        SubCommand& s = subs.emplace_back(app, "fuse", "multi-revisit fused sampling", sf_fuse);
        s.opt<std::string>("--ckpt", "ckpt", "checkpoint file");
        s.opt<std::string>("--data", "data_dir", "dataset directory");
        s.opt<std::uint32_t>("--scene", "scene", "scene index");
        s.opt<std::uint32_t>("--n-lr", "n_lr", "revisits to fuse");
        add_fusion_opts(s);
        s.opt<std::uint64_t>("--seed", "seed", "sampling seed");
        s.opt<std::string>("--out", "out_dir", "run directory");
    }
    {
        SubCommand& s = subs.emplace_back(app, "eval", "score predictions against HR truth", sf_eval);
        s.opt<std::string>("--pred-dir", "pred_dir", "directory of <scene_id>.f32 predictions");
        s.opt<std::string>("--data", "data_dir", "dataset directory");
        s.opt<std::uint32_t>("--eval-scenes", "eval_scenes", "scenes to score (0 = all)");
        s.opt<std::string>("--out", "out_dir", "run directory");
    }
    {
        SubCommand& s = subs.emplace_back(app, "ablate", "run an ablation sweep", sf_ablate);
        s.opt<std::string>("--kind", "kind", "n-sweep | module | hyper")
            ->check(CLI::IsMember({"n-sweep", "module", "hyper"}));
        s.opt<std::string>("--ckpt", "ckpt", "checkpoint file");
        s.opt<std::string>("--ckpt-nodt", "ckpt_nodt", "dt-ablated checkpoint (module kind)");
        s.opt<std::string>("--data", "data_dir", "dataset directory");
        s.opt<std::uint32_t>("--n-lr", "n_lr", "revisits fused by full-method rows");
        s.opt<std::uint32_t>("--lr-index", "lr_index", "revisit used by no-fusion rows");
        s.opt<std::uint32_t>("--eval-scenes", "eval_scenes", "scenes to use (0 = all)");
        add_fusion_opts(s);
        s.opt<std::uint64_t>("--seed", "seed", "base seed (per-scene seeds derive from it)");
        s.opt<std::string>("--out", "out_dir", "run directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "config: " << one_line(e.what()) << "\n";
        std::cerr << app.help();
        return 2;
    }

    const SubCommand* active = nullptr;
    for (const auto& s : subs)
        if (s.cmd->parsed()) active = &s;
    if (!active) {  // unreachable: require_subcommand(1)
        std::cerr << "config: no subcommand given\n";
        return 2;
    }

    char* resolved = nullptr;
    sf_status st = sf_resolve_config(active->config_path.empty() ? nullptr : active->config_path.c_str(),
                                     active->overrides().dump().c_str(), &resolved);
    if (st != SF_OK) {
        std::cerr << sf_last_error() << "\n";
        return static_cast<int>(st);
    }
    const std::string config_json(resolved);
    sf_string_free(resolved);

    st = active->run(config_json.c_str());
    if (st != SF_OK) {
        std::cerr << sf_last_error() << "\n";
        return static_cast<int>(st);
    }

    const json cfg = json::parse(config_json);
    const std::string out_dir = cfg.value("out_dir", "");
    if (active->cmd->get_name() == "eval") {
        // The scoring table is the eval subcommand's stdout contract.
        std::ifstream in(out_dir + "/eval.json");
        std::cout << in.rdbuf();
    }
    std::cerr << "satfuse: " << active->cmd->get_name() << " done -> " << out_dir << "\n";
    return 0;
}
