#include "satfuse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "json_config.hpp"
#include "satfuse/codec.hpp"
#include "satfuse/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace satfuse {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (timesteps < 1) throw ConfigError("timesteps must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end >= beta_start) || !(beta_end < 1.0))
        throw ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    net.validate();
}

namespace {

struct SampleDraw {
    const Scene* scene = nullptr;
    std::size_t lr_index = 0;
    int t = 1;
    double dt_norm = 0.0;
    Tensor eps;  // over the full concat latent
};

} // namespace

double training_loss(const std::vector<const Scene*>& batch, const UNet& net,
                     const NoiseSchedule& sched, Rng& rng, bool use_dt, Grads* grads,
                     const std::function<void(Tensor&)>& tap) {
    if (batch.empty()) throw ConfigError("training batch is empty");
    const std::size_t n = batch.size();

    // All randomness is drawn serially in batch order up front, so the
    // per-sample evaluation below can run on any number of threads without
    // changing the result.
    std::vector<SampleDraw> draws(n);
    for (std::size_t b = 0; b < n; ++b) {
        SampleDraw& d = draws[b];
        d.scene = batch[b];
        if (d.scene == nullptr || d.scene->lr_list.empty())
            throw ConfigError("training scene has no LR revisits");
        d.lr_index = rng.index(d.scene->lr_list.size());
        d.t = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(sched.T)));
        d.dt_norm = use_dt ? dt_normalized(d.scene->lr_list[d.lr_index].dt_days) : 0.0;
        const std::uint32_t h = d.scene->hr.height(), w = d.scene->hr.width();
        d.eps = Tensor::hwc(h / 2, w, 4 * d.scene->hr.channels());
        rng.fill_normal(d.eps.data.data(), d.eps.data.size());
    }

    std::vector<double> losses(n, 0.0);
    std::vector<Grads> sample_grads;
    if (grads != nullptr) sample_grads.assign(n, net.make_grads());

    parallel_for(n, std::min<int>(max_threads(), static_cast<int>(n)), [&](std::size_t b) {
        const SampleDraw& d = draws[b];
        const Tensor z_lr = encode(d.scene->lr_list[d.lr_index].image);
        const Tensor z_hr = encode(d.scene->hr);
        const Tensor z0 = concat_latents(z_lr, z_hr);
        const Tensor z_t = forward_noise(z0, d.t, d.eps, sched);

        Tensor eps_hat;
        UNetCache cache;
        if (grads != nullptr)
            eps_hat = net.forward_cached(z_t, d.t, d.dt_norm, cache);
        else
            eps_hat = net.forward(z_t, d.t, d.dt_norm);
        if (tap) tap(eps_hat);

        const std::uint32_t w_half = eps_hat.width() / 2, c = eps_hat.channels();
        const std::size_t count_hr = static_cast<std::size_t>(eps_hat.height()) * w_half * c;
        double sq = 0.0;
        Tensor grad_out;
        if (grads != nullptr) grad_out = Tensor(eps_hat.shape);
        const double gscale = 2.0 / (static_cast<double>(count_hr) * static_cast<double>(n));
        for (std::uint32_t y = 0; y < eps_hat.height(); ++y) {
            for (std::uint32_t x = w_half; x < eps_hat.width(); ++x) {
                for (std::uint32_t ch = 0; ch < c; ++ch) {
                    const double diff = static_cast<double>(eps_hat.at(y, x, ch)) -
                                        static_cast<double>(d.eps.at(y, x, ch));
                    sq += diff * diff;
                    if (grads != nullptr)
                        grad_out.at(y, x, ch) = static_cast<float>(gscale * diff);
                }
            }
        }
        losses[b] = sq / static_cast<double>(count_hr);
        if (grads != nullptr) net.backward(cache, grad_out, sample_grads[b]);
    });

    double total = 0.0;
    for (double l : losses) total += l;
    if (grads != nullptr)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t pi = 0; pi < grads->size(); ++pi)
                for (std::size_t i = 0; i < (*grads)[pi].size(); ++i)
                    (*grads)[pi][i] += sample_grads[b][pi][i];
    return total / static_cast<double>(n);
}

double smoothed_loss(const std::vector<double>& history, std::size_t end_iter,
                     std::size_t window) {
    if (end_iter == 0 || end_iter > history.size() || window == 0)
        throw ConfigError("smoothed_loss: bad window [" + std::to_string(end_iter) + ", " +
                          std::to_string(window) + "] for history of " +
                          std::to_string(history.size()));
    const std::size_t lo = end_iter > window ? end_iter - window : 0;
    double s = 0.0;
    for (std::size_t i = lo; i < end_iter; ++i) s += history[i];
    return s / static_cast<double>(end_iter - lo);
}

Checkpoint train(const std::vector<Scene>& dataset, const SceneConfig& scene_config,
                 const TrainConfig& config, const std::string& checkpoint_dir,
                 const TrainLogger& logger) {
    config.validate();
    scene_config.validate();
    if (dataset.empty()) throw ConfigError("training dataset is empty");
    for (const Scene& s : dataset) {
        if (s.hr.shape.size() != 3 || s.hr.height() % 8 != 0 || s.hr.width() % 8 != 0)
            throw ConfigError("scene " + s.scene_id +
                              ": HR dims must be multiples of 8 for the two-level net");
        if (4 * s.hr.channels() != config.net.in_channels)
            throw ConfigError("net in_channels must be 4x the image channels, got " +
                              std::to_string(config.net.in_channels) + " for " +
                              std::to_string(s.hr.channels()) + "-channel images");
        if (s.lr_list.empty()) throw ConfigError("scene " + s.scene_id + " has no LR revisits");
    }

    const NoiseSchedule sched =
        make_schedule(static_cast<int>(config.timesteps), config.beta_start, config.beta_end);

    Checkpoint ckpt;
    ckpt.net = UNet(config.net);
    ckpt.net.init_weights(config.seed);
    // use_dt=false is the dt-ablated model: the branch starts zeroed and its
    // parameters are frozen, so it contributes nothing, ever.
    std::vector<bool> frozen(ckpt.net.params().size(), false);
    if (!config.use_dt) {
        ckpt.net.zero_dt_branch();
        for (std::size_t pi = 0; pi < ckpt.net.params().size(); ++pi)
            if (ckpt.net.params()[pi].name.rfind("dtemb", 0) == 0) frozen[pi] = true;
    }
    ckpt.train = config;
    ckpt.scene = scene_config;

    Rng order_rng(mix_seed(config.seed, stream::batch_order));
    Rng noise_rng(mix_seed(config.seed, stream::train_noise));

    Grads grads = ckpt.net.make_grads();
    std::vector<std::vector<double>> m(grads.size()), v(grads.size());
    for (std::size_t pi = 0; pi < grads.size(); ++pi) {
        m[pi].assign(grads[pi].size(), 0.0);
        v[pi].assign(grads[pi].size(), 0.0);
    }

    ckpt.loss_history.reserve(config.iterations);
    std::vector<const Scene*> batch(config.batch_size);
    for (std::uint32_t it = 1; it <= config.iterations; ++it) {
        for (auto& slot : batch) slot = &dataset[order_rng.index(dataset.size())];

        UNet::zero_grads(grads);
        const double loss =
            training_loss(batch, ckpt.net, sched, noise_rng, config.use_dt, &grads);
        if (!std::isfinite(loss))
            throw NumericError("training diverged at iteration " + std::to_string(it));

        const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(it));
        const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(it));
        auto& params = ckpt.net.params();
        for (std::size_t pi = 0; pi < grads.size(); ++pi) {
            if (frozen[pi]) continue;
            for (std::size_t i = 0; i < grads[pi].size(); ++i) {
                const double g = grads[pi][i];
                m[pi][i] = config.adam_beta1 * m[pi][i] + (1.0 - config.adam_beta1) * g;
                v[pi][i] = config.adam_beta2 * v[pi][i] + (1.0 - config.adam_beta2) * g * g;
                const double step = config.learning_rate * (m[pi][i] / bc1) /
                                    (std::sqrt(v[pi][i] / bc2) + config.adam_eps);
                params[pi].value[i] -= static_cast<float>(step);
            }
        }

        ckpt.loss_history.push_back(loss);
        ckpt.iteration = it;
        if (logger) logger(it, loss);
        if (!checkpoint_dir.empty() && it % config.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_%06u.sfck", it);
            save_checkpoint(ckpt, (fs::path(checkpoint_dir) / name).string());
        }
    }
    return ckpt;
}

Tensor conditional_step(const UNet& net, const NoiseSchedule& sched, const Tensor& z_lr_clean,
                        const Tensor& z_hr, int t_cur, int t_prev, double dt_norm, double eta,
                        Rng& rng) {
    Tensor eps_lr(z_lr_clean.shape);
    rng.fill_normal(eps_lr.data.data(), eps_lr.data.size());
    const Tensor z_lr_t = forward_noise(z_lr_clean, t_cur, eps_lr, sched);
    const Tensor full = concat_latents(z_lr_t, z_hr);
    const Tensor eps_hat = mask_hr(net.forward(full, t_cur, dt_norm));
    const Tensor z0_hat = tweedie(z_hr, eps_hat, t_cur, sched);
    if (eta > 0.0) {
        Tensor noise(z_hr.shape);
        rng.fill_normal(noise.data.data(), noise.data.size());
        return ddim_step_between(z0_hat, eps_hat, t_prev, t_cur, eta, &noise, sched);
    }
    return ddim_step_between<float>(z0_hat, eps_hat, t_prev, t_cur, eta, nullptr, sched);
}

Tensor sample_conditional(const Tensor& lr_image, double dt_days, const Checkpoint& ckpt,
                          std::uint32_t steps, double eta, std::uint64_t seed) {
    const NoiseSchedule sched = ckpt.schedule();
    const Tensor z_lr = encode(lr_image);
    if (z_lr.channels() != ckpt.net.config().in_channels)
        throw ConfigError("LR image channels do not match the checkpoint (" +
                          std::to_string(z_lr.channels()) + " vs " +
                          std::to_string(ckpt.net.config().in_channels) + " latent channels)");
    const double dt_norm = ckpt.train.use_dt ? dt_normalized(dt_days) : 0.0;

    Rng rng(mix_seed(seed, stream::trajectory, 0));
    Tensor z_hr(z_lr.shape);
    rng.fill_normal(z_hr.data.data(), z_hr.data.size());

    const std::vector<int> ts = inference_timesteps(sched.T, static_cast<int>(steps));
    for (std::size_t j = 0; j < ts.size(); ++j) {
        const int t_cur = ts[j];
        const int t_prev = (j + 1 < ts.size()) ? ts[j + 1] : 0;
        z_hr = conditional_step(ckpt.net, sched, z_lr, z_hr, t_cur, t_prev, dt_norm, eta, rng);
    }
    return decode(z_hr);
}

// ---------------------------------------------------------------------------
// checkpoint persistence

namespace {

constexpr char kCkptMagic[4] = {'S', 'F', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"iterations", c.iterations},
                {"seed", c.seed},
                {"timesteps", c.timesteps},
                {"beta_start", c.beta_start},
                {"beta_end", c.beta_end},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"checkpoint_every", c.checkpoint_every},
                {"use_dt", c.use_dt}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<std::uint32_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.iterations = j.at("iterations").get<std::uint32_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.timesteps = j.at("timesteps").get<std::uint32_t>();
    c.beta_start = j.at("beta_start").get<double>();
    c.beta_end = j.at("beta_end").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.checkpoint_every = j.at("checkpoint_every").get<std::uint32_t>();
    c.use_dt = j.at("use_dt").get<bool>();
    return c;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    const auto& params = ckpt.net.params();
    json meta;
    meta["codec"] = "haar1";
    meta["iteration"] = ckpt.iteration;
    meta["loss_history"] = ckpt.loss_history;
    meta["net"] = json{{"in_channels", ckpt.net.config().in_channels},
                       {"base_channels", ckpt.net.config().base_channels},
                       {"emb_dim", ckpt.net.config().emb_dim},
                       {"sin_dim", ckpt.net.config().sin_dim}};
    meta["scene"] = scene_config_to_json(ckpt.scene);
    meta["train"] = train_config_to_json(ckpt.train);
    meta["tensor_count"] = params.size();
    const std::string meta_str = meta.dump();

    std::vector<std::uint8_t> bytes;
    bytes.insert(bytes.end(), kCkptMagic, kCkptMagic + 4);
    put_u32(bytes, kCkptVersion);
    put_u32(bytes, static_cast<std::uint32_t>(meta_str.size()));
    bytes.insert(bytes.end(), meta_str.begin(), meta_str.end());
    for (const auto& p : params) {
        put_u32(bytes, static_cast<std::uint32_t>(p.name.size()));
        bytes.insert(bytes.end(), p.name.begin(), p.name.end());
        Tensor t;
        t.shape = p.shape;
        t.data = p.value;
        const std::vector<std::uint8_t> blob = tensor_to_bytes(t);
        bytes.insert(bytes.end(), blob.begin(), blob.end());
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + path + " (" + ec.message() + ")");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());

    if (bytes.size() < 12) throw FormatError("checkpoint truncated (header): " + path);
    if (std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
        throw FormatError("bad checkpoint magic, expected SFCK: " + path);
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kCkptVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t meta_len = get_u32(bytes.data() + 8);
    std::size_t off = 12;
    if (bytes.size() < off + meta_len) throw FormatError("checkpoint truncated (metadata): " + path);

    Checkpoint ckpt;
    std::size_t tensor_count = 0;
    try {
        const json meta = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                      bytes.begin() + static_cast<std::ptrdiff_t>(off + meta_len));
        if (meta.at("codec").get<std::string>() != "haar1")
            throw FormatError("unknown latent codec in checkpoint: " +
                              meta.at("codec").get<std::string>());
        UNetConfig nc;
        nc.in_channels = meta.at("net").at("in_channels").get<std::uint32_t>();
        nc.base_channels = meta.at("net").at("base_channels").get<std::uint32_t>();
        nc.emb_dim = meta.at("net").at("emb_dim").get<std::uint32_t>();
        nc.sin_dim = meta.at("net").at("sin_dim").get<std::uint32_t>();
        ckpt.net = UNet(nc);
        ckpt.train = train_config_from_json(meta.at("train"));
        ckpt.train.net = nc;
        ckpt.scene = scene_config_from_json(meta.at("scene"));
        ckpt.iteration = meta.at("iteration").get<std::uint64_t>();
        ckpt.loss_history = meta.at("loss_history").get<std::vector<double>>();
        tensor_count = meta.at("tensor_count").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError("bad checkpoint metadata: " + std::string(e.what()));
    }
    off += meta_len;

    auto& params = ckpt.net.params();
    if (tensor_count != params.size())
        throw FormatError("checkpoint has " + std::to_string(tensor_count) + " tensors, expected " +
                          std::to_string(params.size()));
    std::vector<bool> seen(params.size(), false);
    for (std::size_t k = 0; k < tensor_count; ++k) {
        if (bytes.size() < off + 4) throw FormatError("checkpoint truncated (tensor name): " + path);
        const std::uint32_t name_len = get_u32(bytes.data() + off);
        off += 4;
        if (name_len > 256 || bytes.size() < off + name_len)
            throw FormatError("checkpoint truncated (tensor name): " + path);
        const std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                               bytes.begin() + static_cast<std::ptrdiff_t>(off + name_len));
        off += name_len;
        std::size_t consumed = 0;
        const Tensor t = tensor_from_bytes(bytes.data() + off, bytes.size() - off, consumed);
        off += consumed;

        const auto it = std::find_if(params.begin(), params.end(),
                                     [&](const Param& p) { return p.name == name; });
        if (it == params.end()) throw FormatError("unknown tensor in checkpoint: " + name);
        const std::size_t pi = static_cast<std::size_t>(it - params.begin());
        if (seen[pi]) throw FormatError("duplicate tensor in checkpoint: " + name);
        if (t.shape != it->shape) throw FormatError("tensor shape mismatch for " + name);
        it->value = t.data;
        seen[pi] = true;
    }
    if (off != bytes.size()) throw FormatError("trailing bytes after checkpoint payload: " + path);
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        if (!seen[pi]) throw FormatError("checkpoint missing tensor: " + params[pi].name);
    return ckpt;
}

} // namespace satfuse
