#include "satfuse/denoiser.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "satfuse/image.hpp"
#include "satfuse/rng.hpp"

namespace satfuse {

void UNetConfig::validate() const {
    if (in_channels == 0 || in_channels % 4 != 0)
        throw ConfigError("in_channels must be a positive multiple of 4");
    if (base_channels == 0) throw ConfigError("base_channels must be >= 1");
    if (emb_dim == 0) throw ConfigError("emb_dim must be >= 1");
    if (sin_dim < 4 || sin_dim % 2 != 0) throw ConfigError("sin_dim must be even and >= 4");
}

template <typename S>
std::vector<S> sinusoidal_encoding(double v, std::uint32_t dim) {
    const std::uint32_t half = dim / 2;
    std::vector<S> enc(dim);
    for (std::uint32_t i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, static_cast<double>(i) / (half - 1));
        enc[i] = static_cast<S>(std::sin(v / freq));
        enc[half + i] = static_cast<S>(std::cos(v / freq));
    }
    return enc;
}
template std::vector<float> sinusoidal_encoding<float>(double, std::uint32_t);
template std::vector<double> sinusoidal_encoding<double>(double, std::uint32_t);

namespace {

template <typename S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecE = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Parameter registry layout (order is the serialization and init-draw order).
enum ParamId : std::size_t {
    kConvInW, kConvInB,
    kD1aW, kD1aB, kD1bW, kD1bB,
    kD2aW, kD2aB, kD2bW, kD2bB,
    kMidAW, kMidAB, kMidBW, kMidBB,
    kU2aW, kU2aB, kU2bW, kU2bB,
    kU1aW, kU1aB, kU1bW, kU1bB,
    kOutW, kOutB,
    kTemb1W, kTemb1B, kTemb2W, kTemb2B,
    kDtemb1W, kDtemb1B, kDtemb2W, kDtemb2B,
    kProjD1, kProjD2, kProjMid, kProjU2, kProjU1,
    kParamCount
};

// Patch layout (ky, kx, cin), matching the conv weight layout (cout, ky, kx, cin).
template <typename S>
MatR<S> im2col3x3(const TensorT<S>& in) {
    const int h = static_cast<int>(in.height()), w = static_cast<int>(in.width());
    const int c = static_cast<int>(in.channels());
    MatR<S> m(static_cast<Eigen::Index>(h) * w, 9 * c);
    m.setZero();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
            for (int ky = 0; ky < 3; ++ky) {
                const int yy = y + ky - 1;
                if (yy < 0 || yy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int xx = x + kx - 1;
                    if (xx < 0 || xx >= w) continue;
                    const S* src = &in.data[(static_cast<std::size_t>(yy) * w + xx) * c];
                    S* dst = m.data() + (row * (9 * c) + (ky * 3 + kx) * c);
                    for (int i = 0; i < c; ++i) dst[i] = src[i];
                }
            }
        }
    return m;
}

template <typename S>
void col2im3x3_add(const MatR<S>& cols, TensorT<S>& grad_in) {
    const int h = static_cast<int>(grad_in.height()), w = static_cast<int>(grad_in.width());
    const int c = static_cast<int>(grad_in.channels());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
            for (int ky = 0; ky < 3; ++ky) {
                const int yy = y + ky - 1;
                if (yy < 0 || yy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int xx = x + kx - 1;
                    if (xx < 0 || xx >= w) continue;
                    const S* src = cols.data() + (row * (9 * c) + (ky * 3 + kx) * c);
                    S* dst = &grad_in.data[(static_cast<std::size_t>(yy) * w + xx) * c];
                    for (int i = 0; i < c; ++i) dst[i] += src[i];
                }
            }
        }
}

// out = conv3x3(in, W) + b, optional extra per-channel bias (embedding).
template <typename S>
TensorT<S> conv_forward(const TensorT<S>& in, const ParamT<S>& w, const ParamT<S>& b,
                        const std::vector<S>* extra_bias = nullptr) {
    const std::uint32_t cout = w.shape[0];
    const std::uint32_t cin = in.channels();
    MatR<S> m = im2col3x3(in);
    Eigen::Map<const MatR<S>> W(w.value.data(), static_cast<Eigen::Index>(cout),
                                static_cast<Eigen::Index>(9 * cin));
    TensorT<S> out({in.height(), in.width(), cout});
    Eigen::Map<MatR<S>> O(out.data.data(), m.rows(), static_cast<Eigen::Index>(cout));
    O.noalias() = m * W.transpose();
    for (Eigen::Index r = 0; r < O.rows(); ++r)
        for (std::uint32_t ch = 0; ch < cout; ++ch) {
            S bias = b.value[ch];
            if (extra_bias) bias += (*extra_bias)[ch];
            O(r, static_cast<Eigen::Index>(ch)) += bias;
        }
    return out;
}

// Accumulates weight/bias grads; returns grad wrt the conv input (optional).
template <typename S>
TensorT<S> conv_backward(const TensorT<S>& in, const ParamT<S>& w, const TensorT<S>& grad_out,
                         std::vector<S>& grad_w, std::vector<S>& grad_b,
                         bool need_input_grad = true) {
    const std::uint32_t cout = w.shape[0];
    const std::uint32_t cin = in.channels();
    MatR<S> m = im2col3x3(in);
    Eigen::Map<const MatR<S>> G(grad_out.data.data(),
                                static_cast<Eigen::Index>(grad_out.height()) * grad_out.width(),
                                static_cast<Eigen::Index>(cout));
    Eigen::Map<MatR<S>> GW(grad_w.data(), static_cast<Eigen::Index>(cout),
                           static_cast<Eigen::Index>(9 * cin));
    GW.noalias() += G.transpose() * m;
    Eigen::Map<VecE<S>> GB(grad_b.data(), static_cast<Eigen::Index>(cout));
    GB.noalias() += G.colwise().sum().transpose();
    TensorT<S> grad_in({in.height(), in.width(), cin});
    if (need_input_grad) {
        Eigen::Map<const MatR<S>> W(w.value.data(), static_cast<Eigen::Index>(cout),
                                    static_cast<Eigen::Index>(9 * cin));
        MatR<S> cols = G * W;
        col2im3x3_add(cols, grad_in);
    }
    return grad_in;
}

template <typename S>
void silu_inplace(TensorT<S>& x) {
    for (auto& v : x.data) {
        const double d = static_cast<double>(v);
        v = static_cast<S>(d / (1.0 + std::exp(-d)));
    }
}

template <typename S>
void silu_backward_inplace(const TensorT<S>& pre, TensorT<S>& grad) {
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        const double v = static_cast<double>(pre.data[i]);
        const double s = 1.0 / (1.0 + std::exp(-v));
        grad.data[i] = static_cast<S>(static_cast<double>(grad.data[i]) * s * (1.0 + v * (1.0 - s)));
    }
}

template <typename S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
    TensorT<S> out({a.height(), a.width(), a.channels() + b.channels()});
    for (std::uint32_t y = 0; y < a.height(); ++y)
        for (std::uint32_t x = 0; x < a.width(); ++x) {
            for (std::uint32_t c = 0; c < a.channels(); ++c) out.at(y, x, c) = a.at(y, x, c);
            for (std::uint32_t c = 0; c < b.channels(); ++c)
                out.at(y, x, a.channels() + c) = b.at(y, x, c);
        }
    return out;
}

template <typename S>
void split_channels(const TensorT<S>& cat, std::uint32_t ca, TensorT<S>& ga, TensorT<S>& gb) {
    ga = TensorT<S>({cat.height(), cat.width(), ca});
    gb = TensorT<S>({cat.height(), cat.width(), cat.channels() - ca});
    for (std::uint32_t y = 0; y < cat.height(); ++y)
        for (std::uint32_t x = 0; x < cat.width(); ++x) {
            for (std::uint32_t c = 0; c < ca; ++c) ga.at(y, x, c) = cat.at(y, x, c);
            for (std::uint32_t c = ca; c < cat.channels(); ++c)
                gb.at(y, x, c - ca) = cat.at(y, x, c);
        }
}

template <typename S>
TensorT<S> upsample_nearest2_backward(const TensorT<S>& grad_out) {
    TensorT<S> g({grad_out.height() / 2, grad_out.width() / 2, grad_out.channels()});
    for (std::uint32_t y = 0; y < grad_out.height(); ++y)
        for (std::uint32_t x = 0; x < grad_out.width(); ++x)
            for (std::uint32_t c = 0; c < grad_out.channels(); ++c)
                g.at(y / 2, x / 2, c) += grad_out.at(y, x, c);
    return g;
}

template <typename S>
TensorT<S> avgpool2_backward(const TensorT<S>& grad_out) {
    TensorT<S> g({grad_out.height() * 2, grad_out.width() * 2, grad_out.channels()});
    for (std::uint32_t y = 0; y < g.height(); ++y)
        for (std::uint32_t x = 0; x < g.width(); ++x)
            for (std::uint32_t c = 0; c < g.channels(); ++c)
                g.at(y, x, c) = static_cast<S>(grad_out.at(y / 2, x / 2, c) * S(0.25));
    return g;
}

// Per-channel sum of a gradient tensor -> bias gradient vector.
template <typename S>
std::vector<S> channel_sums(const TensorT<S>& g) {
    std::vector<S> sums(g.channels(), S(0));
    const std::size_t pixels = g.data.size() / g.channels();
    for (std::size_t p = 0; p < pixels; ++p)
        for (std::uint32_t c = 0; c < g.channels(); ++c) sums[c] += g.data[p * g.channels() + c];
    return sums;
}

// Dense y = W v + b.
template <typename S>
std::vector<S> dense_forward(const ParamT<S>& w, const ParamT<S>& b, const std::vector<S>& v) {
    const std::uint32_t rows = w.shape[0], cols = w.shape[1];
    std::vector<S> out(rows);
    Eigen::Map<const MatR<S>> W(w.value.data(), rows, cols);
    Eigen::Map<const VecE<S>> V(v.data(), cols);
    Eigen::Map<VecE<S>> O(out.data(), rows);
    O.noalias() = W * V;
    for (std::uint32_t i = 0; i < rows; ++i) out[i] += b.value[i];
    return out;
}

template <typename S>
std::vector<S> dense_backward(const ParamT<S>& w, const std::vector<S>& in,
                              const std::vector<S>& grad_out, std::vector<S>& grad_w,
                              std::vector<S>& grad_b) {
    const std::uint32_t rows = w.shape[0], cols = w.shape[1];
    Eigen::Map<const VecE<S>> G(grad_out.data(), rows);
    Eigen::Map<const VecE<S>> I(in.data(), cols);
    Eigen::Map<MatR<S>> GW(grad_w.data(), rows, cols);
    GW.noalias() += G * I.transpose();
    Eigen::Map<VecE<S>> GB(grad_b.data(), rows);
    GB.noalias() += G;
    std::vector<S> grad_in(cols);
    Eigen::Map<const MatR<S>> W(w.value.data(), rows, cols);
    Eigen::Map<VecE<S>> GI(grad_in.data(), cols);
    GI.noalias() = W.transpose() * G;
    return grad_in;
}

template <typename S>
void silu_vec_inplace(std::vector<S>& v) {
    for (auto& x : v) {
        const double d = static_cast<double>(x);
        x = static_cast<S>(d / (1.0 + std::exp(-d)));
    }
}

template <typename S>
void silu_vec_backward_inplace(const std::vector<S>& pre, std::vector<S>& grad) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double v = static_cast<double>(pre[i]);
        const double s = 1.0 / (1.0 + std::exp(-v));
        grad[i] = static_cast<S>(static_cast<double>(grad[i]) * s * (1.0 + v * (1.0 - s)));
    }
}

template <typename S>
void check_finite(const TensorT<S>& x, const char* layer) {
    for (const auto& v : x.data)
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite activations in ") + layer);
}

} // namespace

template <typename S>
UNetT<S>::UNetT(const UNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::uint32_t C = cfg.in_channels;
    const std::uint32_t c1 = cfg.base_channels, c2 = 2 * c1, c3 = 4 * c1;
    const std::uint32_t E = cfg.emb_dim, SD = cfg.sin_dim;
    auto add = [&](const char* name, std::vector<std::uint32_t> shape) {
        ParamT<S> p;
        p.name = name;
        p.shape = std::move(shape);
        std::size_t n = 1;
        for (auto d : p.shape) n *= d;
        p.value.assign(n, S(0));
        params_.push_back(std::move(p));
    };
    add("conv_in.w", {c1, 3, 3, C});
    add("conv_in.b", {c1});
    add("down1a.w", {c2, 3, 3, c1});
    add("down1a.b", {c2});
    add("down1b.w", {c2, 3, 3, c2});
    add("down1b.b", {c2});
    add("down2a.w", {c3, 3, 3, c2});
    add("down2a.b", {c3});
    add("down2b.w", {c3, 3, 3, c3});
    add("down2b.b", {c3});
    add("mida.w", {c3, 3, 3, c3});
    add("mida.b", {c3});
    add("midb.w", {c3, 3, 3, c3});
    add("midb.b", {c3});
    add("up2a.w", {c2, 3, 3, 2 * c3});
    add("up2a.b", {c2});
    add("up2b.w", {c2, 3, 3, c2});
    add("up2b.b", {c2});
    add("up1a.w", {c1, 3, 3, 2 * c2});
    add("up1a.b", {c1});
    add("up1b.w", {c1, 3, 3, c1});
    add("up1b.b", {c1});
    add("conv_out.w", {C, 3, 3, c1});
    add("conv_out.b", {C});
    add("temb1.w", {E, SD});
    add("temb1.b", {E});
    add("temb2.w", {E, E});
    add("temb2.b", {E});
    add("dtemb1.w", {E, SD});
    add("dtemb1.b", {E});
    add("dtemb2.w", {E, E});
    add("dtemb2.b", {E});
    add("proj_down1.w", {c2, E});
    add("proj_down2.w", {c3, E});
    add("proj_mid.w", {c3, E});
    add("proj_up2.w", {c2, E});
    add("proj_up1.w", {c1, E});
    if (params_.size() != kParamCount) throw NumericError("parameter registry size mismatch");
}

template <typename S>
std::size_t UNetT<S>::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

template <typename S>
void UNetT<S>::init_weights(std::uint64_t seed) {
    Rng rng(mix_seed(seed, stream::init));
    auto fill = [&](ParamT<S>& p, double std_dev) {
        for (auto& v : p.value) v = static_cast<S>(rng.normal() * std_dev);
    };
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ParamT<S>& p = params_[i];
        std::fill(p.value.begin(), p.value.end(), S(0));
        if (i == kOutW || i == kOutB) continue;  // zero-initialized output conv
        if (p.shape.size() == 4) {
            const double fan_in = 9.0 * p.shape[3];
            fill(p, std::sqrt(2.0 / fan_in));
        } else if (p.shape.size() == 2) {
            const bool is_proj = (i >= kProjD1);
            const double fan_in = p.shape[1];
            fill(p, is_proj ? 1.0 / std::sqrt(fan_in) : std::sqrt(2.0 / fan_in));
        }
        // rank-1 bias tensors stay zero and consume no draws
    }
}

template <typename S>
void UNetT<S>::zero_dt_branch() {
    for (std::size_t i : {static_cast<std::size_t>(kDtemb1W), static_cast<std::size_t>(kDtemb1B),
                          static_cast<std::size_t>(kDtemb2W), static_cast<std::size_t>(kDtemb2B)})
        std::fill(params_[i].value.begin(), params_[i].value.end(), S(0));
}

template <typename S>
GradsT<S> UNetT<S>::make_grads() const {
    GradsT<S> g(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) g[i].assign(params_[i].numel(), S(0));
    return g;
}

template <typename S>
void UNetT<S>::zero_grads(GradsT<S>& grads) {
    for (auto& g : grads) std::fill(g.begin(), g.end(), S(0));
}

template <typename S>
std::array<std::vector<S>, 5> UNetT<S>::embed(int t, double dt_norm) const {
    UNetCacheT<S> cache;
    cache.enc_t = sinusoidal_encoding<S>(static_cast<double>(t), cfg_.sin_dim);
    cache.t1_pre = dense_forward(params_[kTemb1W], params_[kTemb1B], cache.enc_t);
    cache.t1_act = cache.t1_pre;
    silu_vec_inplace(cache.t1_act);
    std::vector<S> temb = dense_forward(params_[kTemb2W], params_[kTemb2B], cache.t1_act);

    const double dt_clamped = std::clamp(dt_norm, -1.0, 1.0);
    cache.enc_dt = sinusoidal_encoding<S>(dt_clamped * 1000.0, cfg_.sin_dim);
    cache.dt1_pre = dense_forward(params_[kDtemb1W], params_[kDtemb1B], cache.enc_dt);
    cache.dt1_act = cache.dt1_pre;
    silu_vec_inplace(cache.dt1_act);
    std::vector<S> dtemb = dense_forward(params_[kDtemb2W], params_[kDtemb2B], cache.dt1_act);

    std::vector<S> emb(cfg_.emb_dim);
    for (std::uint32_t i = 0; i < cfg_.emb_dim; ++i) emb[i] = temb[i] + dtemb[i];

    std::array<std::vector<S>, 5> biases;
    const std::size_t projs[5] = {kProjD1, kProjD2, kProjMid, kProjU2, kProjU1};
    for (int b = 0; b < 5; ++b) {
        const ParamT<S>& P = params_[projs[b]];
        std::vector<S> out(P.shape[0]);
        Eigen::Map<const MatR<S>> W(P.value.data(), P.shape[0], P.shape[1]);
        Eigen::Map<const VecE<S>> V(emb.data(), P.shape[1]);
        Eigen::Map<VecE<S>> O(out.data(), P.shape[0]);
        O.noalias() = W * V;
        biases[static_cast<std::size_t>(b)] = std::move(out);
    }
    return biases;
}

template <typename S>
TensorT<S> UNetT<S>::forward_cached(const TensorT<S>& x, int t, double dt_norm,
                                    UNetCacheT<S>& cache) const {
    if (x.shape.size() != 3 || x.channels() != cfg_.in_channels)
        throw ShapeError("unet forward: expected " + std::to_string(cfg_.in_channels) +
                         " channels");
    if (x.height() % 4 != 0 || x.width() % 4 != 0)
        throw ShapeError("unet forward: spatial dims must be divisible by 4");

    // Embedding branch (also fills the embedding cache fields).
    cache.enc_t = sinusoidal_encoding<S>(static_cast<double>(t), cfg_.sin_dim);
    cache.t1_pre = dense_forward(params_[kTemb1W], params_[kTemb1B], cache.enc_t);
    cache.t1_act = cache.t1_pre;
    silu_vec_inplace(cache.t1_act);
    std::vector<S> temb = dense_forward(params_[kTemb2W], params_[kTemb2B], cache.t1_act);
    const double dt_clamped = std::clamp(dt_norm, -1.0, 1.0);
    cache.enc_dt = sinusoidal_encoding<S>(dt_clamped * 1000.0, cfg_.sin_dim);
    cache.dt1_pre = dense_forward(params_[kDtemb1W], params_[kDtemb1B], cache.enc_dt);
    cache.dt1_act = cache.dt1_pre;
    silu_vec_inplace(cache.dt1_act);
    std::vector<S> dtemb = dense_forward(params_[kDtemb2W], params_[kDtemb2B], cache.dt1_act);
    cache.emb.assign(cfg_.emb_dim, S(0));
    for (std::uint32_t i = 0; i < cfg_.emb_dim; ++i) cache.emb[i] = temb[i] + dtemb[i];

    auto proj_bias = [&](std::size_t pid) {
        const ParamT<S>& P = params_[pid];
        std::vector<S> out(P.shape[0]);
        Eigen::Map<const MatR<S>> W(P.value.data(), P.shape[0], P.shape[1]);
        Eigen::Map<const VecE<S>> V(cache.emb.data(), P.shape[1]);
        Eigen::Map<VecE<S>> O(out.data(), P.shape[0]);
        O.noalias() = W * V;
        return out;
    };
    const std::vector<S> bias_d1 = proj_bias(kProjD1), bias_d2 = proj_bias(kProjD2),
                         bias_mid = proj_bias(kProjMid), bias_u2 = proj_bias(kProjU2),
                         bias_u1 = proj_bias(kProjU1);

    cache.x = x;
    cache.x0 = conv_forward(x, params_[kConvInW], params_[kConvInB]);
    check_finite(cache.x0, "conv_in");

    cache.d1_pre_a = conv_forward(cache.x0, params_[kD1aW], params_[kD1aB], &bias_d1);
    cache.d1_act_a = cache.d1_pre_a;
    silu_inplace(cache.d1_act_a);
    cache.d1_pre_b = conv_forward(cache.d1_act_a, params_[kD1bW], params_[kD1bB]);
    cache.d1_act_b = cache.d1_pre_b;
    silu_inplace(cache.d1_act_b);
    check_finite(cache.d1_act_b, "down1");
    cache.p1 = avgpool(cache.d1_act_b, 2);

    cache.d2_pre_a = conv_forward(cache.p1, params_[kD2aW], params_[kD2aB], &bias_d2);
    cache.d2_act_a = cache.d2_pre_a;
    silu_inplace(cache.d2_act_a);
    cache.d2_pre_b = conv_forward(cache.d2_act_a, params_[kD2bW], params_[kD2bB]);
    cache.d2_act_b = cache.d2_pre_b;
    silu_inplace(cache.d2_act_b);
    check_finite(cache.d2_act_b, "down2");
    cache.p2 = avgpool(cache.d2_act_b, 2);

    cache.mid_pre_a = conv_forward(cache.p2, params_[kMidAW], params_[kMidAB], &bias_mid);
    cache.mid_act_a = cache.mid_pre_a;
    silu_inplace(cache.mid_act_a);
    cache.mid_pre_b = conv_forward(cache.mid_act_a, params_[kMidBW], params_[kMidBB]);
    cache.mid_act_b = cache.mid_pre_b;
    silu_inplace(cache.mid_act_b);
    check_finite(cache.mid_act_b, "mid");

    cache.cat2 = concat_channels(upsample_nearest(cache.mid_act_b, 2), cache.d2_act_b);
    cache.u2_pre_a = conv_forward(cache.cat2, params_[kU2aW], params_[kU2aB], &bias_u2);
    cache.u2_act_a = cache.u2_pre_a;
    silu_inplace(cache.u2_act_a);
    cache.u2_pre_b = conv_forward(cache.u2_act_a, params_[kU2bW], params_[kU2bB]);
    cache.u2_act_b = cache.u2_pre_b;
    silu_inplace(cache.u2_act_b);
    check_finite(cache.u2_act_b, "up2");

    cache.cat1 = concat_channels(upsample_nearest(cache.u2_act_b, 2), cache.d1_act_b);
    cache.u1_pre_a = conv_forward(cache.cat1, params_[kU1aW], params_[kU1aB], &bias_u1);
    cache.u1_act_a = cache.u1_pre_a;
    silu_inplace(cache.u1_act_a);
    cache.u1_pre_b = conv_forward(cache.u1_act_a, params_[kU1bW], params_[kU1bB]);
    cache.u1_act_b = cache.u1_pre_b;
    silu_inplace(cache.u1_act_b);
    check_finite(cache.u1_act_b, "up1");

    TensorT<S> out = conv_forward(cache.u1_act_b, params_[kOutW], params_[kOutB]);
    check_finite(out, "conv_out");
    return out;
}

template <typename S>
TensorT<S> UNetT<S>::forward(const TensorT<S>& x, int t, double dt_norm) const {
    UNetCacheT<S> cache;
    return forward_cached(x, t, dt_norm, cache);
}

template <typename S>
void UNetT<S>::backward(const UNetCacheT<S>& cache, const TensorT<S>& grad_out,
                        GradsT<S>& grads) const {
    // conv_out
    TensorT<S> g = conv_backward(cache.u1_act_b, params_[kOutW], grad_out, grads[kOutW],
                                 grads[kOutB]);
    // up1 block
    silu_backward_inplace(cache.u1_pre_b, g);
    g = conv_backward(cache.u1_act_a, params_[kU1bW], g, grads[kU1bW], grads[kU1bB]);
    silu_backward_inplace(cache.u1_pre_a, g);
    const std::vector<S> gbias_u1 = channel_sums(g);
    g = conv_backward(cache.cat1, params_[kU1aW], g, grads[kU1aW], grads[kU1aB]);
    TensorT<S> g_up1, g_s1;
    split_channels(g, 2 * cfg_.base_channels, g_up1, g_s1);
    g = upsample_nearest2_backward(g_up1);

    // up2 block
    silu_backward_inplace(cache.u2_pre_b, g);
    g = conv_backward(cache.u2_act_a, params_[kU2bW], g, grads[kU2bW], grads[kU2bB]);
    silu_backward_inplace(cache.u2_pre_a, g);
    const std::vector<S> gbias_u2 = channel_sums(g);
    g = conv_backward(cache.cat2, params_[kU2aW], g, grads[kU2aW], grads[kU2aB]);
    TensorT<S> g_up2, g_s2;
    split_channels(g, 4 * cfg_.base_channels, g_up2, g_s2);
    g = upsample_nearest2_backward(g_up2);

    // mid block
    silu_backward_inplace(cache.mid_pre_b, g);
    g = conv_backward(cache.mid_act_a, params_[kMidBW], g, grads[kMidBW], grads[kMidBB]);
    silu_backward_inplace(cache.mid_pre_a, g);
    const std::vector<S> gbias_mid = channel_sums(g);
    g = conv_backward(cache.p2, params_[kMidAW], g, grads[kMidAW], grads[kMidAB]);

    // pool2 -> down2
    g = avgpool2_backward(g);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += g_s2.data[i];
    silu_backward_inplace(cache.d2_pre_b, g);
    g = conv_backward(cache.d2_act_a, params_[kD2bW], g, grads[kD2bW], grads[kD2bB]);
    silu_backward_inplace(cache.d2_pre_a, g);
    const std::vector<S> gbias_d2 = channel_sums(g);
    g = conv_backward(cache.p1, params_[kD2aW], g, grads[kD2aW], grads[kD2aB]);

    // pool1 -> down1
    g = avgpool2_backward(g);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += g_s1.data[i];
    silu_backward_inplace(cache.d1_pre_b, g);
    g = conv_backward(cache.d1_act_a, params_[kD1bW], g, grads[kD1bW], grads[kD1bB]);
    silu_backward_inplace(cache.d1_pre_a, g);
    const std::vector<S> gbias_d1 = channel_sums(g);
    g = conv_backward(cache.x0, params_[kD1aW], g, grads[kD1aW], grads[kD1aB]);

    // conv_in (no grad wrt network input needed)
    conv_backward(cache.x, params_[kConvInW], g, grads[kConvInW], grads[kConvInB],
                  /*need_input_grad=*/false);

    // Embedding chain: per-block biases -> projections -> shared emb -> MLPs.
    std::vector<S> grad_emb(cfg_.emb_dim, S(0));
    const std::size_t projs[5] = {kProjD1, kProjD2, kProjMid, kProjU2, kProjU1};
    const std::vector<S>* gbias[5] = {&gbias_d1, &gbias_d2, &gbias_mid, &gbias_u2, &gbias_u1};
    for (int b = 0; b < 5; ++b) {
        const ParamT<S>& P = params_[projs[b]];
        const std::uint32_t rows = P.shape[0], cols = P.shape[1];
        Eigen::Map<const VecE<S>> GB(gbias[b]->data(), rows);
        Eigen::Map<const VecE<S>> EMB(cache.emb.data(), cols);
        Eigen::Map<MatR<S>> GP(grads[projs[b]].data(), rows, cols);
        GP.noalias() += GB * EMB.transpose();
        Eigen::Map<const MatR<S>> W(P.value.data(), rows, cols);
        Eigen::Map<VecE<S>> GE(grad_emb.data(), cols);
        GE.noalias() += W.transpose() * GB;
    }
    // emb = temb + dtemb: the gradient flows into both branches unchanged.
    std::vector<S> gt =
        dense_backward(params_[kTemb2W], cache.t1_act, grad_emb, grads[kTemb2W], grads[kTemb2B]);
    silu_vec_backward_inplace(cache.t1_pre, gt);
    dense_backward(params_[kTemb1W], cache.enc_t, gt, grads[kTemb1W], grads[kTemb1B]);
    std::vector<S> gd = dense_backward(params_[kDtemb2W], cache.dt1_act, grad_emb,
                                       grads[kDtemb2W], grads[kDtemb2B]);
    silu_vec_backward_inplace(cache.dt1_pre, gd);
    dense_backward(params_[kDtemb1W], cache.enc_dt, gd, grads[kDtemb1W], grads[kDtemb1B]);
}

template class UNetT<float>;
template class UNetT<double>;

} // namespace satfuse
