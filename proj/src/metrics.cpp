#include "satfuse/metrics.hpp"

#include <algorithm>

#include "satfuse/image.hpp"

namespace satfuse {

double psnr(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("psnr: shape mismatch");
    if (a.data.empty()) throw ShapeError("psnr: empty image");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.data.size());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("ssim: shape mismatch");
    if (a.shape.size() != 3) throw ShapeError("ssim expects (H,W,C)");
    constexpr int W = 11;
    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
    const int h = static_cast<int>(a.height()), w = static_cast<int>(a.width());
    const int c = static_cast<int>(a.channels());
    if (h < W || w < W)
        throw ShapeError("ssim: image smaller than the 11x11 window, got " + std::to_string(h) +
                         "x" + std::to_string(w));

    // 11x11 Gaussian window, sigma 1.5, normalized.
    double win[W * W];
    double norm = 0.0;
    for (int y = 0; y < W; ++y)
        for (int x = 0; x < W; ++x) {
            const double dy = y - (W - 1) / 2.0, dx = x - (W - 1) / 2.0;
            win[y * W + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
            norm += win[y * W + x];
        }
    for (auto& v : win) v /= norm;

    double total = 0.0;
    std::size_t count = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int y0 = 0; y0 + W <= h; ++y0)
            for (int x0 = 0; x0 + W <= w; ++x0) {
                double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                for (int y = 0; y < W; ++y)
                    for (int x = 0; x < W; ++x) {
                        const double g = win[y * W + x];
                        const double va = a.at(static_cast<std::uint32_t>(y0 + y),
                                               static_cast<std::uint32_t>(x0 + x),
                                               static_cast<std::uint32_t>(ch));
                        const double vb = b.at(static_cast<std::uint32_t>(y0 + y),
                                               static_cast<std::uint32_t>(x0 + x),
                                               static_cast<std::uint32_t>(ch));
                        ma += g * va;
                        mb += g * vb;
                        maa += g * va * va;
                        mbb += g * vb * vb;
                        mab += g * va * vb;
                    }
                const double va = maa - ma * ma, vb = mbb - mb * mb, cov = mab - ma * mb;
                const double num = (2 * ma * mb + kC1) * (2 * cov + kC2);
                const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
                total += num / den;
                ++count;
            }
    return total / static_cast<double>(count);
}

namespace {

template <typename S>
TensorT<S> conv3x3(const TensorT<S>& in, const std::vector<S>& w, int cout) {
    const int h = static_cast<int>(in.height()), wd = static_cast<int>(in.width());
    const int cin = static_cast<int>(in.channels());
    TensorT<S> out({in.height(), in.width(), static_cast<std::uint32_t>(cout)});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x)
            for (int o = 0; o < cout; ++o) {
                double acc = 0.0;
                for (int ky = 0; ky < 3; ++ky) {
                    const int yy = y + ky - 1;
                    if (yy < 0 || yy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xx = x + kx - 1;
                        if (xx < 0 || xx >= wd) continue;
                        const S* wp = &w[static_cast<std::size_t>(((o * 3 + ky) * 3 + kx)) *
                                         static_cast<std::size_t>(cin)];
                        const S* ip = &in.data[(static_cast<std::size_t>(yy) * wd + xx) * cin];
                        for (int i = 0; i < cin; ++i) acc += static_cast<double>(wp[i]) * ip[i];
                    }
                }
                out.at(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x),
                       static_cast<std::uint32_t>(o)) = static_cast<S>(acc);
            }
    return out;
}

template <typename S>
TensorT<S> conv3x3_input_grad(const TensorT<S>& grad_out, const std::vector<S>& w, int cin) {
    const int h = static_cast<int>(grad_out.height()), wd = static_cast<int>(grad_out.width());
    const int cout = static_cast<int>(grad_out.channels());
    TensorT<S> grad_in({grad_out.height(), grad_out.width(), static_cast<std::uint32_t>(cin)});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x)
            for (int o = 0; o < cout; ++o) {
                const double g = grad_out.at(static_cast<std::uint32_t>(y),
                                             static_cast<std::uint32_t>(x),
                                             static_cast<std::uint32_t>(o));
                if (g == 0.0) continue;
                for (int ky = 0; ky < 3; ++ky) {
                    const int yy = y + ky - 1;
                    if (yy < 0 || yy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xx = x + kx - 1;
                        if (xx < 0 || xx >= wd) continue;
                        const S* wp = &w[static_cast<std::size_t>(((o * 3 + ky) * 3 + kx)) *
                                         static_cast<std::size_t>(cin)];
                        S* gp = &grad_in.data[(static_cast<std::size_t>(yy) * wd + xx) * cin];
                        for (int i = 0; i < cin; ++i)
                            gp[i] = static_cast<S>(gp[i] + g * static_cast<double>(wp[i]));
                    }
                }
            }
    return grad_in;
}

template <typename S>
TensorT<S> silu(const TensorT<S>& x) {
    TensorT<S> out = x;
    for (auto& v : out.data) {
        const double d = static_cast<double>(v);
        v = static_cast<S>(d / (1.0 + std::exp(-d)));
    }
    return out;
}

template <typename S>
TensorT<S> silu_grad(const TensorT<S>& pre, const TensorT<S>& grad_out) {
    TensorT<S> g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        const double v = static_cast<double>(pre.data[i]);
        const double s = 1.0 / (1.0 + std::exp(-v));
        g.data[i] = static_cast<S>(static_cast<double>(grad_out.data[i]) * s * (1.0 + v * (1.0 - s)));
    }
    return g;
}

template <typename S>
TensorT<S> avgpool2_grad(const TensorT<S>& grad_out, std::uint32_t h, std::uint32_t w) {
    TensorT<S> g({h, w, grad_out.channels()});
    for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x)
            for (std::uint32_t c = 0; c < g.channels(); ++c)
                g.at(y, x, c) = static_cast<S>(grad_out.at(y / 2, x / 2, c) * 0.25);
    return g;
}

// Per-pixel unit-l2 channel normalization, n = v / (|v| + 1e-8).
template <typename S>
TensorT<S> channel_norm(const TensorT<S>& f) {
    constexpr double kEps = 1e-8;
    TensorT<S> out = f;
    const std::uint32_t c = f.channels();
    const std::size_t pixels = f.data.size() / c;
    for (std::size_t p = 0; p < pixels; ++p) {
        double r2 = 0.0;
        for (std::uint32_t i = 0; i < c; ++i) {
            const double v = f.data[p * c + i];
            r2 += v * v;
        }
        const double inv = 1.0 / (std::sqrt(r2) + kEps);
        for (std::uint32_t i = 0; i < c; ++i)
            out.data[p * c + i] = static_cast<S>(f.data[p * c + i] * inv);
    }
    return out;
}

template <typename S>
TensorT<S> channel_norm_grad(const TensorT<S>& f, const TensorT<S>& grad_n) {
    constexpr double kEps = 1e-8;
    TensorT<S> g = f;
    const std::uint32_t c = f.channels();
    const std::size_t pixels = f.data.size() / c;
    for (std::size_t p = 0; p < pixels; ++p) {
        double r2 = 0.0, dot = 0.0;
        for (std::uint32_t i = 0; i < c; ++i) {
            const double v = f.data[p * c + i];
            r2 += v * v;
            dot += static_cast<double>(grad_n.data[p * c + i]) * v;
        }
        const double r = std::sqrt(r2);
        const double inv = 1.0 / (r + kEps);
        for (std::uint32_t i = 0; i < c; ++i) {
            double gi = static_cast<double>(grad_n.data[p * c + i]) * inv;
            if (r > 0.0) gi -= dot * static_cast<double>(f.data[p * c + i]) / (r * (r + kEps) * (r + kEps));
            g.data[p * c + i] = static_cast<S>(gi);
        }
    }
    return g;
}

} // namespace

template <typename S>
FeatureExtractorT<S>::FeatureExtractorT(std::uint64_t seed) {
    Rng rng(seed);
    for (int s = 0; s < kStages; ++s) {
        const int cin = kChannels[s], cout = kChannels[s + 1];
        const double std_dev = std::sqrt(2.0 / (9.0 * cin));
        auto& w = w_[static_cast<std::size_t>(s)];
        w.resize(static_cast<std::size_t>(cout) * 9 * static_cast<std::size_t>(cin));
        for (auto& v : w) v = static_cast<S>(rng.normal() * std_dev);
    }
}

template <typename S>
const FeatureExtractorT<S>& FeatureExtractorT<S>::instance() {
    static const FeatureExtractorT<S> ext(kSeed);
    return ext;
}

template <typename S>
std::array<TensorT<S>, FeatureExtractorT<S>::kStages> FeatureExtractorT<S>::features(
    const TensorT<S>& img) const {
    if (img.shape.size() != 3 || img.channels() != 3)
        throw ShapeError("feature extractor expects a (H,W,3) image");
    std::array<TensorT<S>, kStages> out;
    TensorT<S> x = img;
    for (int s = 0; s < kStages; ++s) {
        if (s > 0) x = avgpool(x, 2);
        out[static_cast<std::size_t>(s)] =
            silu(conv3x3(x, w_[static_cast<std::size_t>(s)], kChannels[s + 1]));
        x = out[static_cast<std::size_t>(s)];
    }
    return out;
}

template <typename S>
double FeatureExtractorT<S>::proxy(const TensorT<S>& a, const TensorT<S>& b) const {
    if (!a.same_shape(b)) throw ShapeError("perceptual proxy: shape mismatch");
    auto fa = features(a), fb = features(b);
    double total = 0.0;
    for (int s = 0; s < kStages; ++s) {
        const auto na = channel_norm(fa[static_cast<std::size_t>(s)]);
        const auto nb = channel_norm(fb[static_cast<std::size_t>(s)]);
        double acc = 0.0;
        for (std::size_t i = 0; i < na.data.size(); ++i) {
            const double d = static_cast<double>(na.data[i]) - nb.data[i];
            acc += d * d;
        }
        total += acc / static_cast<double>(na.data.size());
    }
    return total / kStages;
}

template <typename S>
std::pair<double, TensorT<S>> FeatureExtractorT<S>::proxy_vjp(const TensorT<S>& a,
                                                              const TensorT<S>& b) const {
    if (!a.same_shape(b)) throw ShapeError("perceptual proxy: shape mismatch");
    // Forward with caches for the a-branch.
    std::array<TensorT<S>, kStages> pre, act, pool_in;
    TensorT<S> x = a;
    for (int s = 0; s < kStages; ++s) {
        pool_in[static_cast<std::size_t>(s)] = x;  // input to this stage (pre-pool for s>0)
        if (s > 0) x = avgpool(x, 2);
        pre[static_cast<std::size_t>(s)] =
            conv3x3(x, w_[static_cast<std::size_t>(s)], kChannels[s + 1]);
        act[static_cast<std::size_t>(s)] = silu(pre[static_cast<std::size_t>(s)]);
        x = act[static_cast<std::size_t>(s)];
    }
    auto fb = features(b);

    double total = 0.0;
    std::array<TensorT<S>, kStages> grad_act;
    for (int s = 0; s < kStages; ++s) {
        const auto& fa = act[static_cast<std::size_t>(s)];
        const auto na = channel_norm(fa);
        const auto nb = channel_norm(fb[static_cast<std::size_t>(s)]);
        TensorT<S> grad_n = na;
        double acc = 0.0;
        const double scale = 2.0 / (static_cast<double>(na.data.size()) * kStages);
        for (std::size_t i = 0; i < na.data.size(); ++i) {
            const double d = static_cast<double>(na.data[i]) - nb.data[i];
            acc += d * d;
            grad_n.data[i] = static_cast<S>(d * scale);
        }
        total += acc / static_cast<double>(na.data.size());
        grad_act[static_cast<std::size_t>(s)] = channel_norm_grad(fa, grad_n);
    }

    // Backward through the chain, merging the per-stage taps.
    TensorT<S> g;  // gradient flowing into the current stage's activation
    for (int s = kStages - 1; s >= 0; --s) {
        if (s == kStages - 1) {
            g = grad_act[static_cast<std::size_t>(s)];
        } else {
            for (std::size_t i = 0; i < g.data.size(); ++i)
                g.data[i] = static_cast<S>(g.data[i] + grad_act[static_cast<std::size_t>(s)].data[i]);
        }
        g = silu_grad(pre[static_cast<std::size_t>(s)], g);
        g = conv3x3_input_grad(g, w_[static_cast<std::size_t>(s)], kChannels[s]);
        if (s > 0)
            g = avgpool2_grad(g, pool_in[static_cast<std::size_t>(s)].height(),
                              pool_in[static_cast<std::size_t>(s)].width());
    }
    return {total / kStages, std::move(g)};
}

double feature_moment_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.empty() || b.empty()) throw ConfigError("feature_moment_distance needs nonempty sets");
    const auto& ext = FeatureExtractor::instance();
    constexpr int C = 64;
    auto moments = [&](const std::vector<Tensor>& set, std::vector<double>& mean,
                       std::vector<double>& cov) {
        mean.assign(C, 0.0);
        cov.assign(C * C, 0.0);
        std::size_t n = 0;
        for (const auto& img : set) {
            const auto f = ext.features(img)[2];
            const std::size_t pixels = f.data.size() / C;
            for (std::size_t p = 0; p < pixels; ++p, ++n)
                for (int i = 0; i < C; ++i) mean[static_cast<std::size_t>(i)] += f.data[p * C + i];
        }
        for (auto& m : mean) m /= static_cast<double>(n);
        for (const auto& img : set) {
            const auto f = ext.features(img)[2];
            const std::size_t pixels = f.data.size() / C;
            for (std::size_t p = 0; p < pixels; ++p)
                for (int i = 0; i < C; ++i) {
                    const double di = f.data[p * C + i] - mean[static_cast<std::size_t>(i)];
                    for (int j = 0; j < C; ++j) {
                        const double dj = f.data[p * C + j] - mean[static_cast<std::size_t>(j)];
                        cov[static_cast<std::size_t>(i * C + j)] += di * dj;
                    }
                }
        }
        for (auto& v : cov) v /= static_cast<double>(n);
    };
    std::vector<double> ma, ca, mb, cb;
    moments(a, ma, ca);
    moments(b, mb, cb);
    double mean_d2 = 0.0, cov_f2 = 0.0;
    for (int i = 0; i < C; ++i) {
        const double d = ma[static_cast<std::size_t>(i)] - mb[static_cast<std::size_t>(i)];
        mean_d2 += d * d;
    }
    for (std::size_t i = 0; i < ca.size(); ++i) {
        const double d = ca[i] - cb[i];
        cov_f2 += d * d;
    }
    return mean_d2 + std::sqrt(cov_f2);
}

template class FeatureExtractorT<float>;
template class FeatureExtractorT<double>;

} // namespace satfuse
