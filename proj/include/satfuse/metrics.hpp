#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "satfuse/common.hpp"
#include "satfuse/rng.hpp"
#include "satfuse/tensor.hpp"

namespace satfuse {

// 10*log10(1/MSE), capped at 100 dB (returned for MSE = 0 too).
double psnr(const Tensor& a, const Tensor& b);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), valid-mode windows,
// C1 = 0.01^2, C2 = 0.03^2, averaged per channel then across channels.
double ssim(const Tensor& a, const Tensor& b);

// Fixed random conv pyramid standing in for a learned perceptual metric.
// Three 3x3 stages 3->16->32->64 with SiLU and 2x average pooling between
// stages. Weights ~ N(0, 2/fan_in) drawn once from Rng(seed), no biases;
// draw order: stage by stage, (out, ky, kx, in) row-major.
template <typename S>
class FeatureExtractorT {
public:
    static constexpr std::uint64_t kSeed = 1234;
    static constexpr int kStages = 3;

    // Shared fixed-weight instance (seed 1234).
    static const FeatureExtractorT& instance();

    explicit FeatureExtractorT(std::uint64_t seed);

    // Post-activation features of all 3 stages.
    std::array<TensorT<S>, kStages> features(const TensorT<S>& img) const;

    const std::vector<S>& stage_weights(int s) const { return w_[static_cast<std::size_t>(s)]; }

    // proxy(a, b): stage-wise channel-normalized feature MSE, averaged.
    double proxy(const TensorT<S>& a, const TensorT<S>& b) const;

    // Same value plus d proxy / d a.
    std::pair<double, TensorT<S>> proxy_vjp(const TensorT<S>& a, const TensorT<S>& b) const;

private:
    static constexpr int kChannels[kStages + 1] = {3, 16, 32, 64};
    std::array<std::vector<S>, kStages> w_;
};

using FeatureExtractor = FeatureExtractorT<float>;

template <typename S>
double perceptual_proxy(const TensorT<S>& a, const TensorT<S>& b) {
    return FeatureExtractorT<S>::instance().proxy(a, b);
}

// Simplified moment distance between two image sets: squared distance of
// stage-3 feature means plus Frobenius distance of feature covariances.
// A realism indicator only; NOT comparable to FID values.
double feature_moment_distance(const std::vector<Tensor>& a, const std::vector<Tensor>& b);

} // namespace satfuse
