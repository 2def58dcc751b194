#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "satfuse/image.hpp"
#include "satfuse/metrics.hpp"
#include "satfuse/rng.hpp"
#include "satfuse/synthdata.hpp"

using namespace satfuse;

namespace {
Tensor random01(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint64_t seed) {
    Tensor t = Tensor::hwc(h, w, c);
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    return t;
}
} // namespace

TEST_CASE("psnr basics") {
    Tensor a = random01(16, 16, 3, 1);
    CHECK(psnr(a, a) == 100.0);
    Tensor b = a;
    for (auto& v : b.data) v += 0.1f;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-4));
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-12));
    Tensor c = Tensor::hwc(8, 8, 3);
    CHECK_THROWS_AS(psnr(a, c), ShapeError);
}

TEST_CASE("ssim basics") {
    Tensor a = random01(20, 20, 3, 2);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
    Tensor b = random01(20, 20, 3, 3);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-9));
    CHECK(ssim(a, b) <= 1.0);
    CHECK(ssim(a, b) >= -1.0);
    CHECK_THROWS_AS(ssim(a, Tensor::hwc(20, 20, 1)), ShapeError);
    Tensor tiny = Tensor::hwc(8, 8, 3);
    CHECK_THROWS_AS(ssim(tiny, tiny), ShapeError);
}

TEST_CASE("ssim of a checkerboard against its inverse is negative") {
    Tensor a = Tensor::hwc(16, 16, 1);
    for (std::uint32_t y = 0; y < 16; ++y)
        for (std::uint32_t x = 0; x < 16; ++x) a.at(y, x, 0) = static_cast<float>((x + y) % 2);
    Tensor b = a;
    for (auto& v : b.data) v = 1.0f - v;
    CHECK(ssim(a, b) < 0.0);
}

TEST_CASE("extractor weights are reproducible and follow the documented order") {
    const auto& ext = FeatureExtractor::instance();
    FeatureExtractor fresh(FeatureExtractor::kSeed);
    for (int s = 0; s < 3; ++s) CHECK(ext.stage_weights(s) == fresh.stage_weights(s));
    // First weight = first normal draw scaled by sqrt(2 / (9*3)).
    Rng rng(FeatureExtractor::kSeed);
    CHECK(ext.stage_weights(0)[0] ==
          static_cast<float>(rng.normal() * std::sqrt(2.0 / 27.0)));
    CHECK(ext.stage_weights(0).size() == 16u * 9u * 3u);
    CHECK(ext.stage_weights(1).size() == 32u * 9u * 16u);
    CHECK(ext.stage_weights(2).size() == 64u * 9u * 32u);
}

TEST_CASE("perceptual proxy identity, symmetry, nonnegativity") {
    Tensor a = random01(16, 16, 3, 4);
    Tensor b = random01(16, 16, 3, 5);
    CHECK(perceptual_proxy(a, a) == 0.0);
    CHECK(perceptual_proxy(a, b) > 0.0);
    CHECK(perceptual_proxy(a, b) == doctest::Approx(perceptual_proxy(b, a)).epsilon(1e-9));
}

TEST_CASE("proxy distinguishes blur from pixel shuffling") {
    SceneConfig cfg;
    cfg.hr_size = 32;
    cfg.seed = 99;
    int wins = 0;
    for (std::uint32_t i = 0; i < 20; ++i) {
        Scene s = generate_scene(cfg, i);
        Tensor blurred = gaussian_blur(s.hr, 1.5);
        Tensor shuffled = s.hr;
        Rng rng(mix_seed(7, i));
        const std::size_t pixels = 32 * 32;
        for (std::size_t p = pixels - 1; p > 0; --p) {
            const std::size_t q = rng.index(p + 1);
            for (std::uint32_t c = 0; c < 3; ++c)
                std::swap(shuffled.data[p * 3 + c], shuffled.data[q * 3 + c]);
        }
        if (perceptual_proxy(s.hr, blurred) < perceptual_proxy(s.hr, shuffled)) ++wins;
    }
    CHECK(wins >= 16);  // >= 80% of 20
}

TEST_CASE("proxy gradient matches central finite differences") {
    TensorD a = TensorD::hwc(8, 8, 3);
    TensorD b = a;
    Rng rng(314);
    for (auto& v : a.data) v = rng.uniform();
    for (auto& v : b.data) v = rng.uniform();
    const auto& ext = FeatureExtractorT<double>::instance();
    auto [value, grad] = ext.proxy_vjp(a, b);
    CHECK(value == doctest::Approx(ext.proxy(a, b)).epsilon(1e-12));

    const double h = 1e-3;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        TensorD ap = a, am = a;
        ap.data[i] += h;
        am.data[i] -= h;
        const double fd = (ext.proxy(ap, b) - ext.proxy(am, b)) / (2.0 * h);
        const double rel = std::abs(grad.data[i] - fd) /
                           std::max({std::abs(fd), std::abs(grad.data[i]), 1e-4});
        max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel <= 1e-3);
}

TEST_CASE("feature moment distance separates distributions") {
    std::vector<Tensor> a, b, c;
    for (int i = 0; i < 4; ++i) {
        a.push_back(random01(16, 16, 3, 100 + static_cast<std::uint64_t>(i)));
        b.push_back(a.back());
        Tensor dark = a.back();
        for (auto& v : dark.data) v *= 0.2f;
        c.push_back(dark);
    }
    CHECK(feature_moment_distance(a, b) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(feature_moment_distance(a, c) > 0.0);
    CHECK_THROWS_AS(feature_moment_distance({}, a), ConfigError);
}
