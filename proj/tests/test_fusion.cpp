#include <cmath>
#include <string>

#include "doctest.h"
#include "satfuse/codec.hpp"
#include "satfuse/fusion.hpp"
#include "satfuse/metrics.hpp"

using namespace satfuse;

namespace {

Tensor random_latent(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::uint64_t seed) {
    Tensor t = Tensor::hwc(h, w, c);
    Rng rng(seed);
    rng.fill_normal(t.data.data(), t.data.size());
    return t;
}

Tensor constant_latent(std::uint32_t h, std::uint32_t w, std::uint32_t c, float v) {
    Tensor t = Tensor::hwc(h, w, c);
    for (auto& e : t.data) e = v;
    return t;
}

// Small trained model shared by the sampling tests.
Checkpoint tiny_checkpoint(std::uint32_t iterations = 2) {
    SceneConfig sc;
    sc.hr_size = 16;
    sc.lr_factor = 4;
    sc.n_lr = 6;
    sc.seed = 31;
    std::vector<Scene> data{generate_scene(sc, 0), generate_scene(sc, 1)};
    TrainConfig tc;
    tc.net.base_channels = 2;
    tc.net.emb_dim = 8;
    tc.net.sin_dim = 8;
    tc.iterations = iterations;
    tc.batch_size = 2;
    tc.seed = 13;
    return train(data, sc, tc);
}

Scene test_scene() {
    SceneConfig sc;
    sc.hr_size = 16;
    sc.lr_factor = 4;
    sc.n_lr = 6;
    sc.seed = 31;
    return generate_scene(sc, 2);
}

double quadratic_grad_norm(const Tensor& c, const std::vector<Tensor>& pts) {
    double sq = 0.0;
    const double n_inv = 1.0 / static_cast<double>(c.numel());
    for (std::size_t e = 0; e < c.data.size(); ++e) {
        double g = 0.0;
        for (const Tensor& p : pts)
            g += 2.0 * (static_cast<double>(c.data[e]) - static_cast<double>(p.data[e])) * n_inv;
        sq += g * g;
    }
    return std::sqrt(sq);
}

} // namespace

TEST_CASE("distance basics") {
    Tensor x = random_latent(8, 8, 12, 1);
    Tensor y = random_latent(8, 8, 12, 2);

    CHECK(distance(x, x, 0.2) == 0.0);
    CHECK(distance(x, x, 0.0) == 0.0);

    // alpha = 0: pure mean squared latent difference.
    Tensor a = constant_latent(8, 8, 12, 0.3f), b = constant_latent(8, 8, 12, 0.7f);
    CHECK(distance(a, b, 0.0) == doctest::Approx(0.16).epsilon(1e-6));

    // alpha = 1: pure perceptual term on decoded images.
    CHECK(distance(x, y, 1.0) ==
          doctest::Approx(perceptual_proxy(decode(x), decode(y))).epsilon(1e-9));

    // convex combination in between
    double d0 = distance(x, y, 0.0), d1 = distance(x, y, 1.0);
    CHECK(distance(x, y, 0.25) == doctest::Approx(0.75 * d0 + 0.25 * d1).epsilon(1e-6));

    for (std::uint64_t s = 0; s < 5; ++s) {
        Tensor u = random_latent(8, 8, 12, 100 + s), v = random_latent(8, 8, 12, 200 + s);
        CHECK(std::abs(distance(u, v, 0.5) - distance(v, u, 0.5)) <= 1e-6);
    }

    CHECK_THROWS_AS(distance(x, random_latent(8, 6, 12, 3), 0.2), ShapeError);
    CHECK_THROWS_AS(distance(x, y, 1.5), ConfigError);
}

TEST_CASE("find_center") {
    SUBCASE("singleton returns the point unchanged") {
        Tensor v = random_latent(8, 8, 12, 4);
        Tensor c = find_center({v}, 0.2);
        CHECK(c.data == v.data);
    }

    SUBCASE("antipodal pair has center zero") {
        Tensor v = random_latent(8, 8, 12, 5);
        Tensor neg = v;
        for (auto& e : neg.data) e = -e;
        Tensor c = find_center({v, neg}, 0.0);
        for (float e : c.data) CHECK(e == 0.0f);
    }

    SUBCASE("alpha = 0 returns the elementwise mean") {
        std::vector<Tensor> pts;
        for (std::uint64_t s = 0; s < 4; ++s) pts.push_back(random_latent(8, 8, 12, 10 + s));
        Tensor c = find_center(pts, 0.0);
        for (std::size_t e = 0; e < c.data.size(); ++e) {
            double mean = 0.0;
            for (const Tensor& p : pts) mean += p.data[e];
            mean /= static_cast<double>(pts.size());
            CHECK(c.data[e] == doctest::Approx(mean).epsilon(1e-4).scale(1.0));
        }
        CHECK(quadratic_grad_norm(c, pts) <= 1e-6);
    }

    SUBCASE("perceptual term never lets the objective rise above the mean init") {
        std::vector<Tensor> pts;
        for (std::uint64_t s = 0; s < 3; ++s) pts.push_back(random_latent(8, 8, 12, 20 + s));
        Tensor mean = find_center(pts, 0.0, 0);  // zero iterations: the init itself
        Tensor c = find_center(pts, 0.3);
        auto objective = [&](const Tensor& q) {
            double o = 0.0;
            for (const Tensor& p : pts) o += distance(q, p, 0.3);
            return o;
        };
        CHECK(objective(c) <= objective(mean) + 1e-9);
    }

    SUBCASE("input validation") {
        CHECK_THROWS_AS(find_center({}, 0.2), ConfigError);
        CHECK_THROWS_AS(find_center({random_latent(8, 8, 12, 1), random_latent(8, 6, 12, 2)}, 0.0),
                        ShapeError);
        Tensor bad = random_latent(8, 8, 12, 3);
        bad.data[7] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(find_center({bad}, 0.0), NumericError);
    }
}

TEST_CASE("fusion_update") {
    Tensor x = random_latent(8, 8, 12, 6), c = random_latent(8, 8, 12, 7);

    CHECK(fusion_update(x, c, 0.0).data == x.data);
    CHECK(fusion_update(x, c, 1.0).data == c.data);
    CHECK(fusion_update(x, x, 0.37).data == x.data);  // fixed point is exact

    Tensor one = constant_latent(2, 2, 4, 1.0f), zero = constant_latent(2, 2, 4, 0.0f);
    CHECK(fusion_update(one, zero, 0.1).data[0] == doctest::Approx(0.9).epsilon(1e-7));

    // Shared center scales pairwise differences by (1 - lambda).
    Tensor y = random_latent(8, 8, 12, 8);
    const double lambda = 0.37;
    Tensor ux = fusion_update(x, c, lambda), uy = fusion_update(y, c, lambda);
    for (std::size_t e = 0; e < x.data.size(); ++e) {
        double expect = (1.0 - lambda) * (static_cast<double>(x.data[e]) - y.data[e]);
        CHECK(static_cast<double>(ux.data[e]) - uy.data[e] ==
              doctest::Approx(expect).epsilon(1e-5).scale(1.0));
    }

    CHECK_THROWS_AS(fusion_update(x, c, -0.1), ConfigError);
    CHECK_THROWS_AS(fusion_update(x, c, 1.1), ConfigError);
    CHECK_THROWS_AS(fusion_update(x, random_latent(8, 6, 12, 9), 0.1), ShapeError);
}

TEST_CASE("fusion config validation") {
    FusionConfig c;
    c.lambda = 1.2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = FusionConfig{};
    c.k = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = FusionConfig{};
    CHECK(c.resolved_batch(16) == 8);
    CHECK(c.resolved_batch(3) == 3);
    c.batch_b = 5;
    CHECK(c.resolved_batch(8) == 5);
    CHECK_THROWS_AS(c.resolved_batch(4), ConfigError);
}

TEST_CASE("single-trajectory fusion equals the conditional baseline bit-for-bit") {
    Checkpoint ckpt = tiny_checkpoint();
    Scene scene = test_scene();
    std::vector<LrView> one{scene.lr_list[0]};

    FusionConfig fc;
    fc.steps = 8;
    fc.k = 2;
    fc.lambda = 0.3;
    fc.alpha = 0.2;
    FusionResult fused = satdiffmoe(one, ckpt, fc, 77);
    Tensor base = sample_conditional(scene.lr_list[0].image, scene.lr_list[0].dt_days, ckpt, 8,
                                     0.0, 77);
    CHECK(fused.image.data == base.data);
    REQUIRE(fused.step_stats.size() == 8);
    for (const auto& s : fused.step_stats) {
        CHECK(s.max_pairwise == 0.0);
        CHECK(s.max_pairwise_after == 0.0);
    }
}

TEST_CASE("fusion runs are deterministic and seed-sensitive") {
    Checkpoint ckpt = tiny_checkpoint();
    Scene scene = test_scene();
    std::vector<LrView> lrs(scene.lr_list.begin(), scene.lr_list.begin() + 3);

    FusionConfig fc;
    fc.steps = 6;
    fc.k = 3;
    FusionResult a = satdiffmoe(lrs, ckpt, fc, 5);
    FusionResult b = satdiffmoe(lrs, ckpt, fc, 5);
    CHECK(a.image.data == b.image.data);
    REQUIRE(a.step_stats.size() == b.step_stats.size());
    for (std::size_t i = 0; i < a.step_stats.size(); ++i) {
        CHECK(a.step_stats[i].max_pairwise == b.step_stats[i].max_pairwise);
        CHECK(a.step_stats[i].fused == b.step_stats[i].fused);
    }
    FusionResult c = satdiffmoe(lrs, ckpt, fc, 6);
    CHECK(a.image.data != c.image.data);
    REQUIRE(a.image.shape == std::vector<std::uint32_t>{16, 16, 3});
}

TEST_CASE("lambda zero leaves trajectories independent of k") {
    Checkpoint ckpt = tiny_checkpoint();
    Scene scene = test_scene();
    std::vector<LrView> lrs(scene.lr_list.begin(), scene.lr_list.begin() + 3);

    FusionConfig fc;
    fc.steps = 6;
    fc.lambda = 0.0;
    fc.k = 1;
    FusionResult a = satdiffmoe(lrs, ckpt, fc, 9);
    fc.k = 5;
    FusionResult b = satdiffmoe(lrs, ckpt, fc, 9);
    CHECK(a.image.data == b.image.data);
    for (const auto& s : a.step_stats) CHECK(s.max_pairwise_after == s.max_pairwise);
}

TEST_CASE("fusion steps contract pairwise disagreement by 1 - lambda") {
    Checkpoint ckpt = tiny_checkpoint();
    Scene scene = test_scene();
    std::vector<LrView> lrs(scene.lr_list.begin(), scene.lr_list.begin() + 4);

    FusionConfig fc;
    fc.steps = 6;
    fc.k = 2;
    fc.lambda = 0.1;
    fc.batch_b = 4;  // shared center over everyone
    FusionResult r = satdiffmoe(lrs, ckpt, fc, 11);
    int fused_steps = 0;
    for (std::size_t s = 0; s < r.step_stats.size(); ++s) {
        const auto& st = r.step_stats[s];
        CHECK(st.fused == ((r.step_stats.size() - s) % fc.k == 0));
        CHECK(st.max_pairwise_after <= st.max_pairwise + 1e-9);
        if (st.fused && st.max_pairwise > 0.0) {
            ++fused_steps;
            CHECK(st.max_pairwise_after / st.max_pairwise ==
                  doctest::Approx(1.0 - fc.lambda).epsilon(1e-3));
        }
    }
    CHECK(fused_steps == 3);

    // A subsampled center batch still contracts: the pull target is shared.
    fc.batch_b = 2;
    FusionResult r2 = satdiffmoe(lrs, ckpt, fc, 11);
    for (const auto& st : r2.step_stats)
        if (st.fused && st.max_pairwise > 0.0)
            CHECK(st.max_pairwise_after / st.max_pairwise ==
                  doctest::Approx(1.0 - fc.lambda).epsilon(1e-3));
}

TEST_CASE("fusion input validation and numeric guards") {
    Checkpoint ckpt = tiny_checkpoint();
    Scene scene = test_scene();

    FusionConfig fc;
    fc.steps = 4;
    CHECK_THROWS_AS(satdiffmoe({}, ckpt, fc, 1), ConfigError);

    fc.batch_b = 9;
    std::vector<LrView> lrs(scene.lr_list.begin(), scene.lr_list.begin() + 2);
    CHECK_THROWS_AS(satdiffmoe(lrs, ckpt, fc, 1), ConfigError);
    fc.batch_b = 0;

    // A finite-but-huge output bias overflows the Tweedie estimate; the
    // error names the step.
    Checkpoint bad = ckpt;
    for (auto& p : bad.net.params())
        if (p.name == "conv_out.b")
            for (auto& v : p.value) v = 3.0e38f;
    try {
        satdiffmoe(lrs, bad, fc, 1);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("stochastic DDIM fusion is deterministic too") {
    Checkpoint ckpt = tiny_checkpoint();
    Scene scene = test_scene();
    std::vector<LrView> lrs(scene.lr_list.begin(), scene.lr_list.begin() + 2);

    FusionConfig fc;
    fc.steps = 5;
    fc.eta = 1.0;
    FusionResult a = satdiffmoe(lrs, ckpt, fc, 21);
    FusionResult b = satdiffmoe(lrs, ckpt, fc, 21);
    CHECK(a.image.data == b.image.data);
    fc.eta = 0.0;
    FusionResult c = satdiffmoe(lrs, ckpt, fc, 21);
    CHECK(a.image.data != c.image.data);
}
