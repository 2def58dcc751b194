#include <cmath>
#include <vector>

#include "doctest.h"
#include "satfuse/diffusion.hpp"
#include "satfuse/rng.hpp"

using namespace satfuse;

namespace {

// Hand-built schedule with chosen alpha_bar values; only the fields a
// formula reads need to be meaningful.
NoiseSchedule fake_schedule(std::vector<double> alpha_bar) {
    NoiseSchedule s;
    s.T = static_cast<int>(alpha_bar.size());
    s.alpha_bar = std::move(alpha_bar);
    s.beta.assign(s.alpha_bar.size(), 0.01);
    s.alpha.assign(s.alpha_bar.size(), 0.99);
    return s;
}

TensorD scalar_d(double v) {
    TensorD t = TensorD::hwc(1, 1, 1);
    t.data[0] = v;
    return t;
}

} // namespace

TEST_CASE("linear schedule endpoints and first alpha_bar") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    CHECK(s.beta.front() == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.beta.back() == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9999).epsilon(1e-12));
    CHECK(s.alpha_bar_at(0) == 1.0);
    // strictly decreasing
    for (int t = 2; t <= s.T; ++t) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
}

TEST_CASE("alpha_bar matches an independent product loop") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0;
        prod *= 1.0 - beta;
        CHECK(std::abs(s.alpha_bar_at(t) - prod) <= 1e-10 * prod);
    }
}

TEST_CASE("degenerate single-step schedule") {
    NoiseSchedule s = make_schedule(1, 0.005, 0.02);
    REQUIRE(s.beta.size() == 1);
    CHECK(s.beta[0] == doctest::Approx(0.005));
}

TEST_CASE("schedule bounds are validated") {
    CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 0.02, 1e-4), ConfigError);
    CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), ConfigError);
}

TEST_CASE("forward_noise scalar cases") {
    NoiseSchedule s = fake_schedule({0.64});
    CHECK(forward_noise(scalar_d(1.0), 1, scalar_d(0.5), s).data[0] ==
          doctest::Approx(1.1).epsilon(1e-12));
    CHECK(forward_noise(scalar_d(0.0), 1, scalar_d(0.5), s).data[0] ==
          doctest::Approx(std::sqrt(0.36) * 0.5).epsilon(1e-12));
    CHECK(forward_noise(scalar_d(1.0), 1, scalar_d(0.0), s).data[0] ==
          doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("tweedie scalar cases") {
    NoiseSchedule s = fake_schedule({0.25});
    CHECK(tweedie(scalar_d(1.0), scalar_d(0.4), 1, s).data[0] ==
          doctest::Approx((1.0 - std::sqrt(0.75) * 0.4) / 0.5).epsilon(1e-12));
    CHECK(tweedie(scalar_d(1.0), scalar_d(0.4), 1, s).data[0] == doctest::Approx(1.30718).epsilon(1e-5));
    CHECK(tweedie(scalar_d(0.7), scalar_d(0.0), 1, s).data[0] ==
          doctest::Approx(0.7 / 0.5).epsilon(1e-12));
}

TEST_CASE("tweedie inverts forward_noise at every t") {
    NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
    Rng rng(404);
    Tensor z0 = Tensor::hwc(4, 4, 3), eps = z0;
    rng.fill_normal(z0.data.data(), z0.data.size());
    rng.fill_normal(eps.data.data(), eps.data.size());
    for (int t = 1; t <= 100; ++t) {
        Tensor back = tweedie(forward_noise(z0, t, eps, s), eps, t, s);
        for (std::size_t i = 0; i < z0.data.size(); ++i)
            CHECK(back.data[i] == doctest::Approx(z0.data[i]).epsilon(1e-4));
    }
    // Double precision nails the 1e-6 bound even deep in the schedule.
    TensorD z0d = z0.cast<double>(), epsd = eps.cast<double>();
    for (int t : {1, 50, 100}) {
        TensorD back = tweedie(forward_noise(z0d, t, epsd, s), epsd, t, s);
        for (std::size_t i = 0; i < z0d.data.size(); ++i)
            CHECK(std::abs(back.data[i] - z0d.data[i]) <= 1e-6);
    }
}

TEST_CASE("t out of range is rejected") {
    NoiseSchedule s = make_schedule(10, 1e-4, 0.02);
    Tensor z = Tensor::hwc(1, 1, 1), e = z;
    CHECK_THROWS_AS(forward_noise(z, 0, e, s), ConfigError);
    CHECK_THROWS_AS(forward_noise(z, 11, e, s), ConfigError);
    CHECK_THROWS_AS(tweedie(z, e, -1, s), ConfigError);
}

TEST_CASE("ddim_sigma hand values") {
    NoiseSchedule s = fake_schedule({0.9, 0.8});
    CHECK(ddim_sigma(2, s) ==
          doctest::Approx(std::sqrt(0.1 / 0.2) * std::sqrt(1.0 - 0.8 / 0.9)).epsilon(1e-12));
    CHECK(ddim_sigma(2, s) == doctest::Approx(0.2357).epsilon(1e-3));
    NoiseSchedule flat = fake_schedule({0.7, 0.7});
    CHECK(ddim_sigma(2, flat) == doctest::Approx(0.0));
}

TEST_CASE("radicand is valid across the default schedule") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    for (double eta : {0.0, 0.5, 1.0}) {
        for (int t = 1; t <= 1000; ++t) {
            double sig = ddim_sigma(t, s);
            CHECK(1.0 - s.alpha_bar_at(t - 1) - eta * sig * sig >= 0.0);
        }
        // Also across the strided inference sequence.
        auto ts = inference_timesteps(1000, 50);
        for (std::size_t i = 0; i < ts.size(); ++i) {
            int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
            double sig = ddim_sigma_between(t_prev, ts[i], s);
            CHECK(1.0 - s.alpha_bar_at(t_prev) - eta * sig * sig >= 0.0);
        }
    }
}

TEST_CASE("ddim_step hand value and boundary") {
    NoiseSchedule s = fake_schedule({0.9, 0.8});
    // abar_{t-1} = 0.9, z0_hat = 1, eps_hat = 0.2, eta = 0.
    auto out = ddim_step(scalar_d(1.0), scalar_d(0.2), 2, 0.0, nullptr, s);
    CHECK(out.data[0] == doctest::Approx(std::sqrt(0.9) + std::sqrt(0.1) * 0.2).epsilon(1e-12));
    CHECK(out.data[0] == doctest::Approx(1.01193).epsilon(1e-5));

    // t = 1 lands on abar_0 = 1: returns z0_hat exactly.
    NoiseSchedule d = make_schedule(50, 1e-4, 0.02);
    TensorD z0 = scalar_d(0.3125), eps = scalar_d(-1.75);
    auto final = ddim_step(z0, eps, 1, 0.0, nullptr, d);
    CHECK(final.data[0] == z0.data[0]);
}

TEST_CASE("eta=0 ignores the noise argument") {
    NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
    TensorD z0 = scalar_d(0.4), eps = scalar_d(0.1), noise = scalar_d(123.0);
    auto with = ddim_step(z0, eps, 40, 0.0, &noise, s);
    auto without = ddim_step(z0, eps, 40, 0.0, nullptr, s);
    CHECK(with.data[0] == without.data[0]);
}

TEST_CASE("eta>0 adds sigma-scaled noise") {
    NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
    TensorD z0 = scalar_d(0.4), eps = scalar_d(0.1), n0 = scalar_d(0.0), n1 = scalar_d(1.0);
    auto a = ddim_step(z0, eps, 40, 1.0, &n0, s);
    auto b = ddim_step(z0, eps, 40, 1.0, &n1, s);
    CHECK(b.data[0] - a.data[0] == doctest::Approx(ddim_sigma(40, s)).epsilon(1e-12));
    CHECK_THROWS_AS(ddim_step(z0, eps, 40, 0.5, nullptr, s), ConfigError);
}

TEST_CASE("negative or invalid radicand names eta and t") {
    // Non-monotone alpha_bar poisons sigma; the guard must catch it.
    NoiseSchedule bad = fake_schedule({0.5, 0.9});
    TensorD n = scalar_d(0.0);
    try {
        ddim_step(scalar_d(0.0), scalar_d(0.0), 2, 1.0, &n, bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("eta") != std::string::npos);
        CHECK(msg.find("t=2") != std::string::npos);
    }
    CHECK_THROWS_AS(ddim_step(scalar_d(0.0), scalar_d(0.0), 2, 1.5, nullptr, fake_schedule({0.9, 0.8})),
                    ConfigError);
}

TEST_CASE("inference timesteps stride, dedup, bounds") {
    auto ts = inference_timesteps(1000, 50);
    REQUIRE(ts.size() == 50);
    CHECK(ts.front() == 1000);
    CHECK(ts.back() == 20);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);

    auto all = inference_timesteps(10, 10);
    CHECK(all == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1});

    auto tiny = inference_timesteps(7, 3);  // rounds collapse duplicates
    for (std::size_t i = 1; i < tiny.size(); ++i) CHECK(tiny[i] < tiny[i - 1]);
    CHECK(tiny.front() == 7);
    CHECK_THROWS_AS(inference_timesteps(10, 0), ConfigError);
    CHECK_THROWS_AS(inference_timesteps(10, 11), ConfigError);
}

TEST_CASE("oracle posterior mean limits") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    GaussianOracleT<double> oracle;
    oracle.mu = TensorD::hwc(1, 1, 4);
    oracle.mu.data = {0.3, -0.2, 1.0, 0.0};
    oracle.sigma0 = 1e-9;

    TensorD z = oracle.mu;
    for (auto& v : z.data) v += 0.5;
    const int t = 500;
    auto mean = oracle_posterior_mean(z, t, oracle, s);
    for (std::size_t i = 0; i < mean.data.size(); ++i)
        CHECK(mean.data[i] == doctest::Approx(oracle.mu.data[i]).epsilon(1e-6));
    auto eps = oracle_eps(z, t, oracle, s);
    const double ab = s.alpha_bar_at(t);
    for (std::size_t i = 0; i < eps.data.size(); ++i)
        CHECK(eps.data[i] ==
              doctest::Approx((z.data[i] - std::sqrt(ab) * oracle.mu.data[i]) /
                              std::sqrt(1.0 - ab))
                  .epsilon(1e-6));
}

TEST_CASE("oracle at the symmetry center") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    GaussianOracleT<double> oracle;
    oracle.mu = TensorD::hwc(1, 1, 4);
    oracle.mu.data = {0.3, -0.2, 1.0, 0.7};
    oracle.sigma0 = 0.8;
    const int t = 321;
    TensorD z = oracle.mu;
    const double sab = std::sqrt(s.alpha_bar_at(t));
    for (auto& v : z.data) v *= sab;
    auto mean = oracle_posterior_mean(z, t, oracle, s);
    auto eps = oracle_eps(z, t, oracle, s);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(mean.data[i] == doctest::Approx(oracle.mu.data[i]).epsilon(1e-12));
        CHECK(std::abs(eps.data[i]) <= 1e-12);
    }
}

TEST_CASE("tweedie of oracle_eps equals an independent posterior mean") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    GaussianOracleT<double> oracle;
    oracle.mu = TensorD::hwc(2, 2, 1);
    oracle.mu.data = {0.1, -0.4, 0.9, 0.25};
    oracle.sigma0 = 0.6;
    Rng rng(999);
    TensorD z = oracle.mu;
    rng.fill_normal(z.data.data(), z.data.size());
    for (int t : {1, 17, 250, 999, 1000}) {
        auto eps = oracle_eps(z, t, oracle, s);
        auto mean = tweedie(z, eps, t, s);
        // Independent arrangement of the same posterior:
        //   E = (abar s0^2 z/sqrt(abar) * ... ) written via precision weighting.
        const double ab = s.alpha_bar_at(t);
        const double v0 = oracle.sigma0 * oracle.sigma0;
        for (std::size_t i = 0; i < z.data.size(); ++i) {
            const double prec_prior = 1.0 / v0;
            const double prec_like = ab / (1.0 - ab);
            const double m = (prec_prior * oracle.mu.data[i] +
                              prec_like * (z.data[i] / std::sqrt(ab))) /
                             (prec_prior + prec_like);
            CHECK(std::abs(mean.data[i] - m) <= 1e-10);
        }
    }
}

TEST_CASE("oracle-driven DDIM sampling hits the data distribution") {
    NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    GaussianOracleT<double> oracle;
    oracle.mu = TensorD::hwc(1, 1, 4);
    oracle.mu.data = {0.5, -1.0, 0.0, 2.0};
    oracle.sigma0 = 0.7;
    auto ts = inference_timesteps(1000, 50);

    const int n_samples = 10000;
    std::vector<double> sum(4, 0.0), sum2(4, 0.0);
    Rng rng(31337);
    TensorD first_run, second_run;
    for (int k = 0; k < n_samples; ++k) {
        TensorD z = TensorD::hwc(1, 1, 4);
        rng.fill_normal(z.data.data(), z.data.size());
        for (std::size_t i = 0; i < ts.size(); ++i) {
            const int t = ts[i];
            const int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
            auto eps = oracle_eps(z, t, oracle, s);
            auto z0h = tweedie(z, eps, t, s);
            z = ddim_step_between(z0h, eps, t_prev, t, 0.0, nullptr, s);
        }
        for (int c = 0; c < 4; ++c) {
            sum[c] += z.data[c];
            sum2[c] += z.data[c] * z.data[c];
        }
        if (k == 0) first_run = z;
    }
    for (int c = 0; c < 4; ++c) {
        const double mean = sum[c] / n_samples;
        const double sd = std::sqrt(sum2[c] / n_samples - mean * mean);
        CHECK(std::abs(mean - oracle.mu.data[c]) <= 0.05 * oracle.sigma0);
        CHECK(std::abs(sd - oracle.sigma0) <= 0.10 * oracle.sigma0);
    }

    // Re-running the first sample bit-identically.
    Rng rng2(31337);
    TensorD z = TensorD::hwc(1, 1, 4);
    rng2.fill_normal(z.data.data(), z.data.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        auto eps = oracle_eps(z, t, oracle, s);
        auto z0h = tweedie(z, eps, t, s);
        z = ddim_step_between(z0h, eps, t_prev, t, 0.0, nullptr, s);
    }
    CHECK(z.data == first_run.data);
}
