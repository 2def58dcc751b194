#include <cmath>

#include "doctest.h"
#include "satfuse/image.hpp"
#include "satfuse/rng.hpp"

using namespace satfuse;

TEST_CASE("gaussian blur preserves constants and the mean") {
    Tensor img = Tensor::hwc(16, 16, 2);
    for (auto& v : img.data) v = 0.33f;
    Tensor out = gaussian_blur(img, 2.0);
    for (float v : out.data) CHECK(v == doctest::Approx(0.33).epsilon(1e-6));

    Rng rng(1);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    out = gaussian_blur(img, 1.5);
    // Bounded by input range (kernel is a convex combination).
    for (float v : out.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("blur with sigma <= 0 is identity") {
    Tensor img = Tensor::hwc(4, 4, 1);
    Rng rng(2);
    rng.fill_normal(img.data.data(), img.data.size());
    CHECK(gaussian_blur(img, 0.0).data == img.data);
}

TEST_CASE("avgpool averages blocks") {
    Tensor img = Tensor::hwc(4, 4, 1);
    for (std::size_t i = 0; i < 16; ++i) img.data[i] = static_cast<float>(i);
    Tensor out = avgpool(img, 2);
    REQUIRE(out.shape == std::vector<std::uint32_t>{2, 2, 1});
    CHECK(out.at(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(out.at(1, 1, 0) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    CHECK_THROWS_AS(avgpool(img, 3), ShapeError);
}

TEST_CASE("bilinear upsample preserves constants and interpolates centers") {
    Tensor img = Tensor::hwc(2, 2, 1);
    img.data = {0.0f, 1.0f, 0.0f, 1.0f};
    Tensor out = upsample_bilinear(img, 2);
    REQUIRE(out.shape == std::vector<std::uint32_t>{4, 4, 1});
    // Half-pixel convention: output column 0 maps to source x = -0.25 (clamped),
    // column 1 to x = 0.25, so values step 0, 0.25, 0.75, 1 across a 0->1 edge.
    CHECK(out.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(out.at(0, 1, 0) == doctest::Approx(0.25));
    CHECK(out.at(0, 2, 0) == doctest::Approx(0.75));
    CHECK(out.at(0, 3, 0) == doctest::Approx(1.0));

    Tensor c = Tensor::hwc(3, 5, 2);
    for (auto& v : c.data) v = 0.6f;
    Tensor up = upsample_bilinear(c, 4);
    for (float v : up.data) CHECK(v == doctest::Approx(0.6).epsilon(1e-6));
}

TEST_CASE("nearest upsample replicates pixels") {
    Tensor img = Tensor::hwc(2, 2, 1);
    img.data = {1.0f, 2.0f, 3.0f, 4.0f};
    Tensor out = upsample_nearest(img, 3);
    REQUIRE(out.shape == std::vector<std::uint32_t>{6, 6, 1});
    CHECK(out.at(0, 0, 0) == 1.0f);
    CHECK(out.at(2, 2, 0) == 1.0f);
    CHECK(out.at(2, 3, 0) == 2.0f);
    CHECK(out.at(5, 5, 0) == 4.0f);
}

TEST_CASE("pool then upsample round-trips block-constant images") {
    Tensor img = Tensor::hwc(8, 8, 1);
    for (std::uint32_t y = 0; y < 8; ++y)
        for (std::uint32_t x = 0; x < 8; ++x) img.at(y, x, 0) = (y / 4 == x / 4) ? 1.0f : 0.0f;
    Tensor small = avgpool(img, 4);
    CHECK(small.at(0, 0, 0) == doctest::Approx(1.0));
    CHECK(small.at(0, 1, 0) == doctest::Approx(0.0));
    Tensor up = upsample_nearest(small, 4);
    CHECK(up.data == img.data);
}

TEST_CASE("clamp01 clips both sides") {
    Tensor img = Tensor::hwc(1, 1, 3);
    img.data = {-0.5f, 0.5f, 1.5f};
    clamp01(img);
    CHECK(img.data == std::vector<float>{0.0f, 0.5f, 1.0f});
}
