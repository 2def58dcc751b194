#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "satfuse/image.hpp"
#include "satfuse/synthdata.hpp"

using namespace satfuse;
namespace fs = std::filesystem;

namespace {
fs::path tmp_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / "satfuse_test_synthdata" / name;
    fs::remove_all(dir);
    return dir;
}
std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
SceneConfig small_config() {
    SceneConfig c;
    c.hr_size = 32;
    c.lr_factor = 4;
    c.n_lr = 4;
    c.seed = 7;
    return c;
}
} // namespace

TEST_CASE("config validation names the offending field") {
    SceneConfig c = small_config();
    c.hr_size = 30;  // not divisible by lr_factor 4
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("lr_factor") != std::string::npos);
    }
    c = small_config();
    c.n_lr = 0;
    CHECK_THROWS_WITH_AS(c.validate(), "config: n_lr must be >= 1", ConfigError);
    c = small_config();
    c.dt_min = 10.0;
    c.dt_max = 10.0;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("dt_range_days") != std::string::npos);
    }
    c = small_config();
    c.cloud_prob = 1.5;
    try {
        c.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("cloud_prob") != std::string::npos);
    }
}

TEST_CASE("generate_scene is deterministic and index-sensitive") {
    SceneConfig c = small_config();
    Scene a = generate_scene(c, 0);
    Scene b = generate_scene(c, 0);
    CHECK(a.hr.data == b.hr.data);
    REQUIRE(a.lr_list.size() == b.lr_list.size());
    for (std::size_t i = 0; i < a.lr_list.size(); ++i) {
        CHECK(a.lr_list[i].image.data == b.lr_list[i].image.data);
        CHECK(a.lr_list[i].dt_days == b.lr_list[i].dt_days);
    }
    Scene other = generate_scene(c, 1);
    CHECK(a.hr.data != other.hr.data);
}

TEST_CASE("scene respects the configured shape and ranges") {
    SceneConfig c = small_config();
    c.n_lr = 16;
    c.dt_min = -180.0;
    c.dt_max = 180.0;
    Scene s = generate_scene(c, 3);
    CHECK(s.hr.shape == std::vector<std::uint32_t>{32, 32, 3});
    REQUIRE(s.lr_list.size() == 16);
    for (const auto& lr : s.lr_list) {
        CHECK(lr.image.shape == s.hr.shape);
        CHECK(lr.dt_days >= -180.0);
        CHECK(lr.dt_days <= 180.0);
    }
    for (float v : s.hr.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("degrade output stays in [0,1]") {
    SceneConfig c = small_config();
    c.cloud_prob = 1.0;
    c.noise_sigma = 0.1;
    Scene s = generate_scene(c, 5);
    for (int k = 0; k < 4; ++k) {
        Tensor out = degrade(s.hr, 123.0, 1000 + k, c);
        for (float v : out.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("degrade preserves constants when clean") {
    SceneConfig c = small_config();
    c.cloud_prob = 0.0;
    c.noise_sigma = 0.0;
    Tensor hr = Tensor::hwc(32, 32, 3);
    for (auto& v : hr.data) v = 0.5f;
    Tensor out = degrade(hr, 0.0, 99, c);
    REQUIRE(out.shape == hr.shape);
    for (float v : out.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("quarter-period tint scales the red channel by 1.15") {
    CHECK(tint_factor(91.25, 0) == doctest::Approx(1.15).epsilon(1e-12));
    CHECK(tint_factor(0.0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tint_factor(0.0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tint_factor(0.0, 2) == doctest::Approx(1.0).epsilon(1e-12));

    SceneConfig c = small_config();
    c.cloud_prob = 0.0;
    c.noise_sigma = 0.0;
    Tensor hr = Tensor::hwc(32, 32, 3);
    for (auto& v : hr.data) v = 0.5f;
    Tensor out = degrade(hr, 91.25, 99, c);
    double mean_r = 0.0;
    for (std::uint32_t y = 0; y < 32; ++y)
        for (std::uint32_t x = 0; x < 32; ++x) mean_r += out.at(y, x, 0);
    mean_r /= 32.0 * 32.0;
    CHECK(mean_r == doctest::Approx(0.5 * 1.15).epsilon(1e-5));
}

TEST_CASE("degrade is deterministic and rejects non-finite input") {
    SceneConfig c = small_config();
    Scene s = generate_scene(c, 2);
    Tensor a = degrade(s.hr, 45.0, 42, c);
    Tensor b = degrade(s.hr, 45.0, 42, c);
    CHECK(a.data == b.data);
    Tensor bad = s.hr;
    bad.data[10] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(degrade(bad, 45.0, 42, c), NumericError);
}

TEST_CASE("clean degrade commutes with lr_factor translations on the interior") {
    SceneConfig c = small_config();
    c.hr_size = 64;
    c.cloud_prob = 0.0;
    c.noise_sigma = 0.0;
    Scene s = generate_scene(c, 1);
    const std::uint32_t f = c.lr_factor, n = c.hr_size;

    Tensor shifted = Tensor::hwc(n, n, 3);
    for (std::uint32_t y = 0; y < n; ++y)
        for (std::uint32_t x = 0; x < n; ++x)
            for (std::uint32_t ch = 0; ch < 3; ++ch)
                shifted.at(y, x, ch) =
                    s.hr.at((y + f) % n, (x + f) % n, ch);  // wrap; compare interior only

    Tensor da = degrade(s.hr, 30.0, 7, c);
    Tensor db = degrade(shifted, 30.0, 7, c);
    // Valid region: away from borders by blur radius + one LR cell, in both images.
    const std::uint32_t margin = 16;
    for (std::uint32_t y = margin; y < n - margin - f; ++y)
        for (std::uint32_t x = margin; x < n - margin - f; ++x)
            for (std::uint32_t ch = 0; ch < 3; ++ch)
                CHECK(db.at(y, x, ch) == doctest::Approx(da.at(y + f, x + f, ch)).epsilon(1e-6));
}

TEST_CASE("dt values cover most of the configured range across scenes") {
    SceneConfig c = small_config();
    c.n_lr = 4;
    double lo = 1e9, hi = -1e9;
    for (std::uint32_t i = 0; i < 100; ++i) {
        Scene s = generate_scene(c, i);
        for (const auto& lr : s.lr_list) {
            lo = std::min(lo, lr.dt_days);
            hi = std::max(hi, lr.dt_days);
        }
    }
    CHECK(hi - lo >= 0.8 * (c.dt_max - c.dt_min));
}

TEST_CASE("dataset writes a manifest and is byte-reproducible") {
    SceneConfig c = small_config();
    c.n_lr = 2;
    auto dir_a = tmp_dir("ds_a"), dir_b = tmp_dir("ds_b");
    DatasetSummary sum = generate_dataset(c, 3, dir_a.string());
    CHECK(sum.n_scenes == 3);

    Manifest m = load_manifest(dir_a.string());
    REQUIRE(m.scenes.size() == 3);
    CHECK(m.scenes[0].scene_id == "scene_0000");
    CHECK(m.scenes[2].scene_id == "scene_0002");
    CHECK(m.config.seed == c.seed);
    CHECK(m.config.hr_size == c.hr_size);

    generate_dataset(c, 3, dir_b.string());
    for (const auto& e : m.scenes) {
        CHECK(slurp(dir_a / e.scene_id / "hr.f32") == slurp(dir_b / e.scene_id / "hr.f32"));
        for (std::size_t i = 0; i < e.dt_days.size(); ++i) {
            auto f = "lr_" + std::to_string(i) + ".f32";
            CHECK(slurp(dir_a / e.scene_id / f) == slurp(dir_b / e.scene_id / f));
        }
    }
    CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));

    // Loaded scenes match regenerated ones.
    Scene loaded = load_scene(dir_a.string(), m, 1);
    Scene fresh = generate_scene(c, 1);
    CHECK(loaded.hr.data == fresh.hr.data);
    CHECK(loaded.lr_list[1].image.data == fresh.lr_list[1].image.data);
    CHECK(loaded.lr_list[1].dt_days == doctest::Approx(fresh.lr_list[1].dt_days).epsilon(1e-12));

    fs::remove_all(dir_a.parent_path());
}

TEST_CASE("empty dataset still writes a valid manifest") {
    SceneConfig c = small_config();
    auto dir = tmp_dir("ds_empty");
    generate_dataset(c, 0, dir.string());
    Manifest m = load_manifest(dir.string());
    CHECK(m.scenes.empty());
    // No scene subdirectories.
    std::size_t subdirs = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) ++subdirs;
    CHECK(subdirs == 0);
    fs::remove_all(dir.parent_path());
}

TEST_CASE("non-empty output directory is refused without overwrite") {
    SceneConfig c = small_config();
    c.n_lr = 1;
    auto dir = tmp_dir("ds_refuse");
    fs::create_directories(dir);
    std::ofstream(dir / "keep.txt") << "x";
    CHECK_THROWS_AS(generate_dataset(c, 1, dir.string()), IoError);
    generate_dataset(c, 1, dir.string(), /*overwrite=*/true);
    CHECK(!fs::exists(dir / "keep.txt"));
    CHECK(fs::exists(dir / "manifest.json"));
    fs::remove_all(dir.parent_path());
}
