#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "fgloc/data.hpp"

using namespace fgloc;

namespace {

GenConfig small_cfg() {
    GenConfig cfg;
    cfg.height = cfg.width = 64;
    return cfg;
}

// Mean 3x3 high-pass residual variance over the given support.
double residual_variance(const Tensor<double>& img, const Tensor<double>& mask, bool inside) {
    const std::size_t h = img.shape()[0], w = img.shape()[1];
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t y = 1; y + 1 < h; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x) {
            if ((mask.data()[y * w + x] == 1.0) != inside) continue;
            double sum = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    sum += img.data()[((y + dy) * w + (x + dx)) * 3 + 1];
            double r = img.data()[(y * w + x) * 3 + 1] - sum / 9.0;
            acc += r * r;
            ++n;
        }
    return n ? acc / n : 0.0;
}

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generate_sample basic contracts") {
    auto cfg = small_cfg();
    auto s = generate_sample<double>(42, cfg);
    CHECK(s.image.shape() == Shape{64, 64, 3});
    CHECK(s.mask.shape() == Shape{64, 64, 1});
    CHECK(s.meta.kind == "splice");
    CHECK(s.meta.seed == 42);
    for (double v : s.image.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (double v : s.mask.values()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("same seed twice gives a bit-identical sample") {
    auto cfg = small_cfg();
    auto a = generate_sample<double>(7, cfg);
    auto b = generate_sample<double>(7, cfg);
    CHECK(a.image.values() == b.image.values());
    CHECK(a.mask.values() == b.mask.values());
    CHECK(a.meta.post_ops == b.meta.post_ops);
    auto c = generate_sample<double>(8, cfg);
    CHECK(a.image.values() != c.image.values());
}

TEST_CASE("forged fraction stays within the configured range over 1000 seeds") {
    auto cfg = small_cfg();
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        auto s = generate_sample<float>(seed, cfg);
        double forged = 0;
        for (float v : s.mask.values()) forged += v;
        double frac = forged / static_cast<double>(s.mask.size());
        REQUIRE(frac >= cfg.min_frac);
        REQUIRE(frac <= cfg.max_frac);
    }
}

TEST_CASE("mask support equals the changed-pixel set (post-processing off)") {
    auto cfg = small_cfg();
    cfg.p_blur = cfg.p_contrast = cfg.p_noise = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto s = generate_sample<double>(seed, cfg);
        // regenerate the pre-paste background: pristine path shares the
        // background draw stream
        auto pristine_cfg = cfg;
        pristine_cfg.p_pristine = 1.0;
        auto bg = generate_sample<double>(seed, pristine_cfg);
        for (std::size_t i = 0; i < s.mask.size(); ++i) {
            bool differs = false;
            for (std::size_t ch = 0; ch < 3; ++ch)
                differs |= s.image.data()[i * 3 + ch] != bg.image.data()[i * 3 + ch];
            REQUIRE(differs == (s.mask.data()[i] == 1.0));
        }
    }
}

TEST_CASE("noise contrast: forged region has higher residual variance") {
    auto cfg = small_cfg();
    cfg.p_blur = 0;  // blur lowers the inside variance on purpose; exclude it here
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto s = generate_sample<double>(seed, cfg);
        double in = residual_variance(s.image, s.mask, true);
        double out = residual_variance(s.image, s.mask, false);
        if (in > 2.0 * out) ++wins;
    }
    CHECK(wins == 50);
}

TEST_CASE("pristine samples have empty masks") {
    auto cfg = small_cfg();
    cfg.p_pristine = 1.0;
    auto s = generate_sample<double>(3, cfg);
    CHECK(s.meta.kind == "none");
    for (double v : s.mask.values()) CHECK(v == 0.0);
}

TEST_CASE("generator config validation") {
    GenConfig bad = small_cfg();
    bad.height = 60;  // not divisible by 16
    CHECK_THROWS_AS(generate_sample<double>(0, bad), std::invalid_argument);
    bad = small_cfg();
    bad.min_frac = 0.5;
    bad.max_frac = 0.2;
    CHECK_THROWS_AS(generate_sample<double>(0, bad), std::invalid_argument);
    bad = small_cfg();
    bad.p_blur = 1.5;
    CHECK_THROWS_AS(generate_sample<double>(0, bad), std::invalid_argument);
}

TEST_CASE("flips are involutions and preserve the forged count") {
    auto s = generate_sample<double>(11, small_cfg());
    auto img = s.image.clone();
    detail::flip_inplace(img, true);
    detail::flip_inplace(img, true);
    CHECK(img.values() == s.image.values());
    detail::flip_inplace(img, false);
    detail::flip_inplace(img, false);
    CHECK(img.values() == s.image.values());

    auto m = s.mask.clone();
    double before = 0, after = 0;
    for (double v : m.values()) before += v;
    detail::flip_inplace(m, true);
    detail::flip_inplace(m, false);
    for (double v : m.values()) after += v;
    CHECK(before == after);
}

TEST_CASE("augment keeps shapes, binarity, and crop hits the forged region") {
    auto cfg = small_cfg();
    auto s = generate_sample<double>(5, cfg);
    std::size_t crops = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        auto a = augment(s, seed);
        REQUIRE(a.image.shape() == s.image.shape());
        REQUIRE(a.mask.shape() == s.mask.shape());
        bool cropped = false;
        for (const auto& op : a.meta.post_ops) cropped |= op == "crop";
        double forged = 0;
        for (double v : a.mask.values()) {
            REQUIRE((v == 0.0 || v == 1.0));
            forged += v;
        }
        if (cropped) {
            ++crops;
            REQUIRE(forged >= 1.0);
        }
    }
    CHECK(crops > 300);  // the crop branch actually runs
}

TEST_CASE("augment without forged pixels falls back to flips") {
    auto cfg = small_cfg();
    cfg.p_pristine = 1.0;
    auto s = generate_sample<double>(9, cfg);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto a = augment(s, seed);
        for (const auto& op : a.meta.post_ops) CHECK(op != "crop");
        for (double v : a.mask.values()) CHECK(v == 0.0);
    }
}

TEST_CASE("augment determinism") {
    auto s = generate_sample<double>(1, small_cfg());
    auto a = augment(s, 33);
    auto b = augment(s, 33);
    CHECK(a.image.values() == b.image.values());
    CHECK(a.mask.values() == b.mask.values());
}

TEST_CASE("dataset_split") {
    auto parts = dataset_split(100, {0.70, 0.05, 0.25}, 4);
    CHECK(parts[0].size() == 70);
    CHECK(parts[1].size() == 5);
    CHECK(parts[2].size() == 25);
    std::vector<bool> seen(100, false);
    for (const auto& part : parts)
        for (std::size_t i : part) {
            CHECK(!seen[i]);
            seen[i] = true;
        }
    for (bool b : seen) CHECK(b);

    auto all = dataset_split(10, {1.0, 0.0, 0.0}, 0);
    CHECK(all[0].size() == 10);
    CHECK(all[1].empty());
    CHECK(all[2].empty());

    auto again = dataset_split(100, {0.70, 0.05, 0.25}, 4);
    CHECK(parts[0] == again[0]);
    CHECK(parts[2] == again[2]);
    auto other = dataset_split(100, {0.70, 0.05, 0.25}, 5);
    CHECK(parts[0] != other[0]);

    CHECK_THROWS_AS(dataset_split(100, {0.5, 0.2, 0.2}, 0), std::invalid_argument);
    CHECK_THROWS_AS(dataset_split(3, {0.70, 0.05, 0.25}, 0), std::invalid_argument);
}

TEST_CASE("image round-trip within quantization error") {
    Rng rng(6);
    Tensor<double> img({32, 48, 3});
    for (auto& v : img.values()) v = uniform(rng, 0, 1);
    auto path = tmp_path("fgloc_test_img.ppm");
    save_image(path, img);
    auto back = load_image<double>(path);
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        REQUIRE(std::abs(back.data()[i] - img.data()[i]) <= 1.0 / 255.0 + 1e-12);
    std::remove(path.c_str());

    Tensor<double> black({8, 8, 3}, 0.0);
    save_image(path, black);
    auto zb = load_image<double>(path);
    for (double v : zb.values()) CHECK(v == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("mask round-trip is exact") {
    auto s = generate_sample<double>(2, small_cfg());
    auto path = tmp_path("fgloc_test_mask.pgm");
    save_mask(path, s.mask);
    auto back = load_mask<double>(path);
    CHECK(back.values() == s.mask.values());
    std::remove(path.c_str());
}

TEST_CASE("prob map round-trip within 16-bit quantization") {
    Rng rng(7);
    Tensor<double> prob({16, 16, 1});
    for (auto& v : prob.values()) v = uniform(rng, 0, 1);
    auto path = tmp_path("fgloc_test_prob.pgm");
    save_prob_map(path, prob);
    auto back = load_prob_map<double>(path);
    for (std::size_t i = 0; i < prob.size(); ++i)
        REQUIRE(std::abs(back.data()[i] - prob.data()[i]) <= 0.5 / 65535.0 + 1e-12);
    // relative order of distinct quantization bins is preserved (AUC safety)
    CHECK_THROWS_AS(load_mask<double>(path), std::runtime_error);  // wrong depth
    std::remove(path.c_str());
}

TEST_CASE("I/O error handling") {
    CHECK_THROWS_AS(load_image<double>("/nonexistent/x.ppm"), std::runtime_error);
    CHECK_THROWS_AS(load_mask<double>("/nonexistent/x.pgm"), std::runtime_error);
    auto path = tmp_path("fgloc_test_bad.ppm");
    std::ofstream(path) << "P3\n2 2\n255\n";
    CHECK_THROWS_AS(load_image<double>(path), std::runtime_error);
    std::remove(path.c_str());
    Tensor<double> wrong({4, 4, 2}, 0.0);
    CHECK_THROWS_AS(save_image(tmp_path("x.ppm"), wrong), ShapeError);
}
