#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "irdseg/errors.hpp"
#include "irdseg/synth_data.hpp"

using namespace irdseg;
namespace fs = std::filesystem;

TEST_CASE("generate_scene basics") {
    SceneConfig cfg;
    cfg.seed = 11;

    SUBCASE("deterministic per (seed, index)") {
        const ImageSample a = generate_scene(cfg, 3);
        const ImageSample b = generate_scene(cfg, 3);
        for (std::size_t i = 0; i < a.ir.size(); ++i) {
            CHECK(a.ir[i] == b.ir[i]);
            CHECK(a.depth_raw[i] == b.depth_raw[i]);
            CHECK(a.depth_filled_gt[i] == b.depth_filled_gt[i]);
            CHECK(a.labels[i] == b.labels[i]);
        }
        const ImageSample c = generate_scene(cfg, 4);
        bool different = false;
        for (std::size_t i = 0; i < a.ir.size() && !different; ++i) {
            different = a.ir[i] != c.ir[i];
        }
        CHECK(different);
    }
    SUBCASE("invariants hold across samples") {
        for (std::uint64_t index = 0; index < 8; ++index) {
            const ImageSample s = generate_scene(cfg, index);
            for (std::size_t i = 0; i < s.depth_raw.size(); ++i) {
                CHECK(s.mask_missing[i] == (s.depth_raw[i] == 0.0 ? 1.0 : 0.0));
                CHECK(s.depth_filled_gt[i] > 0.0);
                CHECK(s.depth_filled_gt[i] >= cfg.depth_min);
                CHECK(s.depth_filled_gt[i] <= cfg.depth_max);
                CHECK(s.labels[i] < static_cast<double>(cfg.n_classes));
                CHECK(s.ir[i] >= 0.0);
            }
        }
    }
    SUBCASE("zero primitives leaves a pure background plane") {
        SceneConfig flat = cfg;
        flat.min_primitives = 0;
        flat.max_primitives = 0;
        flat.min_holes = 0;
        flat.max_holes = 0;
        flat.ir_noise_sigma = 0.0;
        const ImageSample s = generate_scene(flat, 0);
        for (std::size_t i = 0; i < s.labels.size(); ++i) {
            CHECK(s.labels[i] == 0.0);
            CHECK(s.mask_missing[i] == 0.0);
        }
        // IR follows albedo/d^2 exactly without noise
        const std::vector<double> albedo = flat.effective_albedo();
        for (std::size_t i = 0; i < s.ir.size(); ++i) {
            const double expected = albedo[0] / (s.depth_filled_gt[i] * s.depth_filled_gt[i]);
            CHECK(s.ir[i] == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("inverse-square infrared contrast") {
    // a front surface at half the distance reflects 4x the light at equal
    // albedo; checked on the pure falloff model (no noise)
    SceneConfig cfg;
    cfg.ir_noise_sigma = 0.0;
    cfg.seed = 5;
    cfg.min_primitives = 1;
    cfg.max_primitives = 1;
    cfg.min_holes = 0;
    cfg.max_holes = 0;
    cfg.albedo.assign(cfg.n_classes, 100.0);  // equal albedo everywhere
    const ImageSample s = generate_scene(cfg, 2);

    double prim_ir = 0.0, prim_d = 0.0, bg_ir = 0.0, bg_d = 0.0;
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
        if (s.labels[i] != 0.0 && prim_ir == 0.0) {
            prim_ir = s.ir[i];
            prim_d = s.depth_filled_gt[i];
        }
        if (s.labels[i] == 0.0 && bg_ir == 0.0) {
            bg_ir = s.ir[i];
            bg_d = s.depth_filled_gt[i];
        }
    }
    REQUIRE(prim_ir > 0.0);
    REQUIRE(bg_ir > 0.0);
    const double expected_ratio = (bg_d * bg_d) / (prim_d * prim_d);
    CHECK(prim_ir / bg_ir == doctest::Approx(expected_ratio).epsilon(1e-9));
}

TEST_CASE("patch rank ordering of IR is the reverse of depth") {
    SceneConfig cfg;
    cfg.ir_noise_sigma = 0.0;
    cfg.seed = 17;
    for (std::uint64_t index = 0; index < 4; ++index) {
        const ImageSample s = generate_scene(cfg, index);
        const std::size_t h = cfg.height, w = cfg.width;
        for (std::size_t y0 = 0; y0 + 5 <= h; y0 += 7) {
            for (std::size_t x0 = 0; x0 + 5 <= w; x0 += 7) {
                // skip patches that cross a class boundary
                const double cls = s.labels.at(y0, x0);
                bool uniform = true;
                for (std::size_t y = y0; y < y0 + 5 && uniform; ++y) {
                    for (std::size_t x = x0; x < x0 + 5 && uniform; ++x) {
                        uniform = s.labels.at(y, x) == cls;
                    }
                }
                if (!uniform) continue;
                for (std::size_t a = 0; a < 25; ++a) {
                    for (std::size_t b = a + 1; b < 25; ++b) {
                        const double da = s.depth_filled_gt.at(y0 + a / 5, x0 + a % 5);
                        const double db = s.depth_filled_gt.at(y0 + b / 5, x0 + b % 5);
                        const double ia = s.ir.at(y0 + a / 5, x0 + a % 5);
                        const double ib = s.ir.at(y0 + b / 5, x0 + b % 5);
                        if (da < db) CHECK(ia > ib);
                        if (da > db) CHECK(ia < ib);
                        if (da == db) CHECK(ia == ib);
                    }
                }
            }
        }
    }
}

TEST_CASE("class boundaries coincide with depth steps") {
    SceneConfig cfg;
    cfg.seed = 23;
    for (std::uint64_t index = 0; index < 6; ++index) {
        const ImageSample s = generate_scene(cfg, index);
        for (std::size_t y = 0; y < cfg.height; ++y) {
            for (std::size_t x = 0; x + 1 < cfg.width; ++x) {
                if (s.labels.at(y, x) != s.labels.at(y, x + 1)) {
                    CHECK(std::abs(s.depth_filled_gt.at(y, x) -
                                   s.depth_filled_gt.at(y, x + 1)) >= cfg.min_depth_step);
                }
            }
        }
        for (std::size_t y = 0; y + 1 < cfg.height; ++y) {
            for (std::size_t x = 0; x < cfg.width; ++x) {
                if (s.labels.at(y, x) != s.labels.at(y + 1, x)) {
                    CHECK(std::abs(s.depth_filled_gt.at(y, x) -
                                   s.depth_filled_gt.at(y + 1, x)) >= cfg.min_depth_step);
                }
            }
        }
    }
}

TEST_CASE("dataset round trip") {
    const fs::path dir = fs::temp_directory_path() / "irdseg_ds_test";
    fs::remove_all(dir);
    SceneConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.seed = 31;

    write_dataset(cfg, 3, dir.string());
    const std::vector<ImageSample> samples = read_dataset(dir.string());
    REQUIRE(samples.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const ImageSample original = generate_scene(cfg, i);
        const ImageSample& s = samples[i];
        for (std::size_t p = 0; p < s.ir.size(); ++p) {
            CHECK(std::abs(s.ir[p] - original.ir[p]) <= 0.5);
            // 16-bit millidepth: at most 0.5 millidepth quantization error
            CHECK(std::abs(s.depth_raw[p] - original.depth_raw[p]) <= 0.0005);
            CHECK(s.labels[p] == original.labels[p]);
            CHECK(s.mask_missing[p] == original.mask_missing[p]);
            CHECK(s.depth_filled_gt[p] ==
                  doctest::Approx(original.depth_filled_gt[p]).epsilon(1e-6));
        }
    }

    SUBCASE("empty directory reads as empty list") {
        const fs::path empty = fs::temp_directory_path() / "irdseg_ds_empty";
        fs::remove_all(empty);
        fs::create_directories(empty);
        CHECK(read_dataset(empty.string()).empty());
        fs::remove_all(empty);
    }
    SUBCASE("corrupt magic names the file") {
        const fs::path victim = dir / "000001" / "ir.pgm";
        std::ofstream bad(victim, std::ios::binary);
        bad << "XX garbage";
        bad.close();
        try {
            read_dataset(dir.string());
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("ir.pgm") != std::string::npos);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("scene config validation") {
    SceneConfig cfg;
    cfg.max_primitives = 40;  // cannot fit 40 disjoint depth bands
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    SceneConfig tiny;
    tiny.height = 4;
    CHECK_THROWS_AS(tiny.validate(), ConfigError);
    SceneConfig bad_albedo;
    bad_albedo.albedo = {1.0, 2.0};  // wrong length for 6 classes
    CHECK_THROWS_AS(bad_albedo.validate(), ConfigError);
}
