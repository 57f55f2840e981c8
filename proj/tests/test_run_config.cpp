#include <doctest.h>

#include "irdseg/errors.hpp"
#include "irdseg/run_config.hpp"

using namespace irdseg;

TEST_CASE("run config parsing") {
    SUBCASE("defaults load from an empty config") {
        const RunConfig c = RunConfig::from_text("");
        CHECK(c.seed == 7);
        CHECK(c.scene.height == 64);
        CHECK(c.network.conv_mode == ConvMode::da_shape);
        CHECK(c.train.batch_size == 4);
    }
    SUBCASE("values and sections are honored") {
        const std::string text =
            "seed = 123\n"
            "\n"
            "[scene]\n"
            "height = 32\n"
            "width = 32\n"
            "n_classes = 4\n"
            "\n"
            "[network]\n"
            "conv_mode = \"standard\"  # comment\n"
            "encoder_channels = [8, 16]\n"
            "\n"
            "[train]\n"
            "learning_rate = 0.01\n";
        const RunConfig c = RunConfig::from_text(text);
        CHECK(c.seed == 123);
        CHECK(c.scene.height == 32);
        CHECK(c.scene.n_classes == 4);
        CHECK(c.network.n_classes == 4);  // follows the scene
        CHECK(c.network.conv_mode == ConvMode::standard);
        CHECK(c.network.encoder_channels == std::vector<std::size_t>{8, 16});
        CHECK(c.train.learning_rate == 0.01);
    }
    SUBCASE("unknown key is named") {
        try {
            RunConfig::from_text("[scene]\nnoise = 3\n");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("scene.noise") != std::string::npos);
        }
    }
    SUBCASE("bad values rejected") {
        CHECK_THROWS_AS(RunConfig::from_text("[fill]\nneighbors = 5\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::from_text("[network]\nconv_mode = \"cubist\"\n"),
                        ConfigError);
        CHECK_THROWS_AS(RunConfig::from_text("seed = banana\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::from_text("[train]\nbatch_size = 0\n"), ConfigError);
    }
    SUBCASE("duplicate key rejected") {
        CHECK_THROWS_AS(RunConfig::from_text("seed = 1\nseed = 2\n"), ConfigError);
    }
}

TEST_CASE("canonical echo round trips") {
    const std::string text =
        "seed = 9\n"
        "[scene]\n"
        "height = 32\n"
        "width = 48\n"
        "ir_noise_sigma = 1.5\n"
        "[network]\n"
        "conv_mode = \"depth-aware\"\n"
        "alpha = 0.5\n"
        "[paths]\n"
        "data = \"/tmp/ds\"\n";
    const RunConfig c = RunConfig::from_text(text);
    const RunConfig back = RunConfig::from_text(c.canonical_text());
    CHECK(back.seed == c.seed);
    CHECK(back.scene.height == c.scene.height);
    CHECK(back.scene.width == c.scene.width);
    CHECK(back.scene.ir_noise_sigma == c.scene.ir_noise_sigma);
    CHECK(back.network.conv_mode == c.network.conv_mode);
    CHECK(back.network.alpha == c.network.alpha);
    CHECK(back.paths.data == c.paths.data);
    CHECK(back.canonical_text() == c.canonical_text());
}

TEST_CASE("derived seeds follow the top-level seed") {
    RunConfig a = RunConfig::from_text("seed = 1\n");
    RunConfig b = RunConfig::from_text("seed = 1\n");
    CHECK(a.scene.seed == b.scene.seed);
    CHECK(a.network.seed == b.network.seed);
    b.reseed(2);
    CHECK(a.scene.seed != b.scene.seed);
    CHECK(a.network.seed != b.network.seed);
}
