#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "irdseg/cli.hpp"
#include "irdseg/metrics.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("irdseg");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return irdseg::cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bool identical_trees(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel_a;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a));
    }
    std::sort(rel_a.begin(), rel_a.end());
    std::vector<fs::path> rel_b;
    for (const auto& e : fs::recursive_directory_iterator(b)) {
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b));
    }
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const fs::path& rel : rel_a) {
        if (slurp(a / rel) != slurp(b / rel)) return false;
    }
    return true;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const char* kTinyConfig =
    "seed = 5\n"
    "[scene]\n"
    "height = 16\n"
    "width = 16\n"
    "n_classes = 4\n"
    "min_primitives = 1\n"
    "max_primitives = 2\n"
    "[network]\n"
    "encoder_channels = [4, 8]\n"
    "conv_mode = \"da-shape\"\n"
    "[train]\n"
    "epochs = 1\n"
    "batch_size = 2\n"
    "learning_rate = 0.02\n";

}  // namespace

TEST_CASE("cli gen") {
    TempDir tmp("irdseg_cli_gen");
    const fs::path cfg = tmp.path / "cfg.toml";
    std::ofstream(cfg) << kTinyConfig;

    SUBCASE("produces samples, manifest, and the config echo") {
        const fs::path out = tmp.path / "ds";
        CHECK(run_cli({"gen", "--config", cfg.string(), "--count", "3",
                       "--out", out.string()}) == 0);
        CHECK(fs::exists(out / "manifest.txt"));
        CHECK(fs::exists(out / "config.toml"));
        CHECK(fs::exists(out / "000000" / "ir.pgm"));
        CHECK(fs::exists(out / "000002" / "depth_filled.pfm"));
    }
    SUBCASE("same config twice is byte-identical") {
        const fs::path out1 = tmp.path / "ds1";
        const fs::path out2 = tmp.path / "ds2";
        REQUIRE(run_cli({"gen", "--config", cfg.string(), "--count", "3",
                         "--out", out1.string()}) == 0);
        REQUIRE(run_cli({"gen", "--config", cfg.string(), "--count", "3",
                         "--out", out2.string()}) == 0);
        CHECK(identical_trees(out1, out2));
    }
    SUBCASE("bad config key exits 2 and names the key") {
        const fs::path bad = tmp.path / "bad.toml";
        std::ofstream(bad) << "[scene]\nwobble = 3\n";
        CHECK(run_cli({"gen", "--config", bad.string(), "--count", "1",
                       "--out", (tmp.path / "x").string()}) == 2);
    }
    SUBCASE("missing config file exits 3") {
        CHECK(run_cli({"gen", "--config", (tmp.path / "absent.toml").string(), "--count", "1",
                       "--out", (tmp.path / "x").string()}) == 3);
    }
    SUBCASE("usage error exits 2") {
        CHECK(run_cli({"gen", "--config", cfg.string()}) == 2);
    }
}

TEST_CASE("cli fill") {
    TempDir tmp("irdseg_cli_fill");
    const fs::path cfg = tmp.path / "cfg.toml";
    std::ofstream(cfg) << kTinyConfig;
    const fs::path ds = tmp.path / "ds";
    REQUIRE(run_cli({"gen", "--config", cfg.string(), "--count", "2",
                     "--out", ds.string()}) == 0);
    const fs::path out = tmp.path / "filled";
    CHECK(run_cli({"fill", "--in", ds.string(), "--out", out.string(), "--tol", "1e-8"}) == 0);
    CHECK(fs::exists(out / "000000" / "depth_filled.pfm"));
    CHECK(fs::exists(out / "000001" / "depth_filled.pfm"));
    SUBCASE("bad neighbors flag exits 2") {
        CHECK(run_cli({"fill", "--in", ds.string(), "--out", out.string(),
                       "--neighbors", "5"}) == 2);
    }
}

TEST_CASE("cli train and eval") {
    TempDir tmp("irdseg_cli_train");
    const fs::path cfg = tmp.path / "cfg.toml";
    std::ofstream(cfg) << kTinyConfig;
    const fs::path ds = tmp.path / "ds";
    REQUIRE(run_cli({"gen", "--config", cfg.string(), "--count", "4",
                     "--out", ds.string()}) == 0);

    SUBCASE("training writes history, checkpoint, and echo; reruns identical") {
        const fs::path out1 = tmp.path / "run1";
        const fs::path out2 = tmp.path / "run2";
        REQUIRE(run_cli({"train", "--config", cfg.string(), "--data", ds.string(),
                         "--out", out1.string()}) == 0);
        REQUIRE(run_cli({"train", "--config", cfg.string(), "--data", ds.string(),
                         "--out", out2.string()}) == 0);
        CHECK(fs::exists(out1 / "history.tsv"));
        CHECK(fs::exists(out1 / "checkpoint.irdm"));
        CHECK(fs::exists(out1 / "config.toml"));
        CHECK(slurp(out1 / "history.tsv") == slurp(out2 / "history.tsv"));
        CHECK(slurp(out1 / "checkpoint.irdm") == slurp(out2 / "checkpoint.irdm"));

        // evaluation emits a report whose record line parses back
        const fs::path report = tmp.path / "report.txt";
        CHECK(run_cli({"eval", "--ckpt", (out1 / "checkpoint.irdm").string(),
                       "--data", ds.string(), "--report", report.string()}) == 0);
        const std::string text = slurp(report);
        const std::size_t last_nl = text.rfind('\n', text.size() - 2);
        const std::string record = text.substr(last_nl + 1);
        const irdseg::MetricReport r = irdseg::parse_metric_record(
            record.substr(0, record.find('\n')));
        CHECK(r.pixel_acc >= 0.0);
        CHECK(r.pixel_acc <= 100.0);
    }
    SUBCASE("mode sweep writes one run per mode plus a comparison record") {
        const fs::path out = tmp.path / "sweep";
        REQUIRE(run_cli({"train", "--config", cfg.string(), "--data", ds.string(),
                         "--out", out.string(), "--sweep", "standard,da-shape"}) == 0);
        CHECK(fs::exists(out / "standard" / "checkpoint.irdm"));
        CHECK(fs::exists(out / "da-shape" / "checkpoint.irdm"));
        CHECK(fs::exists(out / "comparison.txt"));
    }
    SUBCASE("lr 0 training keeps parameters equal to init") {
        const fs::path zero_cfg = tmp.path / "zero.toml";
        std::ofstream(zero_cfg) << "seed = 5\n[scene]\nheight = 16\nwidth = 16\n"
                                   "n_classes = 4\nmin_primitives = 1\nmax_primitives = 2\n"
                                   "[network]\nencoder_channels = [4, 8]\n"
                                   "conv_mode = \"da-shape\"\n"
                                   "[train]\nepochs = 1\nbatch_size = 2\nlearning_rate = 0.0\n";
        const fs::path out = tmp.path / "zero_run";
        REQUIRE(run_cli({"train", "--config", zero_cfg.string(), "--data", ds.string(),
                         "--out", out.string()}) == 0);
        // a second run with zero epochs gives the untouched init
        const fs::path init_cfg = tmp.path / "init.toml";
        std::ofstream(init_cfg) << "seed = 5\n[scene]\nheight = 16\nwidth = 16\n"
                                   "n_classes = 4\nmin_primitives = 1\nmax_primitives = 2\n"
                                   "[network]\nencoder_channels = [4, 8]\n"
                                   "conv_mode = \"da-shape\"\n"
                                   "[train]\nepochs = 0\nbatch_size = 2\nlearning_rate = 0.5\n";
        const fs::path init_out = tmp.path / "init_run";
        REQUIRE(run_cli({"train", "--config", init_cfg.string(), "--data", ds.string(),
                         "--out", init_out.string()}) == 0);
        CHECK(slurp(out / "checkpoint.irdm") == slurp(init_out / "checkpoint.irdm"));
    }
}

TEST_CASE("cli gradcheck") {
    CHECK(run_cli({"gradcheck", "--op", "da-shape", "--trials", "4", "--tol", "1e-4"}) == 0);
    CHECK(run_cli({"gradcheck", "--op", "shape", "--trials", "3", "--tol", "1e-4"}) == 0);
    CHECK(run_cli({"gradcheck", "--op", "depth-aware", "--trials", "3", "--tol", "1e-4"}) == 0);
    SUBCASE("an impossible tolerance fails honestly with exit 4") {
        CHECK(run_cli({"gradcheck", "--op", "da-shape", "--trials", "2", "--tol", "1e-15"}) == 4);
    }
    SUBCASE("unknown operator exits 2") {
        CHECK(run_cli({"gradcheck", "--op", "fourier", "--trials", "2"}) == 2);
    }
}
