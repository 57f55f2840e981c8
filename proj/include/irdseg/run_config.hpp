#pragma once

#include <cstdint>
#include <string>

#include "irdseg/mtl_net.hpp"
#include "irdseg/synth_data.hpp"

namespace irdseg {

// Canonical text configuration for every CLI run. One top-level seed feeds
// derived streams for scene generation, weight init and batch shuffling.
// Unknown keys are rejected; canonical_text() is the effective-config echo
// written next to every run's outputs.
struct RunConfig {
    std::uint64_t seed = 7;
    SceneConfig scene;
    NetworkConfig network;

    struct Train {
        double learning_rate = 0.05;
        std::size_t epochs = 10;
        std::size_t batch_size = 4;
        double lambda_depth = 1.0;
    } train;

    struct Preprocess {
        bool enabled = false;
        bool equalize = true;
        double gamma = 0.8;
    } preprocess;

    struct Fill {
        double tol = 1e-8;
        std::size_t neighbors = 4;
    } fill;

    struct Paths {
        std::string data;
        std::string out;
    } paths;

    static RunConfig load(const std::string& path);
    static RunConfig from_text(const std::string& text, const std::string& origin = "config");

    // Re-derives the per-subsystem seeds from the top-level one; called after
    // any seed override.
    void reseed(std::uint64_t new_seed);

    std::string canonical_text() const;
};

}  // namespace irdseg
