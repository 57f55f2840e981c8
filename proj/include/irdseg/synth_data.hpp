#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irdseg/tensor.hpp"

namespace irdseg {

// One dataset record. depth_raw carries 0 at punched holes; depth_filled_gt
// is the hole-free render the depth head learns from.
struct ImageSample {
    Tensor ir;               // H x W
    Tensor depth_raw;        // H x W, 0 = missing
    Tensor depth_filled_gt;  // H x W, > 0 everywhere
    Tensor labels;           // H x W class ids
    Tensor mask_missing;     // H x W of {0,1}, 1 where depth_raw == 0
};

// Scene recipe. Layered rectangles/ellipses over a planar background;
// primitives occupy disjoint depth bands so class boundaries always carry a
// depth step of at least min_depth_step. IR follows an inverse-square
// falloff of per-class albedo, so IR and depth co-vary in shape inside any
// single-class patch.
struct SceneConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t n_classes = 6;
    std::size_t min_primitives = 3;
    std::size_t max_primitives = 5;
    double depth_min = 0.5;
    double depth_max = 4.0;
    std::vector<double> albedo;  // per class; empty = evenly spaced defaults
    double ir_noise_sigma = 2.0;
    std::size_t min_holes = 2;
    std::size_t max_holes = 5;
    double hole_radius_min = 1.0;
    double hole_radius_max = 3.0;
    double min_depth_step = 0.3;
    std::uint64_t seed = 7;

    void validate() const;
    std::vector<double> effective_albedo() const;
};

// Pure function of (config, index): bitwise identical across runs and
// platforms via the project generator.
ImageSample generate_scene(const SceneConfig& config, std::uint64_t index);

// Layout: <dir>/manifest.txt plus one zero-padded subdirectory per sample
// holding ir.pgm (16-bit), depth.pgm (16-bit millidepth, 0 = missing),
// labels.pgm (8-bit), depth_filled.pfm.
void write_dataset(const SceneConfig& config, std::size_t count, const std::string& out_dir);
std::vector<ImageSample> read_dataset(const std::string& dir);

}  // namespace irdseg
