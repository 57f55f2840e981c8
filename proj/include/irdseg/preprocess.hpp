#pragma once

#include "irdseg/tensor.hpp"

namespace irdseg {

// One raw ToF frame: infrared magnitudes and depth with 0 marking dropouts.
struct RawFrame {
    Tensor ir;     // H x W, >= 0, arbitrary sensor scale
    Tensor depth;  // H x W, >= 0, 0 = missing
};

// Clips at the 99th percentile (nearest-rank over all pixels), then maps
// [min, p99] linearly onto [0, 255]. Degenerate range gives all zeros.
Tensor normalize_ir(const Tensor& ir);

// Classic 256-bin CDF remap. Values binned by floor. A single occupied bin
// returns the input unchanged.
Tensor histogram_equalize(const Tensor& img);

// out = 255 * (in/255)^gamma
Tensor gamma_correct(const Tensor& img, double gamma);

// Centered crop; odd margins drop the extra row/column at the bottom/right.
// Accepts H x W or H x W x C.
Tensor center_crop(const Tensor& img, std::size_t out_h, std::size_t out_w);

// 1 exactly where depth == 0.
Tensor missing_mask(const Tensor& depth);

}  // namespace irdseg
