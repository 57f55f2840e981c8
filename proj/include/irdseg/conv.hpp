#pragma once

#include "irdseg/tensor.hpp"

namespace irdseg {

// Patch matrix of shape (H_out*W_out) x (Kh*Kw*Cin). Row r is the flattened
// receptive field of output pixel r (row-major over kh, kw, c); out-of-bounds
// positions read as zero.
Tensor im2col(const Tensor& input, const ConvGeometry& geom);

// Scatter-add inverse of im2col: accumulates a patch-matrix gradient back
// onto an H x W x Cin image.
Tensor col2im(const Tensor& patches, std::size_t in_h, std::size_t in_w,
              const ConvGeometry& geom);

// Standard zero-padded cross-correlation. Input H x W x Cin, kernel
// Kh x Kw x Cin x Cout, output H_out x W_out x Cout.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom);

struct Conv2dGrads {
    Tensor input;
    Tensor kernel;
};

// Gradients of sum(grad_out * conv2d(input, kernel)) with respect to both
// operands.
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                            const ConvGeometry& geom, const Tensor& grad_out);

}  // namespace irdseg
