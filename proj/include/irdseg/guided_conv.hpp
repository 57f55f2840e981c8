#pragma once

#include "irdseg/tensor.hpp"

namespace irdseg {

// Learnables of one shape-composed convolution layer: the raw kernel plus the
// base reweighting (per channel pair) and the shape reweighting (a linear map
// over the flattened Kh*Kw tap grid, shared across channel pairs). alpha is
// the fixed depth-similarity strength, never trained.
struct GuidedConvParams {
    Tensor kernel;   // Kh x Kw x Cin x Cout
    Tensor w_base;   // Cin x Cout
    Tensor w_shape;  // D x D with D = Kh*Kw
    double alpha = 1.0;

    // w_base all ones, w_shape identity: the composed kernel equals the raw
    // kernel and every guided operator reduces to plain convolution at alpha=0.
    static GuidedConvParams identity_init(Tensor kernel, double alpha = 1.0);

    std::size_t taps() const { return kernel.extent(0) * kernel.extent(1); }
    void validate() const;
};

// Depth map plus per-pixel observation flag (1 = sensor returned a value).
// Missing pixels carry depth exactly 0.
struct DepthGuidance {
    Tensor depth;     // H x W
    Tensor validity;  // H x W of {0,1}

    static DepthGuidance from_depth(Tensor depth);
    void validate() const;
};

struct KernelDecomposition {
    Tensor base;   // Cin x Cout, spatial mean per channel pair
    Tensor shape;  // Kh x Kw x Cin x Cout, zero spatial mean per channel pair
};

// Split a kernel into its spatial mean and the zero-mean remainder.
KernelDecomposition decompose_kernel(const Tensor& kernel);

// Reassemble the effective kernel: base component scaled elementwise by
// w_base, shape component mixed across taps by w_shape.
Tensor compose_kernel(const GuidedConvParams& params);

// exp(-alpha * |D(center) - D(neighbor)|) per output pixel and tap, shape
// H_out x W_out x D. Taps whose neighbor (or the patch centre itself) falls
// in the zero padding get similarity 1.
Tensor depth_similarity(const DepthGuidance& guide, double alpha, const ConvGeometry& geom,
                        std::size_t in_h, std::size_t in_w);

// Convolution with the shape-composed kernel.
Tensor shape_conv_forward(const Tensor& input, const GuidedConvParams& params,
                          const ConvGeometry& geom);

// Convolution whose taps are modulated by depth similarity; the same
// modulation applies across all input channels. Bias-free.
Tensor depth_aware_conv_forward(const Tensor& input, const Tensor& kernel,
                                const DepthGuidance& guide, double alpha,
                                const ConvGeometry& geom);

// Depth-aware convolution using the shape-composed kernel.
Tensor da_shape_conv_forward(const Tensor& input, const GuidedConvParams& params,
                             const DepthGuidance& guide, const ConvGeometry& geom);

struct GuidedConvGrads {
    Tensor input;
    Tensor kernel;
    Tensor w_base;
    Tensor w_shape;
};

// Exact analytic gradients of sum(grad_out * forward). Depth similarity is a
// constant of the backward pass: nothing flows into the guidance map.
GuidedConvGrads da_shape_conv_backward(const Tensor& input, const GuidedConvParams& params,
                                       const DepthGuidance& guide, const ConvGeometry& geom,
                                       const Tensor& grad_out);

GuidedConvGrads shape_conv_backward(const Tensor& input, const GuidedConvParams& params,
                                    const ConvGeometry& geom, const Tensor& grad_out);

struct DepthAwareConvGrads {
    Tensor input;
    Tensor kernel;
};

DepthAwareConvGrads depth_aware_conv_backward(const Tensor& input, const Tensor& kernel,
                                              const DepthGuidance& guide, double alpha,
                                              const ConvGeometry& geom, const Tensor& grad_out);

}  // namespace irdseg
