#include "irdseg/guided_conv.hpp"

#include <cmath>
#include <stdexcept>

#include "irdseg/conv.hpp"
#include "irdseg/gemm.hpp"

namespace irdseg {

GuidedConvParams GuidedConvParams::identity_init(Tensor kernel, double alpha) {
    if (kernel.rank() != 4) throw std::invalid_argument("kernel must be rank 4");
    GuidedConvParams p;
    const std::size_t d = kernel.extent(0) * kernel.extent(1);
    p.w_base = Tensor::full({kernel.extent(2), kernel.extent(3)}, 1.0);
    p.w_shape = Tensor({d, d});
    for (std::size_t i = 0; i < d; ++i) p.w_shape.at(i, i) = 1.0;
    p.kernel = std::move(kernel);
    p.alpha = alpha;
    p.validate();
    return p;
}

void GuidedConvParams::validate() const {
    if (kernel.rank() != 4) throw std::invalid_argument("kernel must be rank 4");
    const std::size_t d = taps();
    if (w_base.rank() != 2 || w_base.extent(0) != kernel.extent(2) ||
        w_base.extent(1) != kernel.extent(3)) {
        throw std::invalid_argument("w_base must be Cin x Cout");
    }
    if (w_shape.rank() != 2 || w_shape.extent(0) != d || w_shape.extent(1) != d) {
        throw std::invalid_argument("w_shape must be D x D with D = Kh*Kw");
    }
    if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
}

DepthGuidance DepthGuidance::from_depth(Tensor depth) {
    if (depth.rank() != 2) throw std::invalid_argument("depth map must be rank 2");
    DepthGuidance g;
    g.validity = Tensor(depth.shape());
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (depth[i] < 0.0) throw std::invalid_argument("depth must be nonnegative");
        g.validity[i] = depth[i] > 0.0 ? 1.0 : 0.0;
    }
    g.depth = std::move(depth);
    return g;
}

void DepthGuidance::validate() const {
    if (depth.rank() != 2 || !depth.same_shape(validity)) {
        throw std::invalid_argument("depth and validity must be rank-2 and same shape");
    }
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (depth[i] < 0.0) throw std::invalid_argument("depth must be nonnegative");
        if (validity[i] == 0.0 && depth[i] != 0.0) {
            throw std::invalid_argument("depth must be 0 where validity is 0");
        }
    }
}

KernelDecomposition decompose_kernel(const Tensor& kernel) {
    if (kernel.rank() != 4) throw std::invalid_argument("kernel must be rank 4");
    const std::size_t kh = kernel.extent(0);
    const std::size_t kw = kernel.extent(1);
    const std::size_t cin = kernel.extent(2);
    const std::size_t cout = kernel.extent(3);
    const std::size_t d = kh * kw;

    KernelDecomposition out;
    out.base = Tensor({cin, cout});
    out.shape = Tensor(kernel.shape());

    const std::size_t cc = cin * cout;
    for (std::size_t n = 0; n < d; ++n) {
        const double* tap = kernel.data() + n * cc;
        for (std::size_t p = 0; p < cc; ++p) out.base[p] += tap[p];
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t p = 0; p < cc; ++p) out.base[p] *= inv_d;
    for (std::size_t n = 0; n < d; ++n) {
        const double* tap = kernel.data() + n * cc;
        double* stap = out.shape.data() + n * cc;
        for (std::size_t p = 0; p < cc; ++p) stap[p] = tap[p] - out.base[p];
    }
    return out;
}

Tensor compose_kernel(const GuidedConvParams& params) {
    params.validate();
    const KernelDecomposition dec = decompose_kernel(params.kernel);
    const std::size_t d = params.taps();
    const std::size_t cc = params.kernel.extent(2) * params.kernel.extent(3);

    Tensor composed(params.kernel.shape());
    // shape product: composed[d] += sum_e w_shape[d,e] * k_shape[e], a
    // (D x D) * (D x Cin*Cout) product over the flattened tap axis.
    gemm_nn(params.w_shape.data(), dec.shape.data(), composed.data(), d, d, cc);
    for (std::size_t n = 0; n < d; ++n) {
        double* tap = composed.data() + n * cc;
        for (std::size_t p = 0; p < cc; ++p) tap[p] += params.w_base[p] * dec.base[p];
    }
    return composed;
}

namespace {

// Similarity rows aligned with im2col rows; entry [r, n] pairs the patch
// centre with tap n. Padded positions contribute 1.
Tensor similarity_matrix(const DepthGuidance& guide, double alpha, const ConvGeometry& geom,
                         std::size_t in_h, std::size_t in_w) {
    if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
    if (guide.depth.rank() != 2 || guide.depth.extent(0) != in_h ||
        guide.depth.extent(1) != in_w) {
        throw std::invalid_argument("guidance depth extent mismatch input");
    }
    const std::size_t out_h = geom.out_height(in_h);
    const std::size_t out_w = geom.out_width(in_w);
    const std::size_t d = geom.taps();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geom.padding);
    const std::ptrdiff_t ch = static_cast<std::ptrdiff_t>(geom.kernel_h / 2);
    const std::ptrdiff_t cw = static_cast<std::ptrdiff_t>(geom.kernel_w / 2);

    Tensor sim({out_h * out_w, d}, 1.0);
    if (alpha == 0.0) return sim;

    const double* depth = guide.depth.data();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * geom.stride) - pad;
            const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * geom.stride) - pad;
            const std::ptrdiff_t yc = y0 + ch;
            const std::ptrdiff_t xc = x0 + cw;
            if (yc < 0 || yc >= static_cast<std::ptrdiff_t>(in_h) || xc < 0 ||
                xc >= static_cast<std::ptrdiff_t>(in_w)) {
                continue;  // centre in padding: row stays all ones
            }
            const double dc = depth[static_cast<std::size_t>(yc) * in_w +
                                    static_cast<std::size_t>(xc)];
            double* row = sim.data() + (oy * out_w + ox) * d;
            for (std::size_t kh = 0; kh < geom.kernel_h; ++kh) {
                const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(kh);
                if (y < 0 || y >= static_cast<std::ptrdiff_t>(in_h)) continue;
                for (std::size_t kw = 0; kw < geom.kernel_w; ++kw) {
                    const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(kw);
                    if (x < 0 || x >= static_cast<std::ptrdiff_t>(in_w)) continue;
                    const double dn = depth[static_cast<std::size_t>(y) * in_w +
                                            static_cast<std::size_t>(x)];
                    row[kh * geom.kernel_w + kw] = std::exp(-alpha * std::abs(dc - dn));
                }
            }
        }
    }
    return sim;
}

// patches[r, n*C+c] *= sim[r, n]
void scale_patches(Tensor& patches, const Tensor& sim, std::size_t channels) {
    const std::size_t rows = patches.extent(0);
    const std::size_t d = sim.extent(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double* prow = patches.data() + r * d * channels;
        const double* srow = sim.data() + r * d;
        for (std::size_t n = 0; n < d; ++n) {
            const double f = srow[n];
            if (f == 1.0) continue;
            double* cell = prow + n * channels;
            for (std::size_t c = 0; c < channels; ++c) cell[c] *= f;
        }
    }
}

// Grad wrt kernel tensor K given grad wrt the modulated patch product, i.e.
// grad_kflat = patches_scaled^T * grad_out; grad_input via col2im of
// (grad_out * K^T) rescaled by the similarity.
struct CoreGrads {
    Tensor input;
    Tensor effective_kernel;  // grad wrt whatever kernel was convolved
};

CoreGrads modulated_conv_backward(const Tensor& input, const Tensor& effective_kernel,
                                  const Tensor& sim, const ConvGeometry& geom,
                                  const Tensor& grad_out) {
    const std::size_t h = input.extent(0);
    const std::size_t w = input.extent(1);
    const std::size_t rows = geom.out_height(h) * geom.out_width(w);
    const std::size_t cols = geom.taps() * geom.in_channels;

    Tensor patches = im2col(input, geom);
    scale_patches(patches, sim, geom.in_channels);

    CoreGrads grads;
    grads.effective_kernel = Tensor(effective_kernel.shape());
    gemm_tn(patches.data(), grad_out.data(), grads.effective_kernel.data(), rows, cols,
            geom.out_channels);

    Tensor grad_patches({rows, cols});
    gemm_nt(grad_out.data(), effective_kernel.data(), grad_patches.data(), rows,
            geom.out_channels, cols);
    scale_patches(grad_patches, sim, geom.in_channels);
    grads.input = col2im(grad_patches, h, w, geom);
    return grads;
}

void check_grad_out(const Tensor& grad_out, const Tensor& input, const ConvGeometry& geom) {
    if (grad_out.rank() != 3 || grad_out.extent(0) != geom.out_height(input.extent(0)) ||
        grad_out.extent(1) != geom.out_width(input.extent(1)) ||
        grad_out.extent(2) != geom.out_channels) {
        throw std::invalid_argument("grad_out shape mismatch forward output");
    }
}

// Chain grad wrt the composed kernel K_BS back to (kernel, w_base, w_shape).
void chain_through_composition(const GuidedConvParams& params, const Tensor& grad_composed,
                               GuidedConvGrads& out) {
    const KernelDecomposition dec = decompose_kernel(params.kernel);
    const std::size_t d = params.taps();
    const std::size_t cin = params.kernel.extent(2);
    const std::size_t cout = params.kernel.extent(3);
    const std::size_t cc = cin * cout;
    const double inv_d = 1.0 / static_cast<double>(d);

    // dL/dw_base[c,o] = k_base[c,o] * sum_d g[d,c,o]
    out.w_base = Tensor({cin, cout});
    std::vector<double> tap_sum(cc, 0.0);
    for (std::size_t n = 0; n < d; ++n) {
        const double* g = grad_composed.data() + n * cc;
        for (std::size_t p = 0; p < cc; ++p) tap_sum[p] += g[p];
    }
    for (std::size_t p = 0; p < cc; ++p) out.w_base[p] = dec.base[p] * tap_sum[p];

    // dL/dw_shape[d,e] = sum_{c,o} g[d,c,o] * k_shape[e,c,o]
    out.w_shape = Tensor({d, d});
    gemm_nt(grad_composed.data(), dec.shape.data(), out.w_shape.data(), d, cc, d);

    // dL/dkernel[m,c,o] = (W_S^T g)[m,c,o]
    //   + (w_base[c,o] * sum_d g[d,c,o] - sum_e (W_S^T g)[e,c,o]) / D
    out.kernel = Tensor(params.kernel.shape());
    gemm_tn(params.w_shape.data(), grad_composed.data(), out.kernel.data(), d, d, cc);
    std::vector<double> wtg_sum(cc, 0.0);
    for (std::size_t n = 0; n < d; ++n) {
        const double* g = out.kernel.data() + n * cc;
        for (std::size_t p = 0; p < cc; ++p) wtg_sum[p] += g[p];
    }
    for (std::size_t n = 0; n < d; ++n) {
        double* g = out.kernel.data() + n * cc;
        for (std::size_t p = 0; p < cc; ++p) {
            g[p] += (params.w_base[p] * tap_sum[p] - wtg_sum[p]) * inv_d;
        }
    }
}

}  // namespace

Tensor depth_similarity(const DepthGuidance& guide, double alpha, const ConvGeometry& geom,
                        std::size_t in_h, std::size_t in_w) {
    Tensor sim = similarity_matrix(guide, alpha, geom, in_h, in_w);
    const std::size_t out_h = geom.out_height(in_h);
    const std::size_t out_w = geom.out_width(in_w);
    Tensor shaped({out_h, out_w, geom.taps()});
    shaped.values() = sim.values();
    return shaped;
}

Tensor shape_conv_forward(const Tensor& input, const GuidedConvParams& params,
                          const ConvGeometry& geom) {
    return conv2d(input, compose_kernel(params), geom);
}

Tensor depth_aware_conv_forward(const Tensor& input, const Tensor& kernel,
                                const DepthGuidance& guide, double alpha,
                                const ConvGeometry& geom) {
    const std::size_t h = input.extent(0);
    const std::size_t w = input.extent(1);
    const Tensor sim = similarity_matrix(guide, alpha, geom, h, w);

    Tensor patches = im2col(input, geom);
    scale_patches(patches, sim, geom.in_channels);
    Tensor output({geom.out_height(h), geom.out_width(w), geom.out_channels});
    gemm_nn(patches.data(), kernel.data(), output.data(), sim.extent(0),
            geom.taps() * geom.in_channels, geom.out_channels);
    return output;
}

Tensor da_shape_conv_forward(const Tensor& input, const GuidedConvParams& params,
                             const DepthGuidance& guide, const ConvGeometry& geom) {
    return depth_aware_conv_forward(input, compose_kernel(params), guide, params.alpha, geom);
}

GuidedConvGrads da_shape_conv_backward(const Tensor& input, const GuidedConvParams& params,
                                       const DepthGuidance& guide, const ConvGeometry& geom,
                                       const Tensor& grad_out) {
    check_grad_out(grad_out, input, geom);
    const Tensor sim =
        similarity_matrix(guide, params.alpha, geom, input.extent(0), input.extent(1));
    const Tensor composed = compose_kernel(params);
    CoreGrads core = modulated_conv_backward(input, composed, sim, geom, grad_out);

    GuidedConvGrads grads;
    grads.input = std::move(core.input);
    chain_through_composition(params, core.effective_kernel, grads);
    return grads;
}

GuidedConvGrads shape_conv_backward(const Tensor& input, const GuidedConvParams& params,
                                    const ConvGeometry& geom, const Tensor& grad_out) {
    check_grad_out(grad_out, input, geom);
    const std::size_t rows = geom.out_height(input.extent(0)) * geom.out_width(input.extent(1));
    const Tensor sim({rows, geom.taps()}, 1.0);
    const Tensor composed = compose_kernel(params);
    CoreGrads core = modulated_conv_backward(input, composed, sim, geom, grad_out);

    GuidedConvGrads grads;
    grads.input = std::move(core.input);
    chain_through_composition(params, core.effective_kernel, grads);
    return grads;
}

DepthAwareConvGrads depth_aware_conv_backward(const Tensor& input, const Tensor& kernel,
                                              const DepthGuidance& guide, double alpha,
                                              const ConvGeometry& geom, const Tensor& grad_out) {
    check_grad_out(grad_out, input, geom);
    const Tensor sim = similarity_matrix(guide, alpha, geom, input.extent(0), input.extent(1));
    CoreGrads core = modulated_conv_backward(input, kernel, sim, geom, grad_out);
    return DepthAwareConvGrads{std::move(core.input), std::move(core.effective_kernel)};
}

}  // namespace irdseg
