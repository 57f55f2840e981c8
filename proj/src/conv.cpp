#include "irdseg/conv.hpp"

#include <stdexcept>
#include <string>

#include "irdseg/gemm.hpp"

namespace irdseg {

namespace {

void check_rank3(const Tensor& input, const ConvGeometry& geom) {
    if (input.rank() != 3) throw std::invalid_argument("conv input must be rank 3 (H x W x C)");
    if (input.extent(2) != geom.in_channels) {
        throw std::invalid_argument("conv input channels mismatch geometry");
    }
}

void check_kernel(const Tensor& kernel, const ConvGeometry& geom) {
    if (kernel.rank() != 4 || kernel.extent(0) != geom.kernel_h ||
        kernel.extent(1) != geom.kernel_w || kernel.extent(2) != geom.in_channels ||
        kernel.extent(3) != geom.out_channels) {
        throw std::invalid_argument("kernel shape mismatch geometry");
    }
}

}  // namespace

Tensor im2col(const Tensor& input, const ConvGeometry& geom) {
    check_rank3(input, geom);
    const std::size_t h = input.extent(0);
    const std::size_t w = input.extent(1);
    const std::size_t c = geom.in_channels;
    const std::size_t out_h = geom.out_height(h);
    const std::size_t out_w = geom.out_width(w);
    const std::size_t cols = geom.taps() * c;

    Tensor patches({out_h * out_w, cols});
    const double* src = input.data();
    double* dst = patches.data();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geom.padding);

    for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double* row = dst + (oy * out_w + ox) * cols;
            const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * geom.stride) - pad;
            const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * geom.stride) - pad;
            for (std::size_t kh = 0; kh < geom.kernel_h; ++kh) {
                const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(kh);
                for (std::size_t kw = 0; kw < geom.kernel_w; ++kw) {
                    const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(kw);
                    double* cell = row + (kh * geom.kernel_w + kw) * c;
                    if (y >= 0 && y < static_cast<std::ptrdiff_t>(h) && x >= 0 &&
                        x < static_cast<std::ptrdiff_t>(w)) {
                        const double* px = src + (static_cast<std::size_t>(y) * w +
                                                  static_cast<std::size_t>(x)) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) cell[ch] = px[ch];
                    } else {
                        for (std::size_t ch = 0; ch < c; ++ch) cell[ch] = 0.0;
                    }
                }
            }
        }
    }
    return patches;
}

Tensor col2im(const Tensor& patches, std::size_t in_h, std::size_t in_w,
              const ConvGeometry& geom) {
    const std::size_t c = geom.in_channels;
    const std::size_t out_h = geom.out_height(in_h);
    const std::size_t out_w = geom.out_width(in_w);
    const std::size_t cols = geom.taps() * c;
    if (patches.rank() != 2 || patches.extent(0) != out_h * out_w ||
        patches.extent(1) != cols) {
        throw std::invalid_argument("col2im patch matrix shape mismatch");
    }

    Tensor image({in_h, in_w, c});
    const double* src = patches.data();
    double* dst = image.data();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geom.padding);

    for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double* row = src + (oy * out_w + ox) * cols;
            const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * geom.stride) - pad;
            const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * geom.stride) - pad;
            for (std::size_t kh = 0; kh < geom.kernel_h; ++kh) {
                const std::ptrdiff_t y = y0 + static_cast<std::ptrdiff_t>(kh);
                if (y < 0 || y >= static_cast<std::ptrdiff_t>(in_h)) continue;
                for (std::size_t kw = 0; kw < geom.kernel_w; ++kw) {
                    const std::ptrdiff_t x = x0 + static_cast<std::ptrdiff_t>(kw);
                    if (x < 0 || x >= static_cast<std::ptrdiff_t>(in_w)) continue;
                    const double* cell = row + (kh * geom.kernel_w + kw) * c;
                    double* px = dst + (static_cast<std::size_t>(y) * in_w +
                                        static_cast<std::size_t>(x)) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) px[ch] += cell[ch];
                }
            }
        }
    }
    return image;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& geom) {
    check_rank3(input, geom);
    check_kernel(kernel, geom);
    const std::size_t out_h = geom.out_height(input.extent(0));
    const std::size_t out_w = geom.out_width(input.extent(1));

    const Tensor patches = im2col(input, geom);
    Tensor output({out_h, out_w, geom.out_channels});
    // Row-major Kh x Kw x Cin x Cout is already the (taps*Cin) x Cout matrix
    // that matches im2col's column order.
    gemm_nn(patches.data(), kernel.data(), output.data(), out_h * out_w,
            geom.taps() * geom.in_channels, geom.out_channels);
    return output;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                            const ConvGeometry& geom, const Tensor& grad_out) {
    check_rank3(input, geom);
    check_kernel(kernel, geom);
    const std::size_t h = input.extent(0);
    const std::size_t w = input.extent(1);
    const std::size_t out_h = geom.out_height(h);
    const std::size_t out_w = geom.out_width(w);
    if (grad_out.rank() != 3 || grad_out.extent(0) != out_h || grad_out.extent(1) != out_w ||
        grad_out.extent(2) != geom.out_channels) {
        throw std::invalid_argument("grad_out shape mismatch conv output");
    }

    const std::size_t rows = out_h * out_w;
    const std::size_t cols = geom.taps() * geom.in_channels;
    const Tensor patches = im2col(input, geom);

    Conv2dGrads grads;
    grads.kernel = Tensor({geom.kernel_h, geom.kernel_w, geom.in_channels, geom.out_channels});
    gemm_tn(patches.data(), grad_out.data(), grads.kernel.data(), rows, cols,
            geom.out_channels);

    Tensor grad_patches({rows, cols});
    gemm_nt(grad_out.data(), kernel.data(), grad_patches.data(), rows, geom.out_channels, cols);
    grads.input = col2im(grad_patches, h, w, geom);
    return grads;
}

}  // namespace irdseg
