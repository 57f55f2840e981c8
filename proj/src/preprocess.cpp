#include "irdseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace irdseg {

Tensor normalize_ir(const Tensor& ir) {
    if (ir.rank() != 2 || ir.size() == 0) throw std::invalid_argument("normalize_ir: empty image");
    std::vector<double> sorted(ir.values());
    for (double v : sorted) {
        if (v < 0.0) throw std::invalid_argument("normalize_ir: negative intensity");
    }
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    // nearest-rank percentile: the ceil(0.99*N)-th order statistic
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n)));
    const double p99 = sorted[std::max<std::size_t>(rank, 1) - 1];
    const double lo = sorted.front();

    Tensor out(ir.shape());
    if (p99 == lo) return out;
    const double span = p99 - lo;
    for (std::size_t i = 0; i < ir.size(); ++i) {
        const double clipped = std::min(ir[i], p99);
        out[i] = 255.0 * ((clipped - lo) / span);
    }
    return out;
}

Tensor histogram_equalize(const Tensor& img) {
    if (img.rank() != 2 || img.size() == 0) {
        throw std::invalid_argument("histogram_equalize: empty image");
    }
    std::size_t hist[256] = {0};
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = img[i];
        if (v < 0.0 || v > 255.0) {
            throw std::invalid_argument("histogram_equalize: value outside [0,255]");
        }
        ++hist[static_cast<std::size_t>(std::floor(v))];
    }
    const std::size_t n = img.size();
    std::size_t cdf[256];
    std::size_t acc = 0;
    std::size_t cdf_min = 0;
    for (std::size_t b = 0; b < 256; ++b) {
        acc += hist[b];
        cdf[b] = acc;
        if (cdf_min == 0 && hist[b] > 0) cdf_min = cdf[b];
    }
    Tensor out(img.shape());
    if (cdf_min == n) {
        out.values() = img.values();  // single occupied bin
        return out;
    }
    const double denom = static_cast<double>(n - cdf_min);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const std::size_t b = static_cast<std::size_t>(std::floor(img[i]));
        out[i] = std::round(255.0 * (static_cast<double>(cdf[b] - cdf_min) / denom));
    }
    return out;
}

Tensor gamma_correct(const Tensor& img, double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
    Tensor out(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = img[i];
        if (v < 0.0 || v > 255.0) throw std::invalid_argument("gamma_correct: value outside [0,255]");
        out[i] = 255.0 * std::pow(v / 255.0, gamma);
    }
    return out;
}

Tensor center_crop(const Tensor& img, std::size_t out_h, std::size_t out_w) {
    if (img.rank() != 2 && img.rank() != 3) {
        throw std::invalid_argument("center_crop: expected rank 2 or 3");
    }
    const std::size_t h = img.extent(0);
    const std::size_t w = img.extent(1);
    const std::size_t c = img.rank() == 3 ? img.extent(2) : 1;
    if (out_h > h || out_w > w) throw std::invalid_argument("crop larger than image");
    const std::size_t top = (h - out_h) / 2;
    const std::size_t left = (w - out_w) / 2;

    std::vector<std::size_t> shape = img.rank() == 3
                                         ? std::vector<std::size_t>{out_h, out_w, c}
                                         : std::vector<std::size_t>{out_h, out_w};
    Tensor out(shape);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double* src = img.data() + ((top + y) * w + left) * c;
        double* dst = out.data() + y * out_w * c;
        std::copy(src, src + out_w * c, dst);
    }
    return out;
}

Tensor missing_mask(const Tensor& depth) {
    Tensor mask(depth.shape());
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (depth[i] < 0.0) throw std::invalid_argument("missing_mask: negative depth");
        mask[i] = depth[i] == 0.0 ? 1.0 : 0.0;
    }
    return mask;
}

}  // namespace irdseg
