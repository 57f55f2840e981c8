#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "irdseg/prng.hpp"

namespace irdseg {

// Dense row-major f64 tensor (last axis fastest). Images and activations use
// the H x W x C layout, kernels Kh x Kw x Cin x Cout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value) {
        return Tensor(std::move(shape), value);
    }
    // Uniform in [lo, hi), deterministic per generator state.
    static Tensor random_uniform(std::vector<std::size_t> shape, Prng& rng,
                                 double lo = 0.0, double hi = 1.0);
    static Tensor random_normal(std::vector<std::size_t> shape, Prng& rng,
                                double mean = 0.0, double stddev = 1.0);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    void fill(double value);

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Geometry of one 2-D convolution. Odd kernel extents keep the patch centre
// pixel well defined; output extents must divide exactly (no implicit floor).
struct ConvGeometry {
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;

    ConvGeometry() = default;
    ConvGeometry(std::size_t kh, std::size_t kw, std::size_t stride_, std::size_t padding_,
                 std::size_t cin, std::size_t cout);

    std::size_t taps() const { return kernel_h * kernel_w; }
    // Throws std::invalid_argument when (extent + 2*padding - kernel) is not a
    // multiple of stride.
    std::size_t out_height(std::size_t in_h) const;
    std::size_t out_width(std::size_t in_w) const;
};

// Test-fixture / checkpoint tensor blob: "IRDT", u32 version=1, u32 rank,
// rank x u64 extents, little-endian f64 payload.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in, const std::string& context = "");
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace irdseg
