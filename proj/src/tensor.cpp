#include "irdseg/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "irdseg/errors.hpp"

namespace irdseg {

namespace {

std::size_t checked_element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e != 0 && n > std::numeric_limits<std::size_t>::max() / e) {
            throw std::invalid_argument("tensor shape overflows flat index space");
        }
        n *= e;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(checked_element_count(shape_), fill) {}

Tensor Tensor::random_uniform(std::vector<std::size_t> shape, Prng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::random_normal(std::vector<std::size_t> shape, Prng& rng, double mean,
                             double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.normal(mean, stddev);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double value) {
    for (double& v : data_) v = value;
}

ConvGeometry::ConvGeometry(std::size_t kh, std::size_t kw, std::size_t stride_,
                           std::size_t padding_, std::size_t cin, std::size_t cout)
    : kernel_h(kh), kernel_w(kw), stride(stride_), padding(padding_),
      in_channels(cin), out_channels(cout) {
    if (kernel_h == 0 || kernel_h % 2 == 0 || kernel_w == 0 || kernel_w % 2 == 0) {
        throw std::invalid_argument("kernel extents must be odd and >= 1");
    }
    if (stride == 0) throw std::invalid_argument("stride must be >= 1");
    if (in_channels == 0 || out_channels == 0) {
        throw std::invalid_argument("channel counts must be >= 1");
    }
}

namespace {

std::size_t out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                       std::size_t padding) {
    const std::size_t padded = in + 2 * padding;
    if (padded < kernel) throw std::invalid_argument("kernel larger than padded input");
    const std::size_t span = padded - kernel;
    if (span % stride != 0) {
        throw std::invalid_argument("non-integral convolution output extent");
    }
    return span / stride + 1;
}

}  // namespace

std::size_t ConvGeometry::out_height(std::size_t in_h) const {
    return out_extent(in_h, kernel_h, stride, padding);
}

std::size_t ConvGeometry::out_width(std::size_t in_w) const {
    return out_extent(in_w, kernel_w, stride, padding);
}

namespace {

constexpr char kTensorMagic[4] = {'I', 'R', 'D', 'T'};
constexpr std::uint32_t kTensorVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& ctx) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError(ctx + ": truncated u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& ctx) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError(ctx + ": truncated u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kTensorMagic, 4);
    put_u32(out, kTensorVersion);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u64(out, e);
    for (double v : t.values()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(out, bits);
    }
}

Tensor read_tensor(std::istream& in, const std::string& context) {
    const std::string ctx = context.empty() ? "tensor" : context;
    char magic[4];
    if (!in.read(magic, 4)) throw IoError(ctx + ": truncated magic at offset 0");
    if (std::memcmp(magic, kTensorMagic, 4) != 0) {
        throw IoError(ctx + ": bad magic bytes at offset 0 (expected IRDT)");
    }
    const std::uint32_t version = get_u32(in, ctx);
    if (version != kTensorVersion) {
        throw IoError(ctx + ": unsupported tensor format version " + std::to_string(version));
    }
    const std::uint32_t rank = get_u32(in, ctx);
    if (rank > 8) throw IoError(ctx + ": implausible tensor rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<std::size_t>(get_u64(in, ctx));
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const std::uint64_t bits = get_u64(in, ctx);
        double v;
        std::memcpy(&v, &bits, 8);
        t[i] = v;
    }
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    write_tensor(out, t);
    if (!out) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return read_tensor(in, path);
}

}  // namespace irdseg
