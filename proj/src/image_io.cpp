#include "irdseg/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "irdseg/errors.hpp"

namespace irdseg {

namespace {

std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return bytes;
}

[[noreturn]] void malformed(const std::string& path, std::size_t offset, const std::string& what) {
    throw IoError(path + ": " + what + " at byte offset " + std::to_string(offset));
}

// PGM header token: skips whitespace and '#' comments.
std::string next_token(const std::vector<char>& bytes, std::size_t& pos, const std::string& path) {
    while (pos < bytes.size()) {
        const char c = bytes[pos];
        if (c == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= bytes.size()) malformed(path, pos, "unexpected end of header");
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.begin() + start, bytes.begin() + pos);
}

std::size_t parse_size(const std::string& tok, const std::string& path, std::size_t offset) {
    std::size_t value = 0;
    for (char c : tok) {
        if (c < '0' || c > '9') malformed(path, offset, "non-numeric header field '" + tok + "'");
        value = value * 10 + static_cast<std::size_t>(c - '0');
    }
    return value;
}

}  // namespace

Tensor read_pgm(const std::string& path) {
    const std::vector<char> bytes = read_file(path);
    std::size_t pos = 0;
    const std::string magic = next_token(bytes, pos, path);
    if (magic != "P5") malformed(path, 0, "bad magic '" + magic + "' (expected P5)");
    const std::size_t w_off = pos;
    const std::size_t w = parse_size(next_token(bytes, pos, path), path, w_off);
    const std::size_t h_off = pos;
    const std::size_t h = parse_size(next_token(bytes, pos, path), path, h_off);
    const std::size_t m_off = pos;
    const std::size_t maxval = parse_size(next_token(bytes, pos, path), path, m_off);
    if (maxval == 0 || maxval > 65535) malformed(path, m_off, "maxval out of range");
    if (pos >= bytes.size()) malformed(path, pos, "missing pixel data");
    ++pos;  // single whitespace after maxval

    const std::size_t bpp = maxval > 255 ? 2 : 1;
    const std::size_t need = h * w * bpp;
    if (bytes.size() - pos < need) {
        malformed(path, bytes.size(), "truncated pixel data (need " + std::to_string(need) +
                                          " bytes from offset " + std::to_string(pos) + ")");
    }

    Tensor img({h, w});
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    if (bpp == 1) {
        for (std::size_t i = 0; i < h * w; ++i) img[i] = static_cast<double>(p[i]);
    } else {
        for (std::size_t i = 0; i < h * w; ++i) {
            img[i] = static_cast<double>((static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1]);
        }
    }
    return img;
}

namespace {

void write_pgm(const std::string& path, const Tensor& img, std::size_t maxval) {
    if (img.rank() != 2) throw std::invalid_argument("PGM image must be rank 2");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << img.extent(1) << " " << img.extent(0) << "\n" << maxval << "\n";
    const double lim = static_cast<double>(maxval);
    if (maxval > 255) {
        std::vector<unsigned char> buf(img.size() * 2);
        for (std::size_t i = 0; i < img.size(); ++i) {
            const double c = std::min(lim, std::max(0.0, std::round(img[i])));
            const std::uint16_t v = static_cast<std::uint16_t>(c);
            buf[2 * i] = static_cast<unsigned char>(v >> 8);
            buf[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    } else {
        std::vector<unsigned char> buf(img.size());
        for (std::size_t i = 0; i < img.size(); ++i) {
            buf[i] = static_cast<unsigned char>(std::min(lim, std::max(0.0, std::round(img[i]))));
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace

void write_pgm8(const std::string& path, const Tensor& img) { write_pgm(path, img, 255); }
void write_pgm16(const std::string& path, const Tensor& img) { write_pgm(path, img, 65535); }

Tensor read_pfm(const std::string& path) {
    const std::vector<char> bytes = read_file(path);
    std::size_t pos = 0;
    const std::string magic = next_token(bytes, pos, path);
    if (magic != "Pf") malformed(path, 0, "bad magic '" + magic + "' (expected Pf)");
    const std::size_t w_off = pos;
    const std::size_t w = parse_size(next_token(bytes, pos, path), path, w_off);
    const std::size_t h_off = pos;
    const std::size_t h = parse_size(next_token(bytes, pos, path), path, h_off);
    const std::string scale_tok = next_token(bytes, pos, path);
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (...) {
        malformed(path, pos, "bad scale '" + scale_tok + "'");
    }
    if (scale >= 0.0) malformed(path, pos, "big-endian PFM not supported (scale must be negative)");
    if (pos >= bytes.size()) malformed(path, pos, "missing pixel data");
    ++pos;

    const std::size_t need = h * w * 4;
    if (bytes.size() - pos < need) malformed(path, bytes.size(), "truncated pixel data");

    Tensor img({h, w});
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    for (std::size_t row = 0; row < h; ++row) {
        const std::size_t src_row = h - 1 - row;  // bottom-to-top storage
        for (std::size_t col = 0; col < w; ++col) {
            const unsigned char* b = p + (src_row * w + col) * 4;
            std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                 (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
            float f;
            std::memcpy(&f, &bits, 4);
            img.at(row, col) = static_cast<double>(f);
        }
    }
    return img;
}

void write_pfm(const std::string& path, const Tensor& img) {
    if (img.rank() != 2) throw std::invalid_argument("PFM image must be rank 2");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const std::size_t h = img.extent(0);
    const std::size_t w = img.extent(1);
    out << "Pf\n" << w << " " << h << "\n-1.0\n";
    std::vector<unsigned char> buf(h * w * 4);
    for (std::size_t row = 0; row < h; ++row) {
        const std::size_t dst_row = h - 1 - row;
        for (std::size_t col = 0; col < w; ++col) {
            const float f = static_cast<float>(img.at(row, col));
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            unsigned char* b = buf.data() + (dst_row * w + col) * 4;
            b[0] = static_cast<unsigned char>(bits);
            b[1] = static_cast<unsigned char>(bits >> 8);
            b[2] = static_cast<unsigned char>(bits >> 16);
            b[3] = static_cast<unsigned char>(bits >> 24);
        }
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace irdseg
