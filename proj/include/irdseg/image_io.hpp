#pragma once

#include <string>

#include "irdseg/tensor.hpp"

namespace irdseg {

// Binary PGM (P5). 16-bit files use the format's big-endian sample order.
// Readers report the byte offset of whatever they choke on.
Tensor read_pgm(const std::string& path);                       // H x W, values 0..maxval
void write_pgm8(const std::string& path, const Tensor& img);    // rounds, clamps to 0..255
void write_pgm16(const std::string& path, const Tensor& img);   // rounds, clamps to 0..65535

// Grayscale PFM ("Pf"), 32-bit floats, scale -1.0 (little-endian), rows
// stored bottom-to-top as the format prescribes.
Tensor read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor& img);

}  // namespace irdseg
