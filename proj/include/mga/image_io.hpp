#pragma once

#include <string>

#include "mga/tensor.hpp"

namespace mga {

// Binary PPM/PGM with maxval 255. Values are [0,1] doubles; writing quantizes
// to bytes, so write/read round-trips within 1/255 (exactly for 0/1 masks).
void write_ppm(const std::string& path, const Tensor& rgb);   // [3,H,W]
Tensor read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& gray);  // [1,H,W]
Tensor read_pgm(const std::string& path);

// Flow field container: "FLO2" magic, u32 height, u32 width (little-endian),
// then row-major little-endian f32 (dx, dy) pairs. Lossless for f32 values.
void write_flo2(const std::string& path, const Tensor& flow);  // [2,H,W]
Tensor read_flo2(const std::string& path);

}  // namespace mga
