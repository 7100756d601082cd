// PFM (Middlebury-convention float maps) and binary PPM/PGM images.
#pragma once

#include <string>

#include "mgev/tensor.hpp"

namespace mgev {

// "Pf" grayscale float map; rows stored bottom-to-top; scale sign encodes
// endianness. Returns [H,W]. Malformed files are rejected with the byte
// offset of the problem.
Tensor read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor& map);

// binary P6, maxval 255, values scaled to [0,1]; returns [3,H,W]
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& img);

// binary P5, maxval 255, values scaled to [0,1]; returns [H,W]
Tensor read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& map);

// P6 or P5 (grayscale replicated across channels) -> [3,H,W]
Tensor read_image(const std::string& path);

// volume dump: [D,H,W] writes <prefix>_b<bin>.pfm per bin; [G,D,H,W] writes
// <prefix>_g<group>_b<bin>.pfm
void write_pfm_stack(const std::string& dir, const std::string& prefix, const Tensor& volume);

}  // namespace mgev
