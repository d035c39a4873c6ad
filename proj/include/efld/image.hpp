#pragma once

#include <filesystem>

#include "efld/tensor.hpp"

namespace efld {

/// Exact float value of an 8-bit sample; generators use it so that written
/// images read back bit-identically.
inline float from_byte(unsigned value, unsigned maxval = 255) { return float(value) / float(maxval); }

/// Images are (H, W, 3) float tensors with values in [0, 1].
/// Files are binary portable any-maps: P6 (RGB) or P5 (grey, replicated to RGB), 8-bit.
Tensorf read_image(const std::filesystem::path& path);

/// Writes an 8-bit P6 file; values are clamped to [0, 1] and rounded to k/255.
void write_image(const Tensorf& image, const std::filesystem::path& path);

/// Bilinear resampling with pixel-centre alignment (aspect ratio not preserved).
Tensorf resize_bilinear(const Tensorf& image, Index height, Index width);

}  // namespace efld
