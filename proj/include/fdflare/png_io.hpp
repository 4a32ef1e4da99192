#pragma once

#include <string>

#include "fdflare/tensor.hpp"

namespace fdflare::pngio {

// Decodes any 8/16-bit gray/palette/RGB(A) PNG to a single-channel tensor
// [1,H,W] with values in 0..255. Color images are collapsed with the
// integer luma y = (299R + 587G + 114B + 500) / 1000; alpha is ignored.
Tensor read_gray(const std::string& path);

// Writes [1,H,W] or [H,W] values as 8-bit grayscale; values are rounded to
// nearest and clamped to 0..255.
void write_gray(const std::string& path, const Tensor& image);

// Writes [3,H,W] values as 8-bit RGB with the same rounding and clamping.
void write_rgb(const std::string& path, const Tensor& image);

}  // namespace fdflare::pngio
