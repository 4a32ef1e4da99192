#pragma once

#include "fdflare/tensor.hpp"

namespace fdflare::imaging {

// Bilinear resize with half-pixel centers: source coordinate for output
// pixel i is (i + 0.5) * in/out - 0.5, clamped to the source extent.
// Accepts [H,W] or [1,H,W]; returns the same rank.
Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w);

Tensor vflip(const Tensor& image);  // [1,H,W]; mirrors rows
Tensor hflip(const Tensor& image);  // [1,H,W]; mirrors columns

// Rotates image content counterclockwise by `degrees` about the image
// center ((H-1)/2, (W-1)/2), sampling bilinearly with zero fill outside.
Tensor rotate_bilinear(const Tensor& image, double degrees);  // [1,H,W]

// 8-bit grayscale (0..255) to the model range [-1, 1]: v/127.5 - 1.
Tensor normalize_gray8(const Tensor& image);
// Inverse mapping, without rounding.
Tensor denormalize_gray8(const Tensor& image);

// Renders a signed attribution map over a grayscale background (0..255)
// as [3,H,W] RGB in 0..255. Values are clipped at the 99th percentile of
// |map| (nearest-rank, k = max(1, ceil(0.99 n))), mapped through a
// blue-white-red linear colormap (t=-1 blue, 0 white, +1 red), and alpha
// blended at 0.5 over the background. Bit-exact given identical inputs.
Tensor render_overlay(const Tensor& gray255, const Tensor& map);

// Symmetric clipping threshold used by render_overlay.
double percentile99_abs(const Tensor& map);

}  // namespace fdflare::imaging
