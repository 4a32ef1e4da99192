#include "fdflare/png_io.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include <png.h>

namespace fdflare::pngio {

namespace {

unsigned char to_byte(double v) {
    const double r = std::nearbyint(v);
    if (r <= 0.0) return 0;
    if (r >= 255.0) return 255;
    return static_cast<unsigned char>(r);
}

void write_buffer(const std::string& path, const std::vector<unsigned char>& pixels,
                  png_uint_32 width, png_uint_32 height, int format) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = width;
    image.height = height;
    image.format = static_cast<png_uint_32>(format);
    if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw DataError("png write failed for " + path + ": " + msg);
    }
}

}  // namespace

Tensor read_gray(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw DataError("cannot read png " + path + ": " + msg);
    }
    image.format = PNG_FORMAT_RGB;  // canonical decode; luma applied below
    std::vector<unsigned char> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw DataError("malformed png " + path + ": " + msg);
    }
    const int64_t h = image.height, w = image.width;
    Tensor out(Shape{1, h, w});
    double* o = out.mutable_data();
    for (int64_t i = 0; i < h * w; ++i) {
        const unsigned char* p = pixels.data() + i * 3;
        const int luma = (299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000;
        o[i] = static_cast<double>(luma);
    }
    return out;
}

void write_gray(const std::string& path, const Tensor& image) {
    int64_t h, w;
    if (image.ndim() == 3 && image.dim(0) == 1) {
        h = image.dim(1);
        w = image.dim(2);
    } else if (image.ndim() == 2) {
        h = image.dim(0);
        w = image.dim(1);
    } else {
        throw ShapeError("write_gray expects [1,H,W] or [H,W], got " +
                         shape_to_string(image.shape()));
    }
    std::vector<unsigned char> pixels(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) pixels[static_cast<size_t>(i)] = to_byte(image[i]);
    write_buffer(path, pixels, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                 PNG_FORMAT_GRAY);
}

void write_rgb(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw ShapeError("write_rgb expects [3,H,W], got " + shape_to_string(image.shape()));
    const int64_t h = image.dim(1), w = image.dim(2);
    std::vector<unsigned char> pixels(static_cast<size_t>(3 * h * w));
    for (int64_t i = 0; i < h * w; ++i) {
        pixels[static_cast<size_t>(3 * i + 0)] = to_byte(image[i]);
        pixels[static_cast<size_t>(3 * i + 1)] = to_byte(image[h * w + i]);
        pixels[static_cast<size_t>(3 * i + 2)] = to_byte(image[2 * h * w + i]);
    }
    write_buffer(path, pixels, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
                 PNG_FORMAT_RGB);
}

}  // namespace fdflare::pngio
