#include "fdflare/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace fdflare::imaging {

namespace {

constexpr double kPi = 3.14159265358979323846;

void plane_dims(const Tensor& image, int64_t& h, int64_t& w, bool& flat) {
    if (image.ndim() == 2) {
        h = image.dim(0);
        w = image.dim(1);
        flat = true;
    } else if (image.ndim() == 3 && image.dim(0) == 1) {
        h = image.dim(1);
        w = image.dim(2);
        flat = false;
    } else {
        throw ShapeError("expected [H,W] or [1,H,W], got " + shape_to_string(image.shape()));
    }
}

double sample_clamped(const double* p, int64_t h, int64_t w, double y, double x) {
    const double cy = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const double cx = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const int64_t y0 = static_cast<int64_t>(std::floor(cy));
    const int64_t x0 = static_cast<int64_t>(std::floor(cx));
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const int64_t x1 = std::min(x0 + 1, w - 1);
    const double fy = cy - static_cast<double>(y0);
    const double fx = cx - static_cast<double>(x0);
    const double top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
    const double bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
    return top * (1.0 - fy) + bot * fy;
}

// Zero outside the source extent instead of clamping.
double sample_zero_fill(const double* p, int64_t h, int64_t w, double y, double x) {
    if (y < -1.0 || x < -1.0 || y > static_cast<double>(h) || x > static_cast<double>(w))
        return 0.0;
    const int64_t y0 = static_cast<int64_t>(std::floor(y));
    const int64_t x0 = static_cast<int64_t>(std::floor(x));
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    auto at = [&](int64_t yy, int64_t xx) -> double {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
        return p[yy * w + xx];
    };
    const double top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    const double bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w) {
    int64_t h, w;
    bool flat;
    plane_dims(image, h, w, flat);
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize target must be positive");
    Tensor out(flat ? Shape{out_h, out_w} : Shape{1, out_h, out_w});
    double* o = out.mutable_data();
    const double* p = image.data();
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (int64_t y = 0; y < out_h; ++y)
        for (int64_t x = 0; x < out_w; ++x) {
            const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
            const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
            o[y * out_w + x] = sample_clamped(p, h, w, src_y, src_x);
        }
    return out;
}

Tensor vflip(const Tensor& image) {
    int64_t h, w;
    bool flat;
    plane_dims(image, h, w, flat);
    Tensor out(image.shape());
    double* o = out.mutable_data();
    const double* p = image.data();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) o[y * w + x] = p[(h - 1 - y) * w + x];
    return out;
}

Tensor hflip(const Tensor& image) {
    int64_t h, w;
    bool flat;
    plane_dims(image, h, w, flat);
    Tensor out(image.shape());
    double* o = out.mutable_data();
    const double* p = image.data();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) o[y * w + x] = p[y * w + (w - 1 - x)];
    return out;
}

Tensor rotate_bilinear(const Tensor& image, double degrees) {
    int64_t h, w;
    bool flat;
    plane_dims(image, h, w, flat);
    const double rad = degrees * kPi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = static_cast<double>(h - 1) / 2.0;
    const double cx = static_cast<double>(w - 1) / 2.0;
    Tensor out(image.shape());
    double* o = out.mutable_data();
    const double* p = image.data();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            // inverse map: rotate output coordinates clockwise into the source
            const double src_y = cy + c * dy + s * dx;
            const double src_x = cx - s * dy + c * dx;
            o[y * w + x] = sample_zero_fill(p, h, w, src_y, src_x);
        }
    return out;
}

Tensor normalize_gray8(const Tensor& image) {
    Tensor out(image.shape());
    double* o = out.mutable_data();
    for (int64_t i = 0; i < image.numel(); ++i) o[i] = image[i] / 127.5 - 1.0;
    return out;
}

Tensor denormalize_gray8(const Tensor& image) {
    Tensor out(image.shape());
    double* o = out.mutable_data();
    for (int64_t i = 0; i < image.numel(); ++i) o[i] = (image[i] + 1.0) * 127.5;
    return out;
}

double percentile99_abs(const Tensor& map) {
    const int64_t n = map.numel();
    if (n == 0) return 0.0;
    std::vector<double> mags(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) mags[static_cast<size_t>(i)] = std::fabs(map[i]);
    std::sort(mags.begin(), mags.end());
    const int64_t k =
        std::max<int64_t>(1, static_cast<int64_t>(std::ceil(0.99 * static_cast<double>(n))));
    return mags[static_cast<size_t>(k - 1)];
}

Tensor render_overlay(const Tensor& gray255, const Tensor& map) {
    int64_t h, w;
    bool flat;
    plane_dims(gray255, h, w, flat);
    int64_t mh, mw;
    bool mflat;
    plane_dims(map, mh, mw, mflat);
    if (mh != h || mw != w)
        throw ShapeError("overlay map shape " + shape_to_string(map.shape()) +
                         " does not match image " + shape_to_string(gray255.shape()));
    const double clip = percentile99_abs(map);
    Tensor out(Shape{3, h, w});
    double* o = out.mutable_data();
    const double* g = gray255.data();
    const double* m = map.data();
    const double alpha = 0.5;
    for (int64_t i = 0; i < h * w; ++i) {
        const double t = clip > 0.0 ? std::clamp(m[i] / clip, -1.0, 1.0) : 0.0;
        const double r = 255.0 * (t > 0.0 ? 1.0 : 1.0 + t);
        const double gg = 255.0 * (1.0 - std::fabs(t));
        const double b = 255.0 * (t < 0.0 ? 1.0 : 1.0 - t);
        o[i] = (1.0 - alpha) * g[i] + alpha * r;
        o[h * w + i] = (1.0 - alpha) * g[i] + alpha * gg;
        o[2 * h * w + i] = (1.0 - alpha) * g[i] + alpha * b;
    }
    return out;
}

}  // namespace fdflare::imaging
