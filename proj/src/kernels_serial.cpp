// Serial reference kernels. These are the ground truth the OpenMP variants
// are tested against; keep them straightforward loop nests.

#include "fdflare/kernels.hpp"

#include <cstring>

namespace fdflare::kernels::detail {

void conv2d_forward_serial(double* out, const double* in, const double* weight,
                           const double* bias, const ConvDims& d) {
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t k = 0; k < d.k; ++k) {
            const double* wk = weight + k * d.c * d.kh * d.kw;
            const double* in_n = in + n * d.c * d.h * d.w;
            double* out_p = out + (n * d.k + k) * d.oh * d.ow;
            const double b = bias ? bias[k] : 0.0;
            for (int64_t oy = 0; oy < d.oh; ++oy)
                for (int64_t ox = 0; ox < d.ow; ++ox) {
                    const int64_t y0 = oy * d.stride - d.pad;
                    const int64_t x0 = ox * d.stride - d.pad;
                    double acc = b;
                    if (y0 >= 0 && y0 + d.kh <= d.h && x0 >= 0 && x0 + d.kw <= d.w) {
                        // interior window: every tap is in bounds
                        for (int64_t c = 0; c < d.c; ++c) {
                            const double* in_c = in_n + (c * d.h + y0) * d.w + x0;
                            const double* w_c = wk + c * d.kh * d.kw;
                            for (int64_t dy = 0; dy < d.kh; ++dy) {
                                const double* row = in_c + dy * d.w;
                                const double* wr = w_c + dy * d.kw;
                                for (int64_t dx = 0; dx < d.kw; ++dx) acc += row[dx] * wr[dx];
                            }
                        }
                    } else {
                        const int64_t dy_lo = y0 < 0 ? -y0 : 0;
                        const int64_t dy_hi = y0 + d.kh > d.h ? d.h - y0 : d.kh;
                        const int64_t dx_lo = x0 < 0 ? -x0 : 0;
                        const int64_t dx_hi = x0 + d.kw > d.w ? d.w - x0 : d.kw;
                        for (int64_t c = 0; c < d.c; ++c) {
                            const double* in_c = in_n + (c * d.h + y0) * d.w + x0;
                            const double* w_c = wk + c * d.kh * d.kw;
                            for (int64_t dy = dy_lo; dy < dy_hi; ++dy) {
                                const double* row = in_c + dy * d.w;
                                const double* wr = w_c + dy * d.kw;
                                for (int64_t dx = dx_lo; dx < dx_hi; ++dx)
                                    acc += row[dx] * wr[dx];
                            }
                        }
                    }
                    out_p[oy * d.ow + ox] = acc;
                }
        }
}

void conv2d_backward_input_serial(double* grad_in, const double* grad_out,
                                  const double* weight, const ConvDims& d) {
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c; ++c)
            for (int64_t y = 0; y < d.h; ++y) {
                const int64_t ty = y + d.pad;
                // unit stride: dy is a contributor iff oy = ty - dy lands
                // in [0, oh); the clamped range skips exactly the taps the
                // checked scan skips, so the sum order is unchanged
                const int64_t dy_lo = ty - d.oh + 1 > 0 ? ty - d.oh + 1 : 0;
                const int64_t dy_hi = (ty < d.kh - 1 ? ty : d.kh - 1);
                for (int64_t x = 0; x < d.w; ++x) {
                    const int64_t tx = x + d.pad;
                    double acc = 0.0;
                    if (d.stride == 1) {
                        const int64_t dx_lo = tx - d.ow + 1 > 0 ? tx - d.ow + 1 : 0;
                        const int64_t dx_hi = (tx < d.kw - 1 ? tx : d.kw - 1);
                        for (int64_t k = 0; k < d.k; ++k) {
                            const double* g_k = grad_out + (n * d.k + k) * d.oh * d.ow;
                            const double* w_k = weight + (k * d.c + c) * d.kh * d.kw;
                            for (int64_t dy = dy_lo; dy <= dy_hi; ++dy) {
                                const double* g_row = g_k + (ty - dy) * d.ow + tx;
                                const double* w_row = w_k + dy * d.kw;
                                for (int64_t dx = dx_lo; dx <= dx_hi; ++dx)
                                    acc += g_row[-dx] * w_row[dx];
                            }
                        }
                    } else {
                        for (int64_t k = 0; k < d.k; ++k)
                            for (int64_t dy = 0; dy < d.kh; ++dy) {
                                const int64_t sy = ty - dy;
                                if (sy < 0 || sy % d.stride != 0) continue;
                                const int64_t oy = sy / d.stride;
                                if (oy >= d.oh) continue;
                                for (int64_t dx = 0; dx < d.kw; ++dx) {
                                    const int64_t sx = tx - dx;
                                    if (sx < 0 || sx % d.stride != 0) continue;
                                    const int64_t ox = sx / d.stride;
                                    if (ox >= d.ow) continue;
                                    acc += grad_out[((n * d.k + k) * d.oh + oy) * d.ow + ox] *
                                           weight[((k * d.c + c) * d.kh + dy) * d.kw + dx];
                                }
                            }
                    }
                    grad_in[((n * d.c + c) * d.h + y) * d.w + x] = acc;
                }
            }
}

namespace {

// Output positions whose tap `delta` stays inside an extent of `size`:
// o * stride - pad + delta must land in [0, size).
struct TapRange {
    int64_t lo = 0, hi = -1;  // inclusive; empty when lo > hi
};

TapRange tap_range(int64_t out_extent, int64_t stride, int64_t pad, int64_t delta,
                   int64_t size) {
    TapRange r;
    const int64_t num = pad - delta;
    r.lo = num > 0 ? (num + stride - 1) / stride : 0;
    const int64_t top = size - 1 - delta + pad;
    r.hi = top < 0 ? -1 : (top / stride < out_extent - 1 ? top / stride : out_extent - 1);
    return r;
}

}  // namespace

void conv2d_backward_weight_serial(double* grad_w, const double* grad_out,
                                   const double* in, const ConvDims& d) {
    for (int64_t k = 0; k < d.k; ++k)
        for (int64_t c = 0; c < d.c; ++c)
            for (int64_t dy = 0; dy < d.kh; ++dy) {
                const TapRange ry = tap_range(d.oh, d.stride, d.pad, dy, d.h);
                for (int64_t dx = 0; dx < d.kw; ++dx) {
                    const TapRange rx = tap_range(d.ow, d.stride, d.pad, dx, d.w);
                    double acc = 0.0;
                    for (int64_t n = 0; n < d.n; ++n) {
                        const double* g_k = grad_out + (n * d.k + k) * d.oh * d.ow;
                        const double* in_c = in + (n * d.c + c) * d.h * d.w;
                        for (int64_t oy = ry.lo; oy <= ry.hi; ++oy) {
                            const double* g_row = g_k + oy * d.ow;
                            const double* i_row =
                                in_c + (oy * d.stride - d.pad + dy) * d.w - d.pad + dx;
                            for (int64_t ox = rx.lo; ox <= rx.hi; ++ox)
                                acc += g_row[ox] * i_row[ox * d.stride];
                        }
                    }
                    grad_w[((k * d.c + c) * d.kh + dy) * d.kw + dx] = acc;
                }
            }
}

void conv2d_backward_bias_serial(double* grad_b, const double* grad_out, const ConvDims& d) {
    for (int64_t k = 0; k < d.k; ++k) {
        double acc = 0.0;
        for (int64_t n = 0; n < d.n; ++n)
            for (int64_t o = 0; o < d.oh * d.ow; ++o)
                acc += grad_out[(n * d.k + k) * d.oh * d.ow + o];
        grad_b[k] = acc;
    }
}

void maxpool2d_forward_serial(double* out, int64_t* argmax, const double* in,
                              int64_t n, int64_t c, int64_t h, int64_t w, int64_t kernel) {
    const int64_t oh = h / kernel, ow = w / kernel;
    for (int64_t i = 0; i < n * c; ++i)
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                const double* plane = in + i * h * w;
                int64_t best = (oy * kernel) * w + ox * kernel;
                double best_v = plane[best];
                for (int64_t dy = 0; dy < kernel; ++dy)
                    for (int64_t dx = 0; dx < kernel; ++dx) {
                        const int64_t idx = (oy * kernel + dy) * w + (ox * kernel + dx);
                        if (plane[idx] > best_v) {
                            best_v = plane[idx];
                            best = idx;
                        }
                    }
                const int64_t o = (i * oh + oy) * ow + ox;
                out[o] = best_v;
                argmax[o] = i * h * w + best;
            }
}

void maxpool2d_backward_serial(double* grad_in, const double* grad_out,
                               const int64_t* argmax, int64_t out_count) {
    for (int64_t o = 0; o < out_count; ++o) grad_in[argmax[o]] += grad_out[o];
}

namespace {
inline int64_t pool_start(int64_t i, int64_t in, int64_t out) { return (i * in) / out; }
inline int64_t pool_end(int64_t i, int64_t in, int64_t out) {
    return ((i + 1) * in + out - 1) / out;  // ceil((i+1)*in/out)
}
}  // namespace

void adaptive_avg_pool_forward_serial(double* out, const double* in, int64_t n, int64_t c,
                                      int64_t h, int64_t w, int64_t oh, int64_t ow) {
    for (int64_t i = 0; i < n * c; ++i)
        for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t y0 = pool_start(oy, h, oh), y1 = pool_end(oy, h, oh);
            for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t x0 = pool_start(ox, w, ow), x1 = pool_end(ox, w, ow);
                double acc = 0.0;
                for (int64_t y = y0; y < y1; ++y)
                    for (int64_t x = x0; x < x1; ++x) acc += in[(i * h + y) * w + x];
                out[(i * oh + oy) * ow + ox] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
            }
        }
}

void adaptive_avg_pool_backward_serial(double* grad_in, const double* grad_out, int64_t n,
                                       int64_t c, int64_t h, int64_t w, int64_t oh, int64_t ow) {
    for (int64_t i = 0; i < n * c; ++i)
        for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t y0 = pool_start(oy, h, oh), y1 = pool_end(oy, h, oh);
            for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t x0 = pool_start(ox, w, ow), x1 = pool_end(ox, w, ow);
                const double g = grad_out[(i * oh + oy) * ow + ox] /
                                 static_cast<double>((y1 - y0) * (x1 - x0));
                for (int64_t y = y0; y < y1; ++y)
                    for (int64_t x = x0; x < x1; ++x) grad_in[(i * h + y) * w + x] += g;
            }
        }
}

void linear_forward_serial(double* out, const double* in, const double* weight,
                           const double* bias, int64_t n, int64_t in_features,
                           int64_t out_features) {
    for (int64_t r = 0; r < n; ++r)
        for (int64_t o = 0; o < out_features; ++o) {
            double acc = bias ? bias[o] : 0.0;
            const double* row = in + r * in_features;
            const double* wrow = weight + o * in_features;
            for (int64_t i = 0; i < in_features; ++i) acc += row[i] * wrow[i];
            out[r * out_features + o] = acc;
        }
}

void linear_backward_input_serial(double* grad_in, const double* grad_out,
                                  const double* weight, int64_t n, int64_t in_features,
                                  int64_t out_features) {
    for (int64_t r = 0; r < n; ++r)
        for (int64_t i = 0; i < in_features; ++i) {
            double acc = 0.0;
            for (int64_t o = 0; o < out_features; ++o)
                acc += grad_out[r * out_features + o] * weight[o * in_features + i];
            grad_in[r * in_features + i] = acc;
        }
}

void linear_backward_weight_serial(double* grad_w, const double* grad_out, const double* in,
                                   int64_t n, int64_t in_features, int64_t out_features) {
    for (int64_t o = 0; o < out_features; ++o)
        for (int64_t i = 0; i < in_features; ++i) {
            double acc = 0.0;
            for (int64_t r = 0; r < n; ++r)
                acc += grad_out[r * out_features + o] * in[r * in_features + i];
            grad_w[o * in_features + i] = acc;
        }
}

void linear_backward_bias_serial(double* grad_b, const double* grad_out, int64_t n,
                                 int64_t out_features) {
    for (int64_t o = 0; o < out_features; ++o) {
        double acc = 0.0;
        for (int64_t r = 0; r < n; ++r) acc += grad_out[r * out_features + o];
        grad_b[o] = acc;
    }
}

void relu_forward_serial(double* out, const double* in, int64_t count) {
    for (int64_t i = 0; i < count; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

}  // namespace fdflare::kernels::detail
