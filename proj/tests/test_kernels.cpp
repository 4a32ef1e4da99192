#include <doctest.h>

#include <cstring>
#include <omp.h>
#include <random>
#include <vector>

#include "fdflare/kernels.hpp"

using namespace fdflare;
using kernels::ConvDims;
using kernels::ExecMode;

namespace {

std::vector<double> random_buf(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

bool bitwise_same(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Runs `fn` once in serial mode into `s` and once in parallel mode into `p`,
// with thread oversubscription to exercise the partitioning even on one core.
template <typename Fn>
void run_both(std::vector<double>& s, std::vector<double>& p, Fn fn) {
    const int threads_before = omp_get_max_threads();
    kernels::set_exec_mode(ExecMode::serial);
    fn(s.data());
    omp_set_num_threads(3);
    kernels::set_exec_mode(ExecMode::parallel);
    fn(p.data());
    omp_set_num_threads(threads_before);
    kernels::set_exec_mode(ExecMode::parallel);
}

// Plain checked-loop convolution in the documented per-element accumulation
// order (forward: c,dy,dx; input grad: k,dy,dx; weight grad: n,oy,ox). The
// production kernels restructure these nests but must add the same terms in
// the same sequence, so the comparison is bitwise.
void naive_conv_forward(double* out, const double* in, const double* weight,
                        const double* bias, const ConvDims& d) {
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t k = 0; k < d.k; ++k)
            for (int64_t oy = 0; oy < d.oh; ++oy)
                for (int64_t ox = 0; ox < d.ow; ++ox) {
                    double acc = bias ? bias[k] : 0.0;
                    for (int64_t c = 0; c < d.c; ++c)
                        for (int64_t dy = 0; dy < d.kh; ++dy)
                            for (int64_t dx = 0; dx < d.kw; ++dx) {
                                const int64_t y = oy * d.stride - d.pad + dy;
                                const int64_t x = ox * d.stride - d.pad + dx;
                                if (y < 0 || y >= d.h || x < 0 || x >= d.w) continue;
                                acc += in[((n * d.c + c) * d.h + y) * d.w + x] *
                                       weight[((k * d.c + c) * d.kh + dy) * d.kw + dx];
                            }
                    out[((n * d.k + k) * d.oh + oy) * d.ow + ox] = acc;
                }
}

void naive_conv_backward_input(double* grad_in, const double* grad_out,
                               const double* weight, const ConvDims& d) {
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c; ++c)
            for (int64_t y = 0; y < d.h; ++y)
                for (int64_t x = 0; x < d.w; ++x) {
                    double acc = 0.0;
                    for (int64_t k = 0; k < d.k; ++k)
                        for (int64_t dy = 0; dy < d.kh; ++dy)
                            for (int64_t dx = 0; dx < d.kw; ++dx) {
                                const int64_t sy = y + d.pad - dy;
                                const int64_t sx = x + d.pad - dx;
                                if (sy < 0 || sy % d.stride != 0 || sx < 0 || sx % d.stride != 0)
                                    continue;
                                const int64_t oy = sy / d.stride, ox = sx / d.stride;
                                if (oy >= d.oh || ox >= d.ow) continue;
                                acc += grad_out[((n * d.k + k) * d.oh + oy) * d.ow + ox] *
                                       weight[((k * d.c + c) * d.kh + dy) * d.kw + dx];
                            }
                    grad_in[((n * d.c + c) * d.h + y) * d.w + x] = acc;
                }
}

void naive_conv_backward_weight(double* grad_w, const double* grad_out, const double* in,
                                const ConvDims& d) {
    for (int64_t k = 0; k < d.k; ++k)
        for (int64_t c = 0; c < d.c; ++c)
            for (int64_t dy = 0; dy < d.kh; ++dy)
                for (int64_t dx = 0; dx < d.kw; ++dx) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < d.n; ++n)
                        for (int64_t oy = 0; oy < d.oh; ++oy)
                            for (int64_t ox = 0; ox < d.ow; ++ox) {
                                const int64_t y = oy * d.stride - d.pad + dy;
                                const int64_t x = ox * d.stride - d.pad + dx;
                                if (y < 0 || y >= d.h || x < 0 || x >= d.w) continue;
                                acc += grad_out[((n * d.k + k) * d.oh + oy) * d.ow + ox] *
                                       in[((n * d.c + c) * d.h + y) * d.w + x];
                            }
                    grad_w[((k * d.c + c) * d.kh + dy) * d.kw + dx] = acc;
                }
}

}  // namespace

TEST_CASE("conv2d matches a checked-loop recompute across geometries") {
    struct Geom {
        int64_t n, c, h, w, k, kh, kw, stride, pad;
    };
    // Interiors, pure boundary windows, strides with gaps, 1x1 filters,
    // asymmetric filters, padding as large as the filter allows.
    const Geom geoms[] = {
        {1, 1, 5, 5, 1, 3, 3, 1, 0},  {2, 3, 9, 7, 4, 3, 3, 1, 1},
        {1, 2, 8, 8, 3, 3, 3, 2, 1},  {2, 1, 7, 9, 2, 5, 3, 2, 2},
        {1, 3, 11, 5, 2, 3, 5, 3, 1}, {2, 2, 6, 6, 2, 1, 1, 2, 0},
        {1, 1, 5, 5, 1, 5, 5, 1, 2},  {3, 2, 10, 4, 1, 2, 2, 2, 0},
        {1, 4, 4, 12, 3, 3, 3, 3, 2}, {2, 1, 16, 16, 2, 4, 4, 4, 0},
    };
    uint64_t seed = 700;
    for (const Geom& g : geoms) {
        ConvDims d;
        d.n = g.n;
        d.c = g.c;
        d.h = g.h;
        d.w = g.w;
        d.k = g.k;
        d.kh = g.kh;
        d.kw = g.kw;
        d.stride = g.stride;
        d.pad = g.pad;
        d.oh = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
        d.ow = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
        INFO("geometry n=" << g.n << " c=" << g.c << " h=" << g.h << " w=" << g.w
                           << " k=" << g.k << " kh=" << g.kh << " kw=" << g.kw
                           << " stride=" << g.stride << " pad=" << g.pad);
        const auto x = random_buf(static_cast<size_t>(d.n * d.c * d.h * d.w), seed++);
        const auto w = random_buf(static_cast<size_t>(d.k * d.c * d.kh * d.kw), seed++);
        const auto b = random_buf(static_cast<size_t>(d.k), seed++);
        const size_t out_n = static_cast<size_t>(d.n * d.k * d.oh * d.ow);
        const auto go = random_buf(out_n, seed++);

        std::vector<double> want(out_n), fs(out_n), fp(out_n);
        naive_conv_forward(want.data(), x.data(), w.data(), b.data(), d);
        run_both(fs, fp, [&](double* o) {
            kernels::conv2d_forward(o, x.data(), w.data(), b.data(), d);
        });
        CHECK(bitwise_same(fs, want));
        CHECK(bitwise_same(fp, want));

        std::vector<double> want_gx(x.size()), gxs(x.size()), gxp(x.size());
        naive_conv_backward_input(want_gx.data(), go.data(), w.data(), d);
        run_both(gxs, gxp, [&](double* o) {
            kernels::conv2d_backward_input(o, go.data(), w.data(), d);
        });
        CHECK(bitwise_same(gxs, want_gx));
        CHECK(bitwise_same(gxp, want_gx));

        std::vector<double> want_gw(w.size()), gws(w.size()), gwp(w.size());
        naive_conv_backward_weight(want_gw.data(), go.data(), x.data(), d);
        run_both(gws, gwp, [&](double* o) {
            kernels::conv2d_backward_weight(o, go.data(), x.data(), d);
        });
        CHECK(bitwise_same(gws, want_gw));
        CHECK(bitwise_same(gwp, want_gw));
    }
}

TEST_CASE("conv2d serial and parallel paths agree bitwise") {
    ConvDims d;
    d.n = 2;
    d.c = 3;
    d.h = 13;
    d.w = 11;
    d.k = 5;
    d.kh = 3;
    d.kw = 3;
    d.stride = 2;
    d.pad = 1;
    d.oh = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
    d.ow = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
    const auto x = random_buf(static_cast<size_t>(d.n * d.c * d.h * d.w), 11);
    const auto w = random_buf(static_cast<size_t>(d.k * d.c * d.kh * d.kw), 12);
    const auto b = random_buf(static_cast<size_t>(d.k), 13);
    const size_t out_n = static_cast<size_t>(d.n * d.k * d.oh * d.ow);

    std::vector<double> fs(out_n), fp(out_n);
    run_both(fs, fp, [&](double* o) { kernels::conv2d_forward(o, x.data(), w.data(), b.data(), d); });
    CHECK(bitwise_same(fs, fp));

    const auto go = random_buf(out_n, 14);
    std::vector<double> gxs(x.size(), 0.0), gxp(x.size(), 0.0);
    run_both(gxs, gxp, [&](double* o) { kernels::conv2d_backward_input(o, go.data(), w.data(), d); });
    CHECK(bitwise_same(gxs, gxp));

    std::vector<double> gws(w.size()), gwp(w.size());
    run_both(gws, gwp, [&](double* o) { kernels::conv2d_backward_weight(o, go.data(), x.data(), d); });
    CHECK(bitwise_same(gws, gwp));

    std::vector<double> gbs(b.size()), gbp(b.size());
    run_both(gbs, gbp, [&](double* o) { kernels::conv2d_backward_bias(o, go.data(), d); });
    CHECK(bitwise_same(gbs, gbp));
}

TEST_CASE("conv2d forward matches a hand-computed 3x3 case") {
    // Single channel 3x3 input, one 3x3 filter of ones, no padding: the only
    // output is the full sum. With padding 1 the center output is that same
    // sum and the corners cover 2x2 patches.
    ConvDims d;
    d.n = 1;
    d.c = 1;
    d.h = 3;
    d.w = 3;
    d.k = 1;
    d.kh = 3;
    d.kw = 3;
    d.stride = 1;
    d.pad = 0;
    d.oh = 1;
    d.ow = 1;
    const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::vector<double> w(9, 1.0);
    const std::vector<double> b{0.5};
    std::vector<double> out(1);
    kernels::conv2d_forward(out.data(), x.data(), w.data(), b.data(), d);
    CHECK(out[0] == doctest::Approx(45.5));

    d.pad = 1;
    d.oh = 3;
    d.ow = 3;
    std::vector<double> out9(9);
    kernels::conv2d_forward(out9.data(), x.data(), w.data(), b.data(), d);
    CHECK(out9[4] == doctest::Approx(45.5));         // center sees everything
    CHECK(out9[0] == doctest::Approx(1 + 2 + 4 + 5 + 0.5));
    CHECK(out9[8] == doctest::Approx(5 + 6 + 8 + 9 + 0.5));
}

TEST_CASE("maxpool argmax picks the first maximum in row-major scan order") {
    // 2x2 window of identical values: argmax must be the top-left element.
    const std::vector<double> x{7, 7, 7, 7};
    std::vector<double> out(1);
    std::vector<int64_t> argmax(1);
    kernels::maxpool2d_forward(out.data(), argmax.data(), x.data(), 1, 1, 2, 2, 2);
    CHECK(out[0] == 7.0);
    CHECK(argmax[0] == 0);

    // Maximum in the second row: flat index inside the full input plane.
    const std::vector<double> x2{1, 2, 9, 4};
    kernels::maxpool2d_forward(out.data(), argmax.data(), x2.data(), 1, 1, 2, 2, 2);
    CHECK(out[0] == 9.0);
    CHECK(argmax[0] == 2);
}

TEST_CASE("maxpool serial and parallel paths agree bitwise") {
    const int64_t n = 2, c = 3, h = 8, w = 8, k = 2;
    const auto x = random_buf(static_cast<size_t>(n * c * h * w), 21);
    const size_t out_n = static_cast<size_t>(n * c * (h / k) * (w / k));
    std::vector<double> os(out_n), op(out_n);
    std::vector<int64_t> as(out_n), ap(out_n);

    kernels::set_exec_mode(ExecMode::serial);
    kernels::maxpool2d_forward(os.data(), as.data(), x.data(), n, c, h, w, k);
    kernels::set_exec_mode(ExecMode::parallel);
    kernels::maxpool2d_forward(op.data(), ap.data(), x.data(), n, c, h, w, k);
    CHECK(bitwise_same(os, op));
    CHECK(as == ap);

    const auto go = random_buf(out_n, 22);
    std::vector<double> gs(x.size(), 0.0), gp(x.size(), 0.0);
    run_both(gs, gp, [&](double* o) {
        std::memset(o, 0, x.size() * sizeof(double));
        kernels::maxpool2d_backward(o, go.data(), as.data(), static_cast<int64_t>(out_n));
    });
    CHECK(bitwise_same(gs, gp));
}

TEST_CASE("adaptive average pooling window boundaries") {
    // 1x1x5x1 input pooled to 3x1: windows are rows [0,2), [1,4), [3,5).
    const std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> out(3);
    kernels::adaptive_avg_pool_forward(out.data(), x.data(), 1, 1, 5, 1, 3, 1);
    CHECK(out[0] == doctest::Approx((1 + 2) / 2.0));
    CHECK(out[1] == doctest::Approx((2 + 3 + 4) / 3.0));
    CHECK(out[2] == doctest::Approx((4 + 5) / 2.0));
}

TEST_CASE("adaptive average pooling is exact averaging when sizes divide") {
    const std::vector<double> x{1, 2, 3, 4};
    std::vector<double> out(1);
    kernels::adaptive_avg_pool_forward(out.data(), x.data(), 1, 1, 2, 2, 1, 1);
    CHECK(out[0] == doctest::Approx(2.5));
}

TEST_CASE("adaptive pooling serial and parallel paths agree bitwise") {
    const int64_t n = 2, c = 4, h = 19, w = 17, oh = 7, ow = 7;
    const auto x = random_buf(static_cast<size_t>(n * c * h * w), 31);
    const size_t out_n = static_cast<size_t>(n * c * oh * ow);
    std::vector<double> fs(out_n), fp(out_n);
    run_both(fs, fp, [&](double* o) {
        kernels::adaptive_avg_pool_forward(o, x.data(), n, c, h, w, oh, ow);
    });
    CHECK(bitwise_same(fs, fp));

    const auto go = random_buf(out_n, 32);
    std::vector<double> gs(x.size()), gp(x.size());
    run_both(gs, gp, [&](double* o) {
        std::memset(o, 0, x.size() * sizeof(double));
        kernels::adaptive_avg_pool_backward(o, go.data(), n, c, h, w, oh, ow);
    });
    CHECK(bitwise_same(gs, gp));
}

TEST_CASE("linear layer serial and parallel paths agree bitwise") {
    const int64_t n = 3, fin = 37, fout = 29;
    const auto x = random_buf(static_cast<size_t>(n * fin), 41);
    const auto w = random_buf(static_cast<size_t>(fout * fin), 42);
    const auto b = random_buf(static_cast<size_t>(fout), 43);
    const size_t out_n = static_cast<size_t>(n * fout);

    std::vector<double> fs(out_n), fp(out_n);
    run_both(fs, fp, [&](double* o) {
        kernels::linear_forward(o, x.data(), w.data(), b.data(), n, fin, fout);
    });
    CHECK(bitwise_same(fs, fp));

    const auto go = random_buf(out_n, 44);
    std::vector<double> gxs(x.size()), gxp(x.size());
    run_both(gxs, gxp, [&](double* o) {
        kernels::linear_backward_input(o, go.data(), w.data(), n, fin, fout);
    });
    CHECK(bitwise_same(gxs, gxp));

    std::vector<double> gws(w.size()), gwp(w.size());
    run_both(gws, gwp, [&](double* o) {
        kernels::linear_backward_weight(o, go.data(), x.data(), n, fin, fout);
    });
    CHECK(bitwise_same(gws, gwp));

    std::vector<double> gbs(b.size()), gbp(b.size());
    run_both(gbs, gbp, [&](double* o) { kernels::linear_backward_bias(o, go.data(), n, fout); });
    CHECK(bitwise_same(gbs, gbp));
}

TEST_CASE("linear forward matches a hand-computed case") {
    // [1,2] x weight rows (3,4), (5,6) plus bias (0.5, -0.5)
    const std::vector<double> x{1, 2};
    const std::vector<double> w{3, 4, 5, 6};
    const std::vector<double> b{0.5, -0.5};
    std::vector<double> out(2);
    kernels::linear_forward(out.data(), x.data(), w.data(), b.data(), 1, 2, 2);
    CHECK(out[0] == doctest::Approx(11.5));
    CHECK(out[1] == doctest::Approx(16.5));
}

TEST_CASE("exec mode is observable and restorable") {
    const ExecMode prev = kernels::exec_mode();
    kernels::set_exec_mode(ExecMode::serial);
    CHECK(kernels::exec_mode() == ExecMode::serial);
    kernels::set_exec_mode(prev);
    CHECK(kernels::exec_mode() == prev);
}
