// Times the serial reference kernels against the OpenMP variants on
// model-sized workloads and checks that both produce bitwise identical
// output. Usage: bench_kernels [repeats]

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "fdflare/kernels.hpp"
#include "fdflare/tensor.hpp"

using namespace fdflare;
using Clock = std::chrono::steady_clock;

namespace {

double run_ms(int repeats, const std::function<void()>& fn) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < repeats; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

std::vector<double> random_buf(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

bool bitwise_same(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Case {
    const char* name;
    double serial_ms;
    double parallel_ms;
    bool identical;
};

Case bench_conv(int repeats) {
    kernels::ConvDims d;
    d.n = 2;
    d.c = 16;
    d.h = 64;
    d.w = 64;
    d.k = 32;
    d.kh = 3;
    d.kw = 3;
    d.stride = 1;
    d.pad = 1;
    d.oh = 64;
    d.ow = 64;
    const auto x = random_buf(static_cast<size_t>(d.n * d.c * d.h * d.w), 1);
    const auto w = random_buf(static_cast<size_t>(d.k * d.c * d.kh * d.kw), 2);
    const auto b = random_buf(static_cast<size_t>(d.k), 3);
    std::vector<double> out_s(static_cast<size_t>(d.n * d.k * d.oh * d.ow));
    std::vector<double> out_p(out_s.size());

    kernels::set_exec_mode(kernels::ExecMode::serial);
    const double ms_s =
        run_ms(repeats, [&] { kernels::conv2d_forward(out_s.data(), x.data(), w.data(), b.data(), d); });
    kernels::set_exec_mode(kernels::ExecMode::parallel);
    const double ms_p =
        run_ms(repeats, [&] { kernels::conv2d_forward(out_p.data(), x.data(), w.data(), b.data(), d); });
    return {"conv2d_forward 2x16x64x64 k32", ms_s, ms_p, bitwise_same(out_s, out_p)};
}

Case bench_conv_backward(int repeats) {
    kernels::ConvDims d;
    d.n = 2;
    d.c = 16;
    d.h = 64;
    d.w = 64;
    d.k = 32;
    d.kh = 3;
    d.kw = 3;
    d.stride = 1;
    d.pad = 1;
    d.oh = 64;
    d.ow = 64;
    const auto go = random_buf(static_cast<size_t>(d.n * d.k * d.oh * d.ow), 4);
    const auto x = random_buf(static_cast<size_t>(d.n * d.c * d.h * d.w), 5);
    std::vector<double> gw_s(static_cast<size_t>(d.k * d.c * d.kh * d.kw));
    std::vector<double> gw_p(gw_s.size());

    kernels::set_exec_mode(kernels::ExecMode::serial);
    const double ms_s =
        run_ms(repeats, [&] { kernels::conv2d_backward_weight(gw_s.data(), go.data(), x.data(), d); });
    kernels::set_exec_mode(kernels::ExecMode::parallel);
    const double ms_p =
        run_ms(repeats, [&] { kernels::conv2d_backward_weight(gw_p.data(), go.data(), x.data(), d); });
    return {"conv2d_backward_weight same", ms_s, ms_p, bitwise_same(gw_s, gw_p)};
}

Case bench_linear(int repeats) {
    const int64_t n = 8, fin = 25088, fout = 512;
    const auto x = random_buf(static_cast<size_t>(n * fin), 6);
    const auto w = random_buf(static_cast<size_t>(fout * fin), 7);
    const auto b = random_buf(static_cast<size_t>(fout), 8);
    std::vector<double> out_s(static_cast<size_t>(n * fout));
    std::vector<double> out_p(out_s.size());

    kernels::set_exec_mode(kernels::ExecMode::serial);
    const double ms_s =
        run_ms(repeats, [&] { kernels::linear_forward(out_s.data(), x.data(), w.data(), b.data(), n, fin, fout); });
    kernels::set_exec_mode(kernels::ExecMode::parallel);
    const double ms_p =
        run_ms(repeats, [&] { kernels::linear_forward(out_p.data(), x.data(), w.data(), b.data(), n, fin, fout); });
    return {"linear_forward 8x25088 -> 512", ms_s, ms_p, bitwise_same(out_s, out_p)};
}

}  // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::atoi(argv[1]) : 3;
    if (repeats <= 0) {
        std::fprintf(stderr, "usage: bench_kernels [repeats>0]\n");
        return 1;
    }

    std::printf("%-32s %12s %12s %8s %s\n", "case", "serial ms", "parallel ms", "speedup",
                "bitwise");
    bool all_same = true;
    for (const Case& c : {bench_conv(repeats), bench_conv_backward(repeats), bench_linear(repeats)}) {
        std::printf("%-32s %12.2f %12.2f %7.2fx %s\n", c.name, c.serial_ms, c.parallel_ms,
                    c.serial_ms / c.parallel_ms, c.identical ? "same" : "DIFFERS");
        all_same = all_same && c.identical;
    }
    kernels::set_exec_mode(kernels::ExecMode::parallel);
    return all_same ? 0 : 1;
}
