#include "fdflare/kernels.hpp"

#include <atomic>

#include "kernels_detail.hpp"

namespace fdflare::kernels {

namespace {
std::atomic<ExecMode> g_mode{ExecMode::parallel};
}

ExecMode exec_mode() { return g_mode.load(std::memory_order_relaxed); }
void set_exec_mode(ExecMode mode) { g_mode.store(mode, std::memory_order_relaxed); }

void conv2d_forward(double* out, const double* in, const double* weight,
                    const double* bias, const ConvDims& d) {
    if (exec_mode() == ExecMode::parallel)
        detail::conv2d_forward_omp(out, in, weight, bias, d);
    else
        detail::conv2d_forward_serial(out, in, weight, bias, d);
}

void conv2d_backward_input(double* grad_in, const double* grad_out,
                           const double* weight, const ConvDims& d) {
    if (exec_mode() == ExecMode::parallel)
        detail::conv2d_backward_input_omp(grad_in, grad_out, weight, d);
    else
        detail::conv2d_backward_input_serial(grad_in, grad_out, weight, d);
}

void conv2d_backward_weight(double* grad_w, const double* grad_out,
                            const double* in, const ConvDims& d) {
    if (exec_mode() == ExecMode::parallel)
        detail::conv2d_backward_weight_omp(grad_w, grad_out, in, d);
    else
        detail::conv2d_backward_weight_serial(grad_w, grad_out, in, d);
}

void conv2d_backward_bias(double* grad_b, const double* grad_out, const ConvDims& d) {
    if (exec_mode() == ExecMode::parallel)
        detail::conv2d_backward_bias_omp(grad_b, grad_out, d);
    else
        detail::conv2d_backward_bias_serial(grad_b, grad_out, d);
}

void maxpool2d_forward(double* out, int64_t* argmax, const double* in,
                       int64_t n, int64_t c, int64_t h, int64_t w, int64_t kernel) {
    if (exec_mode() == ExecMode::parallel)
        detail::maxpool2d_forward_omp(out, argmax, in, n, c, h, w, kernel);
    else
        detail::maxpool2d_forward_serial(out, argmax, in, n, c, h, w, kernel);
}

void maxpool2d_backward(double* grad_in, const double* grad_out, const int64_t* argmax,
                        int64_t out_count) {
    if (exec_mode() == ExecMode::parallel)
        detail::maxpool2d_backward_omp(grad_in, grad_out, argmax, out_count);
    else
        detail::maxpool2d_backward_serial(grad_in, grad_out, argmax, out_count);
}

void adaptive_avg_pool_forward(double* out, const double* in, int64_t n, int64_t c,
                               int64_t h, int64_t w, int64_t oh, int64_t ow) {
    if (exec_mode() == ExecMode::parallel)
        detail::adaptive_avg_pool_forward_omp(out, in, n, c, h, w, oh, ow);
    else
        detail::adaptive_avg_pool_forward_serial(out, in, n, c, h, w, oh, ow);
}

void adaptive_avg_pool_backward(double* grad_in, const double* grad_out, int64_t n,
                                int64_t c, int64_t h, int64_t w, int64_t oh, int64_t ow) {
    if (exec_mode() == ExecMode::parallel)
        detail::adaptive_avg_pool_backward_omp(grad_in, grad_out, n, c, h, w, oh, ow);
    else
        detail::adaptive_avg_pool_backward_serial(grad_in, grad_out, n, c, h, w, oh, ow);
}

void linear_forward(double* out, const double* in, const double* weight,
                    const double* bias, int64_t n, int64_t in_features, int64_t out_features) {
    if (exec_mode() == ExecMode::parallel)
        detail::linear_forward_omp(out, in, weight, bias, n, in_features, out_features);
    else
        detail::linear_forward_serial(out, in, weight, bias, n, in_features, out_features);
}

void linear_backward_input(double* grad_in, const double* grad_out, const double* weight,
                           int64_t n, int64_t in_features, int64_t out_features) {
    if (exec_mode() == ExecMode::parallel)
        detail::linear_backward_input_omp(grad_in, grad_out, weight, n, in_features, out_features);
    else
        detail::linear_backward_input_serial(grad_in, grad_out, weight, n, in_features,
                                             out_features);
}

void linear_backward_weight(double* grad_w, const double* grad_out, const double* in,
                            int64_t n, int64_t in_features, int64_t out_features) {
    if (exec_mode() == ExecMode::parallel)
        detail::linear_backward_weight_omp(grad_w, grad_out, in, n, in_features, out_features);
    else
        detail::linear_backward_weight_serial(grad_w, grad_out, in, n, in_features, out_features);
}

void linear_backward_bias(double* grad_b, const double* grad_out, int64_t n,
                          int64_t out_features) {
    if (exec_mode() == ExecMode::parallel)
        detail::linear_backward_bias_omp(grad_b, grad_out, n, out_features);
    else
        detail::linear_backward_bias_serial(grad_b, grad_out, n, out_features);
}

void relu_forward(double* out, const double* in, int64_t count) {
    if (exec_mode() == ExecMode::parallel)
        detail::relu_forward_omp(out, in, count);
    else
        detail::relu_forward_serial(out, in, count);
}

}  // namespace fdflare::kernels
