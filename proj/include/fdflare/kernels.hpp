#pragma once

#include <cstdint>
#include <vector>

namespace fdflare::kernels {

// Every kernel has a serial reference implementation and an OpenMP variant.
// The parallel variants split work over independent output elements and keep
// each element's reduction order identical to the serial code, so the two
// paths produce bitwise-identical results for any thread count.
enum class ExecMode { serial, parallel };

ExecMode exec_mode();
void set_exec_mode(ExecMode mode);

struct ConvDims {
    int64_t n, c, h, w;      // input
    int64_t k, kh, kw;       // filters
    int64_t stride, pad;
    int64_t oh, ow;          // output spatial size
};

// out[n,k,oh,ow] = bias[k] + sum_{c,dy,dx} in[n,c,...] * weight[k,c,dy,dx]
void conv2d_forward(double* out, const double* in, const double* weight,
                    const double* bias, const ConvDims& d);
void conv2d_backward_input(double* grad_in, const double* grad_out,
                           const double* weight, const ConvDims& d);
void conv2d_backward_weight(double* grad_w, const double* grad_out,
                            const double* in, const ConvDims& d);
void conv2d_backward_bias(double* grad_b, const double* grad_out, const ConvDims& d);

// Max pooling with non-overlapping windows (stride == kernel). argmax holds
// the flat input index of the first maximum found when scanning the window
// in row-major order (rows top to bottom, columns left to right); ties go to
// the earliest scanned element.
void maxpool2d_forward(double* out, int64_t* argmax, const double* in,
                       int64_t n, int64_t c, int64_t h, int64_t w, int64_t kernel);
void maxpool2d_backward(double* grad_in, const double* grad_out, const int64_t* argmax,
                        int64_t out_count);

// Adaptive average pooling: output cell (i,j) averages input rows
// [floor(i*h/oh), ceil((i+1)*h/oh)) and the analogous columns.
void adaptive_avg_pool_forward(double* out, const double* in, int64_t n, int64_t c,
                               int64_t h, int64_t w, int64_t oh, int64_t ow);
void adaptive_avg_pool_backward(double* grad_in, const double* grad_out, int64_t n,
                                int64_t c, int64_t h, int64_t w, int64_t oh, int64_t ow);

// out[n,o] = bias[o] + sum_i in[n,i] * weight[o,i]
void linear_forward(double* out, const double* in, const double* weight,
                    const double* bias, int64_t n, int64_t in_features, int64_t out_features);
void linear_backward_input(double* grad_in, const double* grad_out, const double* weight,
                           int64_t n, int64_t in_features, int64_t out_features);
void linear_backward_weight(double* grad_w, const double* grad_out, const double* in,
                            int64_t n, int64_t in_features, int64_t out_features);
void linear_backward_bias(double* grad_b, const double* grad_out, int64_t n,
                          int64_t out_features);

void relu_forward(double* out, const double* in, int64_t count);

}  // namespace fdflare::kernels
