#pragma once

#include "fdflare/kernels.hpp"

namespace fdflare::kernels::detail {

void conv2d_forward_serial(double*, const double*, const double*, const double*, const ConvDims&);
void conv2d_backward_input_serial(double*, const double*, const double*, const ConvDims&);
void conv2d_backward_weight_serial(double*, const double*, const double*, const ConvDims&);
void conv2d_backward_bias_serial(double*, const double*, const ConvDims&);
void maxpool2d_forward_serial(double*, int64_t*, const double*, int64_t, int64_t, int64_t,
                              int64_t, int64_t);
void maxpool2d_backward_serial(double*, const double*, const int64_t*, int64_t);
void adaptive_avg_pool_forward_serial(double*, const double*, int64_t, int64_t, int64_t,
                                      int64_t, int64_t, int64_t);
void adaptive_avg_pool_backward_serial(double*, const double*, int64_t, int64_t, int64_t,
                                       int64_t, int64_t, int64_t);
void linear_forward_serial(double*, const double*, const double*, const double*, int64_t,
                           int64_t, int64_t);
void linear_backward_input_serial(double*, const double*, const double*, int64_t, int64_t,
                                  int64_t);
void linear_backward_weight_serial(double*, const double*, const double*, int64_t, int64_t,
                                   int64_t);
void linear_backward_bias_serial(double*, const double*, int64_t, int64_t);
void relu_forward_serial(double*, const double*, int64_t);

void conv2d_forward_omp(double*, const double*, const double*, const double*, const ConvDims&);
void conv2d_backward_input_omp(double*, const double*, const double*, const ConvDims&);
void conv2d_backward_weight_omp(double*, const double*, const double*, const ConvDims&);
void conv2d_backward_bias_omp(double*, const double*, const ConvDims&);
void maxpool2d_forward_omp(double*, int64_t*, const double*, int64_t, int64_t, int64_t,
                           int64_t, int64_t);
void maxpool2d_backward_omp(double*, const double*, const int64_t*, int64_t);
void adaptive_avg_pool_forward_omp(double*, const double*, int64_t, int64_t, int64_t,
                                   int64_t, int64_t, int64_t);
void adaptive_avg_pool_backward_omp(double*, const double*, int64_t, int64_t, int64_t,
                                    int64_t, int64_t, int64_t);
void linear_forward_omp(double*, const double*, const double*, const double*, int64_t,
                        int64_t, int64_t);
void linear_backward_input_omp(double*, const double*, const double*, int64_t, int64_t,
                               int64_t);
void linear_backward_weight_omp(double*, const double*, const double*, int64_t, int64_t,
                                int64_t);
void linear_backward_bias_omp(double*, const double*, int64_t, int64_t);
void relu_forward_omp(double*, const double*, int64_t);

}  // namespace fdflare::kernels::detail
