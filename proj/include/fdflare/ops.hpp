#pragma once

#include <vector>

#include "fdflare/tape.hpp"

namespace fdflare::ops {

// All ops validate shapes, run the forward kernel, check the result for
// NaN/Inf, and record a node on the inputs' tape.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);          // elementwise, same shape
Var scale(Var a, double c);
Var sum_all(Var a);             // -> scalar [1]
Var pick(Var m, int64_t row, int64_t col);  // 2-d tensor -> scalar [1]
Var reshape(Var a, Shape shape);

// [1,H,W] -> [3,H,W] or [N,1,H,W] -> [N,3,H,W], all channels identical.
Var channel_duplicate(Var gray);

// input [N,C,H,W], weight [K,C,kh,kw], bias [K]; zero padding, exact output
// size (H + 2*pad - kh) / stride + 1 required.
Var conv2d(Var input, Var weight, Var bias, int stride, int pad);

Var relu(Var input);

// Non-overlapping max pooling; kernel == stride.
Var maxpool2d(Var input, int kernel = 2, int stride = 2);

Var adaptive_avg_pool2d(Var input, int out_h, int out_w);

// input [N,in], weight [out,in], bias [out] -> [N,out]
Var linear(Var input, Var weight, Var bias);

// Row-wise log softmax of [N,C].
Var log_softmax(Var logits);

// Weighted mean of -log_probs[n, target_n], normalized by the sum of the
// applied per-sample weights. class_weights has one entry per class.
Var nll_loss(Var log_probs, const std::vector<int>& targets, const Tensor& class_weights);

}  // namespace fdflare::ops
