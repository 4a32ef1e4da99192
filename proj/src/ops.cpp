#include "fdflare/ops.hpp"

#include <algorithm>
#include <cmath>

#include "fdflare/kernels.hpp"

namespace fdflare::ops {

namespace {

Tape& tape_of(Var a) {
    if (!a.valid()) throw DataError("op input is detached from any tape");
    return *a.tape;
}

Tape& same_tape(Var a, Var b) {
    Tape& t = tape_of(a);
    if (&t != &tape_of(b)) throw DataError("op inputs live on different tapes");
    return t;
}

Var record(Tape& tape, Node node, Tensor out, const char* op) {
    out.ensure_finite(op);
    node.out = tape.push_value(std::move(out));
    const int id = node.out;
    tape.push_node(std::move(node));
    return Var{id, &tape};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
}

}  // namespace

Var add(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, "add");
    Tensor out(av.shape());
    double* o = out.mutable_data();
    for (int64_t i = 0; i < av.numel(); ++i) o[i] = av[i] + bv[i];
    Node n;
    n.kind = OpKind::add;
    n.in = {a.id, b.id, -1};
    return record(tape, std::move(n), std::move(out), "add");
}

Var sub(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, "sub");
    Tensor out(av.shape());
    double* o = out.mutable_data();
    for (int64_t i = 0; i < av.numel(); ++i) o[i] = av[i] - bv[i];
    Node n;
    n.kind = OpKind::sub;
    n.in = {a.id, b.id, -1};
    return record(tape, std::move(n), std::move(out), "sub");
}

Var mul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same_shape(av, bv, "mul");
    Tensor out(av.shape());
    double* o = out.mutable_data();
    for (int64_t i = 0; i < av.numel(); ++i) o[i] = av[i] * bv[i];
    Node n;
    n.kind = OpKind::mul;
    n.in = {a.id, b.id, -1};
    return record(tape, std::move(n), std::move(out), "mul");
}

Var scale(Var a, double c) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    Tensor out(av.shape());
    double* o = out.mutable_data();
    for (int64_t i = 0; i < av.numel(); ++i) o[i] = av[i] * c;
    Node n;
    n.kind = OpKind::scale;
    n.in = {a.id, -1, -1};
    n.alpha = c;
    return record(tape, std::move(n), std::move(out), "scale");
}

Var sum_all(Var a) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    double acc = 0.0;
    for (int64_t i = 0; i < av.numel(); ++i) acc += av[i];
    Node n;
    n.kind = OpKind::sum_all;
    n.in = {a.id, -1, -1};
    return record(tape, std::move(n), Tensor::scalar(acc), "sum_all");
}

Var pick(Var m, int64_t row, int64_t col) {
    Tape& tape = tape_of(m);
    const Tensor& mv = m.value();
    if (mv.ndim() != 2) throw ShapeError("pick expects a 2-d tensor");
    if (row < 0 || row >= mv.dim(0) || col < 0 || col >= mv.dim(1))
        throw ShapeError("pick index out of range");
    Node n;
    n.kind = OpKind::pick;
    n.in = {m.id, -1, -1};
    n.pick_row = row;
    n.pick_col = col;
    return record(tape, std::move(n), Tensor::scalar(mv.at2(row, col)), "pick");
}

Var reshape(Var a, Shape shape) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    Node n;
    n.kind = OpKind::reshape;
    n.in = {a.id, -1, -1};
    n.prev_shape = av.shape();
    return record(tape, std::move(n), av.reshaped(std::move(shape)), "reshape");
}

Var channel_duplicate(Var gray) {
    Tape& tape = tape_of(gray);
    const Tensor& g = gray.value();
    const bool batched = g.ndim() == 4;
    if (!(g.ndim() == 3 || batched)) throw ShapeError("channel_duplicate expects [1,H,W] or [N,1,H,W]");
    const int64_t c = batched ? g.dim(1) : g.dim(0);
    if (c != 1) throw ShapeError("channel_duplicate requires a single-channel input");
    const int64_t n = batched ? g.dim(0) : 1;
    const int64_t h = g.dim(batched ? 2 : 1), w = g.dim(batched ? 3 : 2);
    Shape out_shape = batched ? Shape{n, 3, h, w} : Shape{3, h, w};
    Tensor out(out_shape);
    double* o = out.mutable_data();
    const double* src = g.data();
    const int64_t hw = h * w;
    for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < 3; ++ch)
            std::copy(src + b * hw, src + (b + 1) * hw, o + (b * 3 + ch) * hw);
    Node node;
    node.kind = OpKind::channel_duplicate;
    node.in = {gray.id, -1, -1};
    return record(tape, std::move(node), std::move(out), "channel_duplicate");
}

Var conv2d(Var input, Var weight, Var bias, int stride, int pad) {
    Tape& tape = same_tape(input, weight);
    same_tape(input, bias);
    const Tensor& x = input.value();
    const Tensor& w = weight.value();
    const Tensor& b = bias.value();
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv2d expects input [N,C,H,W] and weight [K,C,kh,kw]");
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                         " != weight channels " + std::to_string(w.dim(1)));
    if (b.ndim() != 1 || b.dim(0) != w.dim(0))
        throw ShapeError("conv2d: bias must have one entry per filter");
    if (stride <= 0) throw ShapeError("conv2d: stride must be positive");
    const int64_t kh = w.dim(2), kw = w.dim(3);
    const int64_t ph = x.dim(2) + 2 * pad, pw = x.dim(3) + 2 * pad;
    if (kh > ph || kw > pw) throw ShapeError("conv2d: kernel larger than padded input");
    if ((ph - kh) % stride != 0 || (pw - kw) % stride != 0)
        throw ShapeError("conv2d: non-exact output size");
    kernels::ConvDims d;
    d.n = x.dim(0);
    d.c = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.k = w.dim(0);
    d.kh = kh;
    d.kw = kw;
    d.stride = stride;
    d.pad = pad;
    d.oh = (ph - kh) / stride + 1;
    d.ow = (pw - kw) / stride + 1;
    Tensor out(Shape{d.n, d.k, d.oh, d.ow});
    kernels::conv2d_forward(out.mutable_data(), x.data(), w.data(), b.data(), d);
    Node n;
    n.kind = OpKind::conv2d;
    n.in = {input.id, weight.id, bias.id};
    n.conv_stride = stride;
    n.conv_pad = pad;
    return record(tape, std::move(n), std::move(out), "conv2d");
}

Var relu(Var input) {
    Tape& tape = tape_of(input);
    const Tensor& x = input.value();
    Tensor out(x.shape());
    kernels::relu_forward(out.mutable_data(), x.data(), x.numel());
    Node n;
    n.kind = OpKind::relu;
    n.in = {input.id, -1, -1};
    return record(tape, std::move(n), std::move(out), "relu");
}

Var maxpool2d(Var input, int kernel, int stride) {
    Tape& tape = tape_of(input);
    const Tensor& x = input.value();
    if (x.ndim() != 4) throw ShapeError("maxpool2d expects [N,C,H,W]");
    if (kernel != stride) throw ShapeError("maxpool2d supports non-overlapping windows only");
    if (kernel <= 0) throw ShapeError("maxpool2d: kernel must be positive");
    if (x.dim(2) % kernel != 0 || x.dim(3) % kernel != 0)
        throw ShapeError("maxpool2d: input size not divisible by kernel");
    const int64_t oh = x.dim(2) / kernel, ow = x.dim(3) / kernel;
    Tensor out(Shape{x.dim(0), x.dim(1), oh, ow});
    Node n;
    n.kind = OpKind::maxpool2d;
    n.in = {input.id, -1, -1};
    n.pool_kernel = kernel;
    n.argmax.resize(static_cast<size_t>(out.numel()));
    kernels::maxpool2d_forward(out.mutable_data(), n.argmax.data(), x.data(), x.dim(0),
                               x.dim(1), x.dim(2), x.dim(3), kernel);
    return record(tape, std::move(n), std::move(out), "maxpool2d");
}

Var adaptive_avg_pool2d(Var input, int out_h, int out_w) {
    Tape& tape = tape_of(input);
    const Tensor& x = input.value();
    if (x.ndim() != 4) throw ShapeError("adaptive_avg_pool2d expects [N,C,H,W]");
    if (out_h <= 0 || out_w <= 0) throw ShapeError("adaptive_avg_pool2d: degenerate target");
    if (x.dim(2) < out_h || x.dim(3) < out_w)
        throw ShapeError("adaptive_avg_pool2d: input smaller than pooling target");
    Tensor out(Shape{x.dim(0), x.dim(1), out_h, out_w});
    kernels::adaptive_avg_pool_forward(out.mutable_data(), x.data(), x.dim(0), x.dim(1),
                                       x.dim(2), x.dim(3), out_h, out_w);
    Node n;
    n.kind = OpKind::adaptive_avg_pool2d;
    n.in = {input.id, -1, -1};
    n.adapt_h = out_h;
    n.adapt_w = out_w;
    return record(tape, std::move(n), std::move(out), "adaptive_avg_pool2d");
}

Var linear(Var input, Var weight, Var bias) {
    Tape& tape = same_tape(input, weight);
    same_tape(input, bias);
    const Tensor& x = input.value();
    const Tensor& w = weight.value();
    const Tensor& b = bias.value();
    if (x.ndim() != 2 || w.ndim() != 2) throw ShapeError("linear expects [N,in] and [out,in]");
    if (x.dim(1) != w.dim(1))
        throw ShapeError("linear: input features " + std::to_string(x.dim(1)) +
                         " != weight features " + std::to_string(w.dim(1)));
    if (b.ndim() != 1 || b.dim(0) != w.dim(0))
        throw ShapeError("linear: bias must have one entry per output feature");
    Tensor out(Shape{x.dim(0), w.dim(0)});
    kernels::linear_forward(out.mutable_data(), x.data(), w.data(), b.data(), x.dim(0),
                            x.dim(1), w.dim(0));
    Node n;
    n.kind = OpKind::linear;
    n.in = {input.id, weight.id, bias.id};
    return record(tape, std::move(n), std::move(out), "linear");
}

Var log_softmax(Var logits) {
    Tape& tape = tape_of(logits);
    const Tensor& x = logits.value();
    if (x.ndim() != 2) throw ShapeError("log_softmax expects [N,C]");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor out(x.shape());
    double* o = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r) {
        double mx = x.at2(r, 0);
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, x.at2(r, c));
        double sum = 0.0;
        for (int64_t c = 0; c < cols; ++c) sum += std::exp(x.at2(r, c) - mx);
        const double lse = mx + std::log(sum);
        for (int64_t c = 0; c < cols; ++c) o[r * cols + c] = x.at2(r, c) - lse;
    }
    Node n;
    n.kind = OpKind::log_softmax;
    n.in = {logits.id, -1, -1};
    return record(tape, std::move(n), std::move(out), "log_softmax");
}

Var nll_loss(Var log_probs, const std::vector<int>& targets, const Tensor& class_weights) {
    Tape& tape = tape_of(log_probs);
    const Tensor& logp = log_probs.value();
    if (logp.ndim() != 2) throw ShapeError("nll_loss expects log probabilities [N,C]");
    const int64_t rows = logp.dim(0), classes = logp.dim(1);
    if (static_cast<int64_t>(targets.size()) != rows)
        throw ShapeError("nll_loss: one target per row required");
    if (class_weights.ndim() != 1 || class_weights.dim(0) != classes)
        throw ShapeError("nll_loss: one class weight per class required");
    for (int64_t c = 0; c < classes; ++c)
        if (!(class_weights[c] > 0.0)) throw DataError("nll_loss: class weights must be positive");
    double num = 0.0, den = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const int t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= classes)
            throw DataError("nll_loss: target " + std::to_string(t) + " out of range");
        num += class_weights[t] * (-logp.at2(r, t));
        den += class_weights[t];
    }
    Node n;
    n.kind = OpKind::nll_loss;
    n.in = {log_probs.id, -1, -1};
    n.targets = targets;
    n.class_weights = class_weights;
    return record(tape, std::move(n), Tensor::scalar(num / den), "nll_loss");
}

}  // namespace fdflare::ops
