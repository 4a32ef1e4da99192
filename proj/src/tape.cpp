#include "fdflare/tape.hpp"

#include <cmath>
#include <string>

#include "fdflare/kernels.hpp"

namespace fdflare {

const char* op_kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::sum_all: return "sum_all";
        case OpKind::pick: return "pick";
        case OpKind::reshape: return "reshape";
        case OpKind::channel_duplicate: return "channel_duplicate";
        case OpKind::conv2d: return "conv2d";
        case OpKind::relu: return "relu";
        case OpKind::maxpool2d: return "maxpool2d";
        case OpKind::adaptive_avg_pool2d: return "adaptive_avg_pool2d";
        case OpKind::linear: return "linear";
        case OpKind::log_softmax: return "log_softmax";
        case OpKind::nll_loss: return "nll_loss";
    }
    return "?";
}

const Tensor& Var::value() const {
    if (!valid()) throw DataError("value() on detached Var");
    return tape->value(id);
}

Var Tape::leaf(Tensor t) {
    t.ensure_finite("leaf");
    const int id = push_value(std::move(t));
    Node n;
    n.kind = OpKind::leaf;
    n.out = id;
    push_node(std::move(n));
    return Var{id, this};
}

int Tape::push_value(Tensor t) {
    values_.push_back(std::move(t));
    return static_cast<int>(values_.size()) - 1;
}

void Tape::push_node(Node n) { nodes_.push_back(std::move(n)); }

bool Tape::structurally_equal(const Tape& other) const {
    if (nodes_.size() != other.nodes_.size()) return false;
    if (values_.size() != other.values_.size()) return false;
    for (size_t i = 0; i < nodes_.size(); ++i) {
        const Node& a = nodes_[i];
        const Node& b = other.nodes_[i];
        if (a.kind != b.kind || a.in != b.in || a.out != b.out) return false;
    }
    for (size_t i = 0; i < values_.size(); ++i) {
        if (values_[i].shape() != other.values_[i].shape()) return false;
    }
    return true;
}

namespace {

void accumulate(GradMap& grads, int id, Tensor g) {
    auto it = grads.find(id);
    if (it == grads.end()) {
        grads.emplace(id, std::move(g));
        return;
    }
    Tensor& dst = it->second;
    Tensor merged(dst.shape());
    double* out = merged.mutable_data();
    const double* a = dst.data();
    const double* b = g.data();
    for (int64_t i = 0; i < merged.numel(); ++i) out[i] = a[i] + b[i];
    dst = std::move(merged);
}

kernels::ConvDims conv_dims_of(const Tape& tape, const Node& node) {
    const Shape& in_s = tape.value(node.in[0]).shape();
    const Shape& w_s = tape.value(node.in[1]).shape();
    const Shape& out_s = tape.value(node.out).shape();
    kernels::ConvDims d;
    d.n = in_s[0];
    d.c = in_s[1];
    d.h = in_s[2];
    d.w = in_s[3];
    d.k = w_s[0];
    d.kh = w_s[2];
    d.kw = w_s[3];
    d.stride = node.conv_stride;
    d.pad = node.conv_pad;
    d.oh = out_s[2];
    d.ow = out_s[3];
    return d;
}

// Standard ReLU gradient: pass where the forward input was positive.
Tensor relu_backward_standard(const Tensor& g, const Tensor& x) {
    Tensor out(x.shape());
    double* o = out.mutable_data();
    const double* gp = g.data();
    const double* xp = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) o[i] = xp[i] > 0.0 ? gp[i] : 0.0;
    return out;
}

// Guided rule: additionally zero negative upstream contributions.
Tensor relu_backward_guided(const Tensor& g, const Tensor& x) {
    Tensor out(x.shape());
    double* o = out.mutable_data();
    const double* gp = g.data();
    const double* xp = x.data();
    for (int64_t i = 0; i < x.numel(); ++i)
        o[i] = (xp[i] > 0.0 && gp[i] > 0.0) ? gp[i] : 0.0;
    return out;
}

// Rescale rule: multiplier (relu(x) - relu(xr)) / (x - xr), falling back to
// the ordinary gradient when the input difference vanishes.
Tensor relu_backward_rescale(const Tensor& g, const Tensor& x, const Tensor& xr) {
    Tensor out(x.shape());
    double* o = out.mutable_data();
    const double* gp = g.data();
    const double* xp = x.data();
    const double* rp = xr.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double dx = xp[i] - rp[i];
        if (std::fabs(dx) > kRescaleDelta) {
            const double dy = (xp[i] > 0.0 ? xp[i] : 0.0) - (rp[i] > 0.0 ? rp[i] : 0.0);
            o[i] = gp[i] * (dy / dx);
        } else {
            o[i] = xp[i] > 0.0 ? gp[i] : 0.0;
        }
    }
    return out;
}

// Rescale rule for non-overlapping max pooling. The output difference of a
// window is split between the actual argmax and the reference argmax so
// that sum(multiplier_i * (x_i - xr_i)) over the window equals
// g * (max(x) - max(xr)) exactly; entries with a vanishing input difference
// are dropped (their share is below kRescaleDelta * |g|).
Tensor maxpool_backward_rescale(const Tensor& g, const Node& node, const Node& ref_node,
                                const Tensor& x, const Tensor& xr) {
    Tensor out(x.shape());
    double* o = out.mutable_data();
    const double* gp = g.data();
    const double* xp = x.data();
    const double* rp = xr.data();
    std::vector<double> routed(static_cast<size_t>(x.numel()), 0.0);
    for (size_t i = 0; i < node.argmax.size(); ++i) {
        const int64_t ja = node.argmax[i];
        const int64_t jr = ref_node.argmax[i];
        const double y = xp[ja];
        const double ry = rp[jr];
        const double cross = y > ry ? y : ry;
        routed[static_cast<size_t>(ja)] += gp[i] * (cross - ry);
        routed[static_cast<size_t>(jr)] += gp[i] * (y - cross);
    }
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double dx = xp[i] - rp[i];
        o[i] = std::fabs(dx) > kRescaleDelta ? routed[static_cast<size_t>(i)] / dx : 0.0;
    }
    return out;
}

Tensor log_softmax_backward(const Tensor& g, const Tensor& y) {
    // dx_j = g_j - exp(y_j) * sum_k g_k, per row
    const int64_t rows = y.dim(0), cols = y.dim(1);
    Tensor out(y.shape());
    double* o = out.mutable_data();
    const double* gp = g.data();
    const double* yp = y.data();
    for (int64_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (int64_t c = 0; c < cols; ++c) gsum += gp[r * cols + c];
        for (int64_t c = 0; c < cols; ++c)
            o[r * cols + c] = gp[r * cols + c] - std::exp(yp[r * cols + c]) * gsum;
    }
    return out;
}

}  // namespace

Tensor grad_or_zeros(const GradMap& grads, Var v) {
    auto it = grads.find(v.id);
    if (it != grads.end()) return it->second;
    return Tensor::zeros(v.value().shape());
}

GradMap backward(const Tape& tape, Var output, const BackwardMode& mode, const Tensor* seed) {
    if (!output.valid() || output.tape != &tape ||
        static_cast<size_t>(output.id) >= tape.num_values()) {
        throw DataError("backward: output is not recorded on this tape");
    }
    const Tensor& out_val = tape.value(output.id);
    if (mode.kind == BackwardMode::Kind::rescale) {
        if (mode.reference == nullptr) throw DataError("rescale mode without reference tape");
        if (!tape.structurally_equal(*mode.reference))
            throw DataError("rescale reference tape does not match this tape's structure");
    }

    GradMap grads;
    if (seed != nullptr) {
        if (seed->shape() != out_val.shape())
            throw ShapeError("backward seed shape does not match output");
        grads.emplace(output.id, *seed);
    } else {
        if (out_val.numel() != 1)
            throw ShapeError("backward on non-scalar output requires an explicit seed gradient");
        grads.emplace(output.id, Tensor::full(out_val.shape(), 1.0));
    }

    const auto& nodes = tape.nodes();
    for (size_t ni = nodes.size(); ni-- > 0;) {
        const Node& node = nodes[ni];
        if (node.kind == OpKind::leaf) continue;
        auto git = grads.find(node.out);
        if (git == grads.end()) continue;
        const Tensor g = git->second;
        const double* gp = g.data();

        switch (node.kind) {
            case OpKind::add: {
                accumulate(grads, node.in[0], g);
                accumulate(grads, node.in[1], g);
                break;
            }
            case OpKind::sub: {
                accumulate(grads, node.in[0], g);
                Tensor neg(g.shape());
                double* o = neg.mutable_data();
                for (int64_t i = 0; i < g.numel(); ++i) o[i] = -gp[i];
                accumulate(grads, node.in[1], std::move(neg));
                break;
            }
            case OpKind::mul: {
                const Tensor& a = tape.value(node.in[0]);
                const Tensor& b = tape.value(node.in[1]);
                if (mode.kind == BackwardMode::Kind::rescale) {
                    // Multipliers propagate exactly through linear nodes only;
                    // a product is supported when one factor is a constant leaf
                    // (identical in the actual and reference passes).
                    const auto& ref_nodes = mode.reference;
                    const bool a_const = nodes[static_cast<size_t>(node.in[0])].kind ==
                                             OpKind::leaf &&
                                         tape.value(node.in[0])
                                             .bitwise_equal(ref_nodes->value(node.in[0]));
                    const bool b_const = nodes[static_cast<size_t>(node.in[1])].kind ==
                                             OpKind::leaf &&
                                         tape.value(node.in[1])
                                             .bitwise_equal(ref_nodes->value(node.in[1]));
                    if (!a_const && !b_const)
                        throw DataError(
                            "rescale backward through mul of two varying tensors is unsupported");
                }
                Tensor ga(a.shape()), gb(b.shape());
                double* pa = ga.mutable_data();
                double* pb = gb.mutable_data();
                const double* ap = a.data();
                const double* bp = b.data();
                for (int64_t i = 0; i < a.numel(); ++i) {
                    pa[i] = gp[i] * bp[i];
                    pb[i] = gp[i] * ap[i];
                }
                accumulate(grads, node.in[0], std::move(ga));
                accumulate(grads, node.in[1], std::move(gb));
                break;
            }
            case OpKind::scale: {
                Tensor ga(g.shape());
                double* o = ga.mutable_data();
                for (int64_t i = 0; i < g.numel(); ++i) o[i] = gp[i] * node.alpha;
                accumulate(grads, node.in[0], std::move(ga));
                break;
            }
            case OpKind::sum_all: {
                const Tensor& a = tape.value(node.in[0]);
                accumulate(grads, node.in[0], Tensor::full(a.shape(), g.value()));
                break;
            }
            case OpKind::pick: {
                const Tensor& a = tape.value(node.in[0]);
                Tensor ga(a.shape());
                ga.mutable_data()[node.pick_row * a.dim(1) + node.pick_col] = g.value();
                accumulate(grads, node.in[0], std::move(ga));
                break;
            }
            case OpKind::reshape: {
                accumulate(grads, node.in[0], g.reshaped(node.prev_shape));
                break;
            }
            case OpKind::channel_duplicate: {
                const Tensor& a = tape.value(node.in[0]);
                const int64_t plane = a.numel();  // per-batch gray plane count
                Tensor ga(a.shape());
                double* o = ga.mutable_data();
                // Output is [.., 3, H, W]; sum the three channel copies.
                const Shape& os = g.shape();
                const int64_t hw = os[os.size() - 1] * os[os.size() - 2];
                const int64_t batches = plane / hw;
                for (int64_t b = 0; b < batches; ++b)
                    for (int64_t i = 0; i < hw; ++i) {
                        const double* src = gp + b * 3 * hw;
                        o[b * hw + i] = src[i] + src[hw + i] + src[2 * hw + i];
                    }
                accumulate(grads, node.in[0], std::move(ga));
                break;
            }
            case OpKind::conv2d: {
                const Tensor& x = tape.value(node.in[0]);
                const Tensor& w = tape.value(node.in[1]);
                const kernels::ConvDims d = conv_dims_of(tape, node);
                Tensor gx(x.shape());
                kernels::conv2d_backward_input(gx.mutable_data(), gp, w.data(), d);
                accumulate(grads, node.in[0], std::move(gx));
                Tensor gw(w.shape());
                kernels::conv2d_backward_weight(gw.mutable_data(), gp, x.data(), d);
                accumulate(grads, node.in[1], std::move(gw));
                Tensor gb(Shape{d.k});
                kernels::conv2d_backward_bias(gb.mutable_data(), gp, d);
                accumulate(grads, node.in[2], std::move(gb));
                break;
            }
            case OpKind::relu: {
                const Tensor& x = tape.value(node.in[0]);
                Tensor gx;
                switch (mode.kind) {
                    case BackwardMode::Kind::standard:
                        gx = relu_backward_standard(g, x);
                        break;
                    case BackwardMode::Kind::guided:
                        gx = relu_backward_guided(g, x);
                        break;
                    case BackwardMode::Kind::rescale:
                        gx = relu_backward_rescale(g, x, mode.reference->value(node.in[0]));
                        break;
                }
                accumulate(grads, node.in[0], std::move(gx));
                break;
            }
            case OpKind::maxpool2d: {
                const Tensor& x = tape.value(node.in[0]);
                if (mode.kind == BackwardMode::Kind::rescale) {
                    const Node& ref_node = mode.reference->nodes()[ni];
                    accumulate(grads, node.in[0],
                               maxpool_backward_rescale(g, node, ref_node, x,
                                                        mode.reference->value(node.in[0])));
                } else {
                    Tensor gx(x.shape());
                    kernels::maxpool2d_backward(gx.mutable_data(), gp, node.argmax.data(),
                                                g.numel());
                    accumulate(grads, node.in[0], std::move(gx));
                }
                break;
            }
            case OpKind::adaptive_avg_pool2d: {
                const Tensor& x = tape.value(node.in[0]);
                Tensor gx(x.shape());
                kernels::adaptive_avg_pool_backward(gx.mutable_data(), gp, x.dim(0), x.dim(1),
                                                    x.dim(2), x.dim(3), node.adapt_h,
                                                    node.adapt_w);
                accumulate(grads, node.in[0], std::move(gx));
                break;
            }
            case OpKind::linear: {
                const Tensor& x = tape.value(node.in[0]);
                const Tensor& w = tape.value(node.in[1]);
                const int64_t n = x.dim(0), fin = x.dim(1), fout = w.dim(0);
                Tensor gx(x.shape());
                kernels::linear_backward_input(gx.mutable_data(), gp, w.data(), n, fin, fout);
                accumulate(grads, node.in[0], std::move(gx));
                Tensor gw(w.shape());
                kernels::linear_backward_weight(gw.mutable_data(), gp, x.data(), n, fin, fout);
                accumulate(grads, node.in[1], std::move(gw));
                Tensor gb(Shape{fout});
                kernels::linear_backward_bias(gb.mutable_data(), gp, n, fout);
                accumulate(grads, node.in[2], std::move(gb));
                break;
            }
            case OpKind::log_softmax: {
                if (mode.kind == BackwardMode::Kind::rescale)
                    throw DataError("rescale backward through log_softmax is unsupported");
                accumulate(grads, node.in[0], log_softmax_backward(g, tape.value(node.out)));
                break;
            }
            case OpKind::nll_loss: {
                if (mode.kind == BackwardMode::Kind::rescale)
                    throw DataError("rescale backward through nll_loss is unsupported");
                const Tensor& logp = tape.value(node.in[0]);
                const int64_t n = logp.dim(0), classes = logp.dim(1);
                double wsum = 0.0;
                for (int64_t r = 0; r < n; ++r) wsum += node.class_weights[node.targets[r]];
                Tensor gx(logp.shape());
                double* o = gx.mutable_data();
                const double gs = g.value();
                for (int64_t r = 0; r < n; ++r) {
                    const int t = node.targets[static_cast<size_t>(r)];
                    o[r * classes + t] = -gs * node.class_weights[t] / wsum;
                }
                accumulate(grads, node.in[0], std::move(gx));
                break;
            }
            case OpKind::leaf:
                break;
        }
    }

    // Drop gradients for leaves that do not require them; intermediates stay
    // available for attribution taps.
    for (const Node& node : nodes) {
        if (node.kind != OpKind::leaf) continue;
        if (!tape.value(node.out).requires_grad()) grads.erase(node.out);
    }
    return grads;
}

}  // namespace fdflare
