#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "fdflare/tensor.hpp"

namespace fdflare {

class Tape;

// Handle to a tensor recorded on a tape.
struct Var {
    int id = -1;
    Tape* tape = nullptr;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
};

enum class OpKind : uint8_t {
    leaf,
    add,
    sub,
    mul,
    scale,
    sum_all,
    pick,
    reshape,
    channel_duplicate,
    conv2d,
    relu,
    maxpool2d,
    adaptive_avg_pool2d,
    linear,
    log_softmax,
    nll_loss,
};

const char* op_kind_name(OpKind kind);

struct Node {
    OpKind kind = OpKind::leaf;
    std::array<int, 3> in{-1, -1, -1};  // up to (input, weight, bias)
    int out = -1;

    // op-specific metadata; only the fields the kind uses are meaningful
    double alpha = 0.0;                  // scale factor
    int64_t pick_row = 0, pick_col = 0;  // pick
    Shape prev_shape;                    // reshape
    int conv_stride = 1, conv_pad = 0;   // conv2d
    int pool_kernel = 2;                 // maxpool2d
    std::vector<int64_t> argmax;         // maxpool2d forward choices
    int adapt_h = 0, adapt_w = 0;        // adaptive_avg_pool2d
    std::vector<int> targets;            // nll_loss
    Tensor class_weights;                // nll_loss, shape [2]
};

// Reverse-mode differentiation behavior. Standard computes exact gradients.
// Guided zeroes negative upstream contributions at ReLU nodes. Rescale
// propagates DeepLIFT-style multipliers against a reference forward pass,
// supplied as a second tape built by the same op sequence on the reference
// input.
struct BackwardMode {
    enum class Kind : uint8_t { standard, guided, rescale };
    Kind kind = Kind::standard;
    const Tape* reference = nullptr;

    static BackwardMode standard_mode() { return {}; }
    static BackwardMode guided_mode() { return {Kind::guided, nullptr}; }
    static BackwardMode rescale_mode(const Tape& ref) { return {Kind::rescale, &ref}; }
};

// Records one forward pass: values are stored per tensor id, nodes in
// execution order. Nodes are appended only through the ops in ops.hpp,
// which guarantees topological order (inputs always precede outputs).
class Tape {
  public:
    Var leaf(Tensor t);

    const Tensor& value(int id) const { return values_.at(static_cast<size_t>(id)); }
    const std::vector<Node>& nodes() const { return nodes_; }
    size_t num_values() const { return values_.size(); }

    // True when the other tape records the same op sequence over tensors of
    // the same shapes (values may differ). Required between a tape and its
    // rescale reference.
    bool structurally_equal(const Tape& other) const;

    // Used by ops.hpp when recording; not part of the public surface.
    int push_value(Tensor t);
    void push_node(Node n);

  private:
    std::vector<Tensor> values_;
    std::vector<Node> nodes_;
};

using GradMap = std::unordered_map<int, Tensor>;

// Reverse traversal of the tape from `output`. Returns gradients (standard /
// guided) or multipliers (rescale) for every tensor id reached, including
// intermediates; absent ids have zero gradient. `seed` is required when the
// output is not scalar and must match its shape.
GradMap backward(const Tape& tape, Var output,
                 const BackwardMode& mode = BackwardMode::standard_mode(),
                 const Tensor* seed = nullptr);

// Gradient for `v` from a backward() result, zeros if never reached.
Tensor grad_or_zeros(const GradMap& grads, Var v);

// Threshold below which the rescale rule falls back to the ordinary
// gradient to avoid dividing by a vanishing input difference.
inline constexpr double kRescaleDelta = 1e-7;

}  // namespace fdflare
