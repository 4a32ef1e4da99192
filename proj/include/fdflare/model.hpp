#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fdflare/ops.hpp"
#include "fdflare/tape.hpp"
#include "fdflare/tensor.hpp"

namespace fdflare::model {

enum class LayerKind { conv, relu, maxpool, adaptive_avg_pool, flatten, fully_connected };

struct LayerDesc {
    LayerKind kind;
    std::string name;       // parameter layers and the tap layer are named
    int out_channels = 0;   // conv
    int kernel = 3;         // conv
    int stride = 1;         // conv
    int pad = 1;            // conv
    int pool_kernel = 2;    // maxpool
    int target_h = 0;       // adaptive_avg_pool
    int target_w = 0;
    int out_features = 0;   // fully_connected
};

struct ArchitectureSpec {
    std::string name;  // "vgg16" | "tiny"
    int in_channels = 3;
    std::vector<LayerDesc> layers;
    std::string final_conv_tap;  // name of the layer whose output is tapped
};

// VGG-16 stack: conv 64,64 / 128,128 / 256x3 / 512x3 / 512x3 (3x3, stride
// 1, pad 1), max pool after each block, adaptive average pool to 7x7,
// flatten, fully connected 25088 -> 4096 -> 4096 -> 2.
ArchitectureSpec build_vgg16_fulldisk();

// Two-block test variant: conv 8,8 / pool / conv 16,16 / pool / adaptive
// 4x4 / flatten / fully connected 256 -> 2. Same code paths, minutes-scale
// training; accepts inputs of 16 pixels and up.
ArchitectureSpec build_tiny();

ArchitectureSpec architecture_by_name(const std::string& name);

// Output shape of every layer for a given input size, in layer order.
// Shapes are [C,H,W] until flatten, then [F]. Throws ShapeError when the
// spec cannot process the given size.
std::vector<Shape> infer_shapes(const ArchitectureSpec& spec, int64_t in_h, int64_t in_w);

// Closed-form parameter total: conv K*C*kh*kw + K, fully connected
// in*out + out. Independent of input size.
int64_t parameter_count(const ArchitectureSpec& spec);

struct Model {
    ArchitectureSpec spec;
    // ordered "<layer>.weight" / "<layer>.bias" pairs, layer order
    std::vector<std::pair<std::string, Tensor>> params;

    const Tensor& param(const std::string& name) const;
    void set_param(const std::string& name, Tensor value);
};

// Uniform fan-in scheme: weights U(-sqrt(1/fan_in), +sqrt(1/fan_in)) from
// mt19937_64(seed) drawn in layer order, biases zero. The only recognized
// scheme is "uniform".
Model init_params(const ArchitectureSpec& spec, const std::string& scheme, uint64_t seed);

struct ForwardResult {
    Var input;       // the leaf actually fed to the stack ([N,3,H,W])
    Var gray_input;  // valid when forward_gray_on was used ([N,1,H,W])
    Var final_conv;  // tap-layer output
    Var logits;      // [N,2], order (FL, NF)
    std::vector<Var> param_vars;  // aligned with Model::params
};

// Records a forward pass for `batch` [N,3,H,W] on the tape. Input and
// parameter leaves are marked as requiring gradients.
ForwardResult forward_on(Tape& tape, const Model& m, Tensor batch);

// Same, from single-channel input [N,1,H,W] via channel duplication.
ForwardResult forward_gray_on(Tape& tape, const Model& m, Tensor gray);

// Convenience forward on a throwaway tape.
Tensor logits_of(const Model& m, const Tensor& batch);
Tensor logits_of_gray(const Model& m, const Tensor& gray);

// Softmax probability of the FL logit (index 0) per batch row.
std::vector<double> fl_probabilities(const Tensor& logits);

// Weights persist in the named-raster format, one record per parameter in
// layer order; round-trip is bitwise exact (f64 payload).
void save_weights(const Model& m, const std::string& path);
Model load_weights(const ArchitectureSpec& spec, const std::string& path);

}  // namespace fdflare::model
