#include "fdflare/model.hpp"

#include <cmath>
#include <random>

#include "fdflare/raster_io.hpp"

namespace fdflare::model {

namespace {

LayerDesc conv(std::string name, int out_channels) {
    LayerDesc d;
    d.kind = LayerKind::conv;
    d.name = std::move(name);
    d.out_channels = out_channels;
    return d;
}

LayerDesc relu() {
    LayerDesc d;
    d.kind = LayerKind::relu;
    return d;
}

LayerDesc maxpool(std::string name = "") {
    LayerDesc d;
    d.kind = LayerKind::maxpool;
    d.name = std::move(name);
    return d;
}

LayerDesc adaptive(int target) {
    LayerDesc d;
    d.kind = LayerKind::adaptive_avg_pool;
    d.target_h = target;
    d.target_w = target;
    return d;
}

LayerDesc flatten() {
    LayerDesc d;
    d.kind = LayerKind::flatten;
    return d;
}

LayerDesc fc(std::string name, int out_features) {
    LayerDesc d;
    d.kind = LayerKind::fully_connected;
    d.name = std::move(name);
    d.out_features = out_features;
    return d;
}

}  // namespace

ArchitectureSpec build_vgg16_fulldisk() {
    ArchitectureSpec spec;
    spec.name = "vgg16";
    spec.in_channels = 3;
    const int block_channels[] = {64, 128, 256, 512, 512};
    const int block_convs[] = {2, 2, 3, 3, 3};
    for (int b = 0; b < 5; ++b) {
        for (int i = 0; i < block_convs[b]; ++i) {
            const std::string name =
                "conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1);
            spec.layers.push_back(conv(name, block_channels[b]));
            spec.layers.push_back(relu());
        }
        spec.layers.push_back(maxpool("pool" + std::to_string(b + 1)));
    }
    spec.layers.push_back(adaptive(7));
    spec.layers.push_back(flatten());
    spec.layers.push_back(fc("fc1", 4096));
    spec.layers.push_back(relu());
    spec.layers.push_back(fc("fc2", 4096));
    spec.layers.push_back(relu());
    spec.layers.push_back(fc("fc3", 2));
    spec.final_conv_tap = "pool5";
    return spec;
}

ArchitectureSpec build_tiny() {
    ArchitectureSpec spec;
    spec.name = "tiny";
    spec.in_channels = 3;
    spec.layers.push_back(conv("conv1_1", 8));
    spec.layers.push_back(relu());
    spec.layers.push_back(conv("conv1_2", 8));
    spec.layers.push_back(relu());
    spec.layers.push_back(maxpool("pool1"));
    spec.layers.push_back(conv("conv2_1", 16));
    spec.layers.push_back(relu());
    spec.layers.push_back(conv("conv2_2", 16));
    spec.layers.push_back(relu());
    spec.layers.push_back(maxpool("pool2"));
    spec.layers.push_back(adaptive(4));
    spec.layers.push_back(flatten());
    spec.layers.push_back(fc("fc1", 2));
    spec.final_conv_tap = "pool2";
    return spec;
}

ArchitectureSpec architecture_by_name(const std::string& name) {
    if (name == "vgg16") return build_vgg16_fulldisk();
    if (name == "tiny") return build_tiny();
    throw UsageError("unknown architecture: '" + name + "'");
}

std::vector<Shape> infer_shapes(const ArchitectureSpec& spec, int64_t in_h, int64_t in_w) {
    std::vector<Shape> out;
    out.reserve(spec.layers.size());
    int64_t c = spec.in_channels, h = in_h, w = in_w;
    bool flattened = false;
    int64_t features = 0;
    for (const LayerDesc& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv: {
                if (flattened) throw ShapeError("conv after flatten in " + spec.name);
                const int64_t ph = h + 2 * l.pad, pw = w + 2 * l.pad;
                if (l.kernel > ph || l.kernel > pw)
                    throw ShapeError(l.name + ": kernel larger than padded input");
                if ((ph - l.kernel) % l.stride != 0 || (pw - l.kernel) % l.stride != 0)
                    throw ShapeError(l.name + ": non-exact output size");
                h = (ph - l.kernel) / l.stride + 1;
                w = (pw - l.kernel) / l.stride + 1;
                c = l.out_channels;
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::maxpool:
                if (h % l.pool_kernel != 0 || w % l.pool_kernel != 0)
                    throw ShapeError("maxpool input " + std::to_string(h) + "x" +
                                     std::to_string(w) + " not divisible by kernel");
                h /= l.pool_kernel;
                w /= l.pool_kernel;
                break;
            case LayerKind::adaptive_avg_pool:
                if (h < l.target_h || w < l.target_w)
                    throw ShapeError("adaptive pool input " + std::to_string(h) + "x" +
                                     std::to_string(w) + " smaller than target");
                h = l.target_h;
                w = l.target_w;
                break;
            case LayerKind::flatten:
                features = c * h * w;
                flattened = true;
                break;
            case LayerKind::fully_connected:
                if (!flattened)
                    throw ShapeError("fully connected layer before flatten in " + spec.name);
                features = l.out_features;
                break;
        }
        out.push_back(flattened ? Shape{features} : Shape{c, h, w});
    }
    if (out.empty() || out.back() != Shape{2})
        throw ShapeError("architecture " + spec.name + " does not end in 2 logits");
    return out;
}

int64_t parameter_count(const ArchitectureSpec& spec) {
    int64_t total = 0;
    int64_t c = spec.in_channels;
    int64_t features = -1;
    for (const LayerDesc& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv:
                total += static_cast<int64_t>(l.out_channels) * c * l.kernel * l.kernel +
                         l.out_channels;
                c = l.out_channels;
                break;
            case LayerKind::adaptive_avg_pool:
                features = c * l.target_h * l.target_w;
                break;
            case LayerKind::fully_connected:
                if (features < 0)
                    throw ShapeError("fully connected layer before flatten in " + spec.name);
                total += features * l.out_features + l.out_features;
                features = l.out_features;
                break;
            default:
                break;
        }
    }
    return total;
}

const Tensor& Model::param(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return t;
    throw DataError("no parameter named '" + name + "'");
}

void Model::set_param(const std::string& name, Tensor value) {
    for (auto& [n, t] : params) {
        if (n == name) {
            if (!shapes_equal(t.shape(), value.shape()))
                throw ShapeError("parameter '" + name + "' shape " +
                                 shape_to_string(t.shape()) + " cannot take " +
                                 shape_to_string(value.shape()));
            t = std::move(value);
            return;
        }
    }
    throw DataError("no parameter named '" + name + "'");
}

Model init_params(const ArchitectureSpec& spec, const std::string& scheme, uint64_t seed) {
    if (scheme != "uniform") throw UsageError("unknown init scheme: '" + scheme + "'");
    Model m;
    m.spec = spec;
    std::mt19937_64 rng(seed);
    int64_t c = spec.in_channels;
    int64_t features = -1;
    for (const LayerDesc& l : spec.layers) {
        if (l.kind == LayerKind::conv) {
            const int64_t fan_in = c * l.kernel * l.kernel;
            const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            Tensor w(Shape{l.out_channels, c, l.kernel, l.kernel});
            double* p = w.mutable_data();
            for (int64_t i = 0; i < w.numel(); ++i) p[i] = dist(rng);
            m.params.emplace_back(l.name + ".weight", std::move(w));
            m.params.emplace_back(l.name + ".bias", Tensor::zeros(Shape{l.out_channels}));
            c = l.out_channels;
        } else if (l.kind == LayerKind::adaptive_avg_pool) {
            features = c * l.target_h * l.target_w;
        } else if (l.kind == LayerKind::fully_connected) {
            if (features < 0)
                throw ShapeError("fully connected layer before flatten in " + spec.name);
            const double bound = std::sqrt(1.0 / static_cast<double>(features));
            std::uniform_real_distribution<double> dist(-bound, bound);
            Tensor w(Shape{l.out_features, features});
            double* p = w.mutable_data();
            for (int64_t i = 0; i < w.numel(); ++i) p[i] = dist(rng);
            m.params.emplace_back(l.name + ".weight", std::move(w));
            m.params.emplace_back(l.name + ".bias", Tensor::zeros(Shape{l.out_features}));
            features = l.out_features;
        }
    }
    return m;
}

namespace {

ForwardResult run_stack(Tape& tape, const Model& m, Var x) {
    ForwardResult r;
    r.input = x;
    r.param_vars.reserve(m.params.size());
    size_t pi = 0;
    auto next_params = [&](const std::string& layer) -> std::pair<Var, Var> {
        if (pi + 2 > m.params.size() || m.params[pi].first != layer + ".weight" ||
            m.params[pi + 1].first != layer + ".bias")
            throw DataError("parameter store does not match architecture at layer '" + layer +
                            "'");
        Var w = tape.leaf(Tensor(m.params[pi].second).set_requires_grad(true));
        Var b = tape.leaf(Tensor(m.params[pi + 1].second).set_requires_grad(true));
        r.param_vars.push_back(w);
        r.param_vars.push_back(b);
        pi += 2;
        return {w, b};
    };

    Var h = x;
    bool flattened = false;
    for (const LayerDesc& l : m.spec.layers) {
        switch (l.kind) {
            case LayerKind::conv: {
                auto [w, b] = next_params(l.name);
                h = ops::conv2d(h, w, b, l.stride, l.pad);
                break;
            }
            case LayerKind::relu:
                h = ops::relu(h);
                break;
            case LayerKind::maxpool:
                h = ops::maxpool2d(h, l.pool_kernel, l.pool_kernel);
                break;
            case LayerKind::adaptive_avg_pool:
                h = ops::adaptive_avg_pool2d(h, l.target_h, l.target_w);
                break;
            case LayerKind::flatten: {
                const Shape& s = h.value().shape();
                h = ops::reshape(h, Shape{s[0], s[1] * s[2] * s[3]});
                flattened = true;
                break;
            }
            case LayerKind::fully_connected: {
                if (!flattened)
                    throw ShapeError("fully connected layer before flatten in " + m.spec.name);
                auto [w, b] = next_params(l.name);
                h = ops::linear(h, w, b);
                break;
            }
        }
        if (!l.name.empty() && l.name == m.spec.final_conv_tap) r.final_conv = h;
    }
    if (!r.final_conv.valid())
        throw DataError("architecture " + m.spec.name + " has no tap layer named '" +
                        m.spec.final_conv_tap + "'");
    r.logits = h;
    return r;
}

}  // namespace

ForwardResult forward_on(Tape& tape, const Model& m, Tensor batch) {
    if (batch.ndim() != 4 || batch.dim(1) != m.spec.in_channels)
        throw ShapeError("forward expects [N," + std::to_string(m.spec.in_channels) +
                         ",H,W], got " + shape_to_string(batch.shape()));
    Var x = tape.leaf(std::move(batch.set_requires_grad(true)));
    return run_stack(tape, m, x);
}

ForwardResult forward_gray_on(Tape& tape, const Model& m, Tensor gray) {
    if (gray.ndim() != 4 || gray.dim(1) != 1)
        throw ShapeError("forward_gray expects [N,1,H,W], got " +
                         shape_to_string(gray.shape()));
    Var g = tape.leaf(std::move(gray.set_requires_grad(true)));
    Var x = ops::channel_duplicate(g);
    ForwardResult r = run_stack(tape, m, x);
    r.gray_input = g;
    return r;
}

Tensor logits_of(const Model& m, const Tensor& batch) {
    Tape tape;
    return forward_on(tape, m, batch).logits.value();
}

Tensor logits_of_gray(const Model& m, const Tensor& gray) {
    Tape tape;
    return forward_gray_on(tape, m, gray).logits.value();
}

std::vector<double> fl_probabilities(const Tensor& logits) {
    if (logits.ndim() != 2 || logits.dim(1) != 2)
        throw ShapeError("fl_probabilities expects [N,2] logits");
    std::vector<double> out(static_cast<size_t>(logits.dim(0)));
    for (int64_t r = 0; r < logits.dim(0); ++r) {
        const double fl = logits.at2(r, 0), nf = logits.at2(r, 1);
        const double mx = std::max(fl, nf);
        const double efl = std::exp(fl - mx), enf = std::exp(nf - mx);
        out[static_cast<size_t>(r)] = efl / (efl + enf);
    }
    return out;
}

void save_weights(const Model& m, const std::string& path) {
    raster::write_named_rasters(path, m.params, raster::Dtype::f64);
}

namespace {

// (name, shape) for every parameter in layer order, without materializing
// the tensors.
std::vector<std::pair<std::string, Shape>> expected_params(const ArchitectureSpec& spec) {
    std::vector<std::pair<std::string, Shape>> out;
    int64_t c = spec.in_channels;
    int64_t features = -1;
    for (const LayerDesc& l : spec.layers) {
        if (l.kind == LayerKind::conv) {
            out.emplace_back(l.name + ".weight", Shape{l.out_channels, c, l.kernel, l.kernel});
            out.emplace_back(l.name + ".bias", Shape{l.out_channels});
            c = l.out_channels;
        } else if (l.kind == LayerKind::adaptive_avg_pool) {
            features = c * l.target_h * l.target_w;
        } else if (l.kind == LayerKind::fully_connected) {
            if (features < 0)
                throw ShapeError("fully connected layer before flatten in " + spec.name);
            out.emplace_back(l.name + ".weight", Shape{l.out_features, features});
            out.emplace_back(l.name + ".bias", Shape{l.out_features});
            features = l.out_features;
        }
    }
    return out;
}

}  // namespace

Model load_weights(const ArchitectureSpec& spec, const std::string& path) {
    const auto entries = raster::read_named_rasters(path);
    const auto expected = expected_params(spec);
    if (entries.size() != expected.size())
        throw DataError("weights file has " + std::to_string(entries.size()) +
                        " parameters, architecture " + spec.name + " needs " +
                        std::to_string(expected.size()));
    Model m;
    m.spec = spec;
    m.params.reserve(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& [name, tensor] = entries[i];
        const auto& [want_name, want_shape] = expected[i];
        if (name != want_name)
            throw DataError("weights file parameter '" + name + "' where '" + want_name +
                            "' was expected");
        if (!shapes_equal(tensor.shape(), want_shape))
            throw DataError("parameter '" + name + "' has shape " +
                            shape_to_string(tensor.shape()) + ", expected " +
                            shape_to_string(want_shape));
        m.params.emplace_back(name, tensor);
    }
    return m;
}

}  // namespace fdflare::model
