#include "fdflare/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "fdflare/errors.hpp"
#include "fdflare/imaging.hpp"
#include "fdflare/ops.hpp"

namespace fdflare::attribution {

const char* method_name(Method m) {
    switch (m) {
        case Method::guided_grad_cam: return "guided_grad_cam";
        case Method::integrated_gradients: return "integrated_gradients";
        case Method::deep_shap: return "deep_shap";
        case Method::occlusion: return "occlusion";
    }
    return "unknown";
}

Method parse_method(const std::string& text) {
    if (text == "guided_grad_cam" || text == "ggcam") return Method::guided_grad_cam;
    if (text == "integrated_gradients" || text == "ig") return Method::integrated_gradients;
    if (text == "deep_shap" || text == "deepshap") return Method::deep_shap;
    if (text == "occlusion") return Method::occlusion;
    throw UsageError("unknown attribution method '" + text + "'");
}

namespace {

void require_gray(const Tensor& gray) {
    if (gray.ndim() != 3 || gray.dim(0) != 1)
        throw ShapeError("attribution expects a [1,H,W] gray image, got " +
                         shape_to_string(gray.shape()));
}

Tensor as_batch1(const Tensor& gray) {
    return gray.reshaped(Shape{1, 1, gray.dim(1), gray.dim(2)});
}

int64_t target_col(catalog::Label target) { return static_cast<int64_t>(target); }

double logit_at(const model::Model& m, const Tensor& gray, catalog::Label target) {
    return model::logits_of_gray(m, as_batch1(gray)).at2(0, target_col(target));
}

}  // namespace

Tensor grad_cam_combine(const Tensor& activations, const Tensor& gradients) {
    if (activations.ndim() != 4 || activations.dim(0) != 1 ||
        !shapes_equal(activations.shape(), gradients.shape()))
        throw ShapeError("grad_cam_combine expects matching [1,K,h,w] tensors, got " +
                         shape_to_string(activations.shape()) + " and " +
                         shape_to_string(gradients.shape()));
    const int64_t K = activations.dim(1), h = activations.dim(2), w = activations.dim(3);
    Tensor coarse(Shape{h, w});
    double* cm = coarse.mutable_data();
    for (int64_t k = 0; k < K; ++k) {
        double alpha = 0.0;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) alpha += gradients.at4(0, k, y, x);
        alpha /= static_cast<double>(h * w);
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                cm[y * w + x] += alpha * activations.at4(0, k, y, x);
    }
    for (int64_t i = 0; i < coarse.numel(); ++i) cm[i] = std::max(0.0, cm[i]);
    return coarse;
}

GradCamResult grad_cam(const model::Model& m, const Tensor& gray, catalog::Label target) {
    require_gray(gray);
    Tape tape;
    auto f = model::forward_gray_on(tape, m, as_batch1(gray));
    Var logit = ops::pick(f.logits, 0, target_col(target));
    GradMap grads = backward(tape, logit);
    GradCamResult r;
    r.coarse = grad_cam_combine(f.final_conv.value(), grad_or_zeros(grads, f.final_conv));
    r.upsampled = imaging::resize_bilinear(r.coarse, gray.dim(1), gray.dim(2));
    return r;
}

Tensor guided_backprop(const model::Model& m, const Tensor& gray, catalog::Label target) {
    require_gray(gray);
    Tape tape;
    auto f = model::forward_gray_on(tape, m, as_batch1(gray));
    Var logit = ops::pick(f.logits, 0, target_col(target));
    GradMap grads = backward(tape, logit, BackwardMode::guided_mode());
    Tensor g = grad_or_zeros(grads, f.gray_input);
    return g.reshaped(Shape{gray.dim(1), gray.dim(2)});
}

AttributionMap guided_grad_cam(const model::Model& m, const Tensor& gray,
                               catalog::Label target) {
    GradCamResult cam = grad_cam(m, gray, target);
    Tensor guided = guided_backprop(m, gray, target);
    Tensor values(guided.shape());
    double* out = values.mutable_data();
    const double* a = cam.upsampled.data();
    const double* b = guided.data();
    for (int64_t i = 0; i < values.numel(); ++i) out[i] = a[i] * b[i];
    AttributionMap map;
    map.values = std::move(values);
    map.method = Method::guided_grad_cam;
    map.target_class = target;
    map.baseline_desc = "none";
    return map;
}

AttributionMap integrated_gradients(const model::Model& m, const Tensor& gray,
                                    catalog::Label target, const Tensor* baseline,
                                    int steps) {
    require_gray(gray);
    if (steps < 1) throw UsageError("integrated gradients needs at least 1 step");
    Tensor base = baseline != nullptr ? *baseline : Tensor::zeros(gray.shape());
    if (!shapes_equal(base.shape(), gray.shape()))
        throw ShapeError("baseline shape " + shape_to_string(base.shape()) +
                         " does not match image shape " + shape_to_string(gray.shape()));
    const int64_t H = gray.dim(1), W = gray.dim(2), n = H * W;
    const int64_t col = target_col(target);
    const double* xp = gray.data();
    const double* bp = base.data();

    Tensor grad_sum = Tensor::zeros(Shape{H, W});
    double* gs = grad_sum.mutable_data();
    constexpr int kChunk = 64;
    for (int k0 = 0; k0 < steps; k0 += kChunk) {
        const int rows = std::min(kChunk, steps - k0);
        Tensor batch(Shape{rows, 1, H, W});
        double* bb = batch.mutable_data();
        for (int j = 0; j < rows; ++j) {
            const double t = (k0 + j + 0.5) / static_cast<double>(steps);
            for (int64_t i = 0; i < n; ++i) bb[j * n + i] = bp[i] + t * (xp[i] - bp[i]);
        }
        Tape tape;
        auto f = model::forward_gray_on(tape, m, std::move(batch));
        Tensor seed = Tensor::zeros(f.logits.value().shape());
        double* sd = seed.mutable_data();
        for (int j = 0; j < rows; ++j) sd[j * 2 + col] = 1.0;
        GradMap grads = backward(tape, f.logits, BackwardMode::standard_mode(), &seed);
        Tensor g = grad_or_zeros(grads, f.gray_input);
        const double* gp = g.data();
        for (int j = 0; j < rows; ++j)
            for (int64_t i = 0; i < n; ++i) gs[i] += gp[j * n + i];
    }

    Tensor values(Shape{H, W});
    double* out = values.mutable_data();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        out[i] = (xp[i] - bp[i]) * gs[i] / static_cast<double>(steps);
        total += out[i];
    }
    const double fx = logit_at(m, gray, target);
    const double fb = logit_at(m, base, target);

    AttributionMap map;
    map.values = std::move(values);
    map.method = Method::integrated_gradients;
    map.target_class = target;
    map.baseline_desc = baseline != nullptr ? "provided" : "zeros";
    map.steps = steps;
    map.completeness_residual = total - (fx - fb);
    return map;
}

Tensor integrated_gradients_field(const ScalarField& f, const Tensor& x,
                                  const Tensor* baseline, int steps, double* residual_out) {
    if (steps < 1) throw UsageError("integrated gradients needs at least 1 step");
    Tensor base = baseline != nullptr ? *baseline : Tensor::zeros(x.shape());
    if (!shapes_equal(base.shape(), x.shape()))
        throw ShapeError("baseline shape " + shape_to_string(base.shape()) +
                         " does not match input shape " + shape_to_string(x.shape()));
    const int64_t n = x.numel();
    const double* xp = x.data();
    const double* bp = base.data();
    Tensor grad_sum = Tensor::zeros(x.shape());
    double* gs = grad_sum.mutable_data();
    for (int k = 0; k < steps; ++k) {
        const double t = (k + 0.5) / static_cast<double>(steps);
        Tensor point(x.shape());
        double* pp = point.mutable_data();
        for (int64_t i = 0; i < n; ++i) pp[i] = bp[i] + t * (xp[i] - bp[i]);
        Tensor g = f.gradient(point);
        for (int64_t i = 0; i < n; ++i) gs[i] += g[i];
    }
    Tensor values(x.shape());
    double* out = values.mutable_data();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        out[i] = (xp[i] - bp[i]) * gs[i] / static_cast<double>(steps);
        total += out[i];
    }
    if (residual_out != nullptr) *residual_out = total - (f.value(x) - f.value(base));
    return values;
}

AttributionMap deep_shap(const model::Model& m, const Tensor& gray, catalog::Label target,
                         const std::vector<Tensor>& backgrounds) {
    require_gray(gray);
    if (backgrounds.empty()) throw UsageError("deep shap needs at least one background");
    const int64_t H = gray.dim(1), W = gray.dim(2), n = H * W;
    const int64_t col = target_col(target);
    const double* xp = gray.data();

    Tensor mean_values = Tensor::zeros(Shape{H, W});
    double* mv = mean_values.mutable_data();
    double mean_residual = 0.0;
    const double inv_b = 1.0 / static_cast<double>(backgrounds.size());
    for (const Tensor& bg : backgrounds) {
        if (!shapes_equal(bg.shape(), gray.shape()))
            throw ShapeError("background shape " + shape_to_string(bg.shape()) +
                             " does not match image shape " + shape_to_string(gray.shape()));
        Tape tape, ref;
        auto f = model::forward_gray_on(tape, m, as_batch1(gray));
        auto fr = model::forward_gray_on(ref, m, as_batch1(bg));
        Var logit = ops::pick(f.logits, 0, col);
        Var ref_logit = ops::pick(fr.logits, 0, col);
        GradMap mult = backward(tape, logit, BackwardMode::rescale_mode(ref));
        Tensor mg = grad_or_zeros(mult, f.gray_input);
        const double* mp = mg.data();
        const double* bp = bg.data();
        double total = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double a = (xp[i] - bp[i]) * mp[i];
            mv[i] += a * inv_b;
            total += a;
        }
        const double delta = logit.value().value() - ref_logit.value().value();
        const double residual = std::abs(total - delta);
        if (residual > kShapRelativeTolerance * std::max(std::abs(delta), 1e-3))
            throw NumericError("deep shap summation-to-delta violated: attribution sum " +
                               std::to_string(total) + " vs output difference " +
                               std::to_string(delta));
        mean_residual += residual * inv_b;
    }

    AttributionMap map;
    map.values = std::move(mean_values);
    map.method = Method::deep_shap;
    map.target_class = target;
    map.baseline_desc = std::to_string(backgrounds.size()) + " backgrounds";
    map.backgrounds = static_cast<int>(backgrounds.size());
    map.completeness_residual = mean_residual;
    return map;
}

Tensor occlusion_map(const model::Model& m, const Tensor& gray, catalog::Label target,
                     int patch, int stride, double fill) {
    require_gray(gray);
    const int64_t H = gray.dim(1), W = gray.dim(2);
    if (patch < 1 || patch > H || patch > W)
        throw UsageError("occlusion patch must fit the image");
    if (stride < 1) throw UsageError("occlusion stride must be positive");
    const double base = logit_at(m, gray, target);

    Tensor sum = Tensor::zeros(Shape{H, W});
    Tensor count = Tensor::zeros(Shape{H, W});
    double* sp = sum.mutable_data();
    double* cp = count.mutable_data();
    for (int64_t y0 = 0; y0 + patch <= H; y0 += stride) {
        for (int64_t x0 = 0; x0 + patch <= W; x0 += stride) {
            Tensor occluded(gray.shape(), std::vector<double>(gray.data(),
                                                              gray.data() + gray.numel()));
            double* op = occluded.mutable_data();
            for (int64_t y = y0; y < y0 + patch; ++y)
                for (int64_t x = x0; x < x0 + patch; ++x) op[y * W + x] = fill;
            const double delta = base - logit_at(m, occluded, target);
            for (int64_t y = y0; y < y0 + patch; ++y)
                for (int64_t x = x0; x < x0 + patch; ++x) {
                    sp[y * W + x] += delta;
                    cp[y * W + x] += 1.0;
                }
        }
    }
    Tensor out(Shape{H, W});
    double* o = out.mutable_data();
    for (int64_t i = 0; i < out.numel(); ++i) o[i] = cp[i] > 0.0 ? sp[i] / cp[i] : 0.0;
    return out;
}

double mass_in_region(const Tensor& map, int64_t y0, int64_t y1, int64_t x0, int64_t x1) {
    if (map.ndim() != 2)
        throw ShapeError("mass_in_region expects a [H,W] map, got " +
                         shape_to_string(map.shape()));
    const int64_t H = map.dim(0), W = map.dim(1);
    if (y0 < 0 || y1 > H || x0 < 0 || x1 > W || y0 >= y1 || x0 >= x1)
        throw UsageError("mass_in_region box out of range");
    const double* p = map.data();
    double total = 0.0, inside = 0.0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const double a = std::abs(p[y * W + x]);
            total += a;
            if (y >= y0 && y < y1 && x >= x0 && x < x1) inside += a;
        }
    return total > 0.0 ? inside / total : 0.0;
}

}  // namespace fdflare::attribution
