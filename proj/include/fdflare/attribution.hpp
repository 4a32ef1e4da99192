#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fdflare/catalog.hpp"
#include "fdflare/model.hpp"
#include "fdflare/tensor.hpp"

namespace fdflare::attribution {

enum class Method { guided_grad_cam, integrated_gradients, deep_shap, occlusion };

const char* method_name(Method m);
Method parse_method(const std::string& text);

// Signed relevance over the gray input geometry. The 3-channel duplicated
// input is collapsed to one channel by summation before reporting.
struct AttributionMap {
    Tensor values;  // [H,W]
    Method method = Method::integrated_gradients;
    catalog::Label target_class = catalog::Label::FL;
    std::string baseline_desc;
    int steps = 0;        // integrated gradients
    int backgrounds = 0;  // deep shap
    std::optional<double> completeness_residual;
};

struct GradCamResult {
    Tensor coarse;     // [h,w] at the tap layer's spatial size
    Tensor upsampled;  // [H,W], bilinear
};

// All methods take the normalized gray input [1,H,W] the model consumes
// and attribute the raw target-class logit (before log-softmax).

// alpha_k = spatial mean of d logit / d A_k at the final-conv tap;
// raw map = relu(sum_k alpha_k A_k).
GradCamResult grad_cam(const model::Model& m, const Tensor& gray, catalog::Label target);

// The combination formula alone: activations and their gradients [1,K,h,w]
// to the raw coarse map [h,w].
Tensor grad_cam_combine(const Tensor& activations, const Tensor& gradients);

// Guided-mode backward from the target logit to the gray input.
Tensor guided_backprop(const model::Model& m, const Tensor& gray, catalog::Label target);

// Elementwise product of the upsampled Grad-CAM map and the guided
// backpropagation map.
AttributionMap guided_grad_cam(const model::Model& m, const Tensor& gray,
                               catalog::Label target);

// Midpoint-rule path integral from the baseline (zeros when absent):
// IG_i = (x_i - b_i) * (1/m) * sum_k df/dx_i at b + ((k-0.5)/m)(x-b).
// Steps are evaluated in batches; records the completeness residual
// sum(IG) - (f(x) - f(b)).
AttributionMap integrated_gradients(const model::Model& m, const Tensor& gray,
                                    catalog::Label target, const Tensor* baseline = nullptr,
                                    int steps = 256);

// A differentiable scalar function given by value and gradient callbacks;
// lets the quadrature run against functions outside the model family.
struct ScalarField {
    std::function<double(const Tensor&)> value;
    std::function<Tensor(const Tensor&)> gradient;
};

// Same midpoint-rule integral for an arbitrary scalar field over any
// tensor shape; steps are evaluated one at a time.
Tensor integrated_gradients_field(const ScalarField& f, const Tensor& x,
                                  const Tensor* baseline = nullptr, int steps = 256,
                                  double* residual_out = nullptr);

// Rescale-rule attribution against each background, averaged:
// attribution_b,i = (x_i - b_i) * multiplier_i with reference activations
// from the background's forward pass. completeness_residual is the mean of
// per-background absolute residuals. Throws NumericError if any background
// violates summation-to-delta beyond 1e-6 relative.
AttributionMap deep_shap(const model::Model& m, const Tensor& gray, catalog::Label target,
                         const std::vector<Tensor>& backgrounds);

inline constexpr double kShapRelativeTolerance = 1e-6;

// Perturbation oracle: every pixel accumulates f(x) - f(x with the
// covering patch set to `fill`), averaged over covering patches.
Tensor occlusion_map(const model::Model& m, const Tensor& gray, catalog::Label target,
                     int patch, int stride, double fill = 0.0);

// Share of total absolute attribution inside the pixel box
// [y0, y1) x [x0, x1); 0 when the map is all zero.
double mass_in_region(const Tensor& map, int64_t y0, int64_t y1, int64_t x0, int64_t x1);

}  // namespace fdflare::attribution
