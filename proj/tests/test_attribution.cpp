#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "fdflare/attribution.hpp"
#include "fdflare/model.hpp"
#include "fdflare/ops.hpp"
#include "testutil.hpp"

using namespace fdflare;
using catalog::Label;

namespace {

// f_FL(x1, x2) = 2 x1 - x2 + 1 over a 1x2 gray image: a 1x1 mixing conv
// undoes the channel triplication, then a fully connected readout applies
// the affine coefficients.  The adaptive pool pins the readout width and is
// the identity because its target equals the input size.
model::Model affine_model() {
    model::ArchitectureSpec spec;
    spec.name = "affine";
    spec.in_channels = 3;
    model::LayerDesc mix;
    mix.kind = model::LayerKind::conv;
    mix.name = "mix";
    mix.out_channels = 1;
    mix.kernel = 1;
    mix.stride = 1;
    mix.pad = 0;
    spec.layers.push_back(mix);
    model::LayerDesc pin;
    pin.kind = model::LayerKind::adaptive_avg_pool;
    pin.target_h = 1;
    pin.target_w = 2;
    spec.layers.push_back(pin);
    model::LayerDesc flat;
    flat.kind = model::LayerKind::flatten;
    spec.layers.push_back(flat);
    model::LayerDesc out;
    out.kind = model::LayerKind::fully_connected;
    out.name = "out";
    out.out_features = 2;
    spec.layers.push_back(out);
    spec.final_conv_tap = "mix";

    model::Model m = model::init_params(spec, "uniform", 1);
    const double third = 1.0 / 3.0;
    m.set_param("mix.weight", Tensor::from(Shape{1, 3, 1, 1}, {third, third, third}));
    m.set_param("mix.bias", Tensor::zeros(Shape{1}));
    m.set_param("out.weight", Tensor::from(Shape{2, 2}, {2.0, -1.0, 0.5, 0.5}));
    m.set_param("out.bias", Tensor::from(Shape{2}, {1.0, 0.0}));
    return m;
}

Tensor standard_input_gradient(const model::Model& m, const Tensor& gray, Label target) {
    Tape tape;
    auto f = model::forward_gray_on(tape, m, gray.reshaped(Shape{1, 1, gray.dim(1), gray.dim(2)}));
    Var logit = ops::pick(f.logits, 0, static_cast<int64_t>(target));
    GradMap grads = backward(tape, logit);
    return grad_or_zeros(grads, f.gray_input).reshaped(Shape{gray.dim(1), gray.dim(2)});
}

}  // namespace

TEST_CASE("method names") {
    using attribution::Method;
    CHECK(attribution::parse_method("guided_grad_cam") == Method::guided_grad_cam);
    CHECK(attribution::parse_method("ig") == Method::integrated_gradients);
    CHECK(attribution::parse_method("deepshap") == Method::deep_shap);
    CHECK(attribution::parse_method("occlusion") == Method::occlusion);
    CHECK(std::string(attribution::method_name(Method::integrated_gradients)) ==
          "integrated_gradients");
    CHECK_THROWS_AS(attribution::parse_method("lime"), UsageError);
}

TEST_CASE("grad-cam combination formula") {
    SUBCASE("two-map hand case") {
        // A1 = [[1,0],[0,1]], A2 = [[0,2],[0,0]] with mean gradients 1, -1
        Tensor maps = Tensor::from(Shape{1, 2, 2, 2}, {1, 0, 0, 1, 0, 2, 0, 0});
        Tensor grads = Tensor::from(Shape{1, 2, 2, 2}, {1, 1, 1, 1, -1, -1, -1, -1});
        Tensor raw = attribution::grad_cam_combine(maps, grads);
        CHECK(raw.bitwise_equal(Tensor::from(Shape{2, 2}, {1, 0, 0, 1})));
    }
    SUBCASE("zero gradients zero the map") {
        Tensor maps = testutil::random_tensor(Shape{1, 3, 4, 4}, 21);
        Tensor raw = attribution::grad_cam_combine(maps, Tensor::zeros(maps.shape()));
        for (int64_t i = 0; i < raw.numel(); ++i) CHECK(raw[i] == 0.0);
    }
    SUBCASE("unit weight on a single map keeps its positive part") {
        Tensor maps = testutil::random_tensor(Shape{1, 1, 3, 3}, 22);
        Tensor raw = attribution::grad_cam_combine(maps, Tensor::full(maps.shape(), 1.0));
        for (int64_t i = 0; i < raw.numel(); ++i)
            CHECK(raw[i] == std::max(0.0, maps[i]));
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(attribution::grad_cam_combine(Tensor::zeros(Shape{1, 2, 2, 2}),
                                                      Tensor::zeros(Shape{1, 1, 2, 2})),
                        ShapeError);
    }
}

TEST_CASE("guided backprop on a relu-free model equals the standard gradient") {
    model::Model m = affine_model();
    Tensor x = Tensor::from(Shape{1, 1, 2}, {0.7, -0.3});
    Tensor guided = attribution::guided_backprop(m, x, Label::FL);
    REQUIRE(guided.shape() == Shape{1, 2});
    CHECK(guided[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(guided[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(testutil::max_abs_diff(guided, standard_input_gradient(m, x, Label::FL)) == 0.0);
}

TEST_CASE("guided backprop of a constant logit is zero") {
    model::Model m = affine_model();
    m.set_param("out.weight", Tensor::zeros(Shape{2, 2}));
    Tensor guided = attribution::guided_backprop(m, Tensor::from(Shape{1, 1, 2}, {0.4, 0.9}),
                                                 Label::FL);
    CHECK(guided[0] == 0.0);
    CHECK(guided[1] == 0.0);
}

TEST_CASE("guided grad-cam") {
    const auto spec = model::build_tiny();
    model::Model m = model::init_params(spec, "uniform", 33);
    Tensor x = testutil::random_tensor(Shape{1, 16, 16}, 34);

    const auto cam = attribution::grad_cam(m, x, Label::FL);
    Tensor guided = attribution::guided_backprop(m, x, Label::FL);
    const auto combined = attribution::guided_grad_cam(m, x, Label::FL);

    REQUIRE(cam.coarse.shape() == Shape{4, 4});
    REQUIRE(cam.upsampled.shape() == Shape{16, 16});
    REQUIRE(combined.values.shape() == Shape{16, 16});
    CHECK(combined.method == attribution::Method::guided_grad_cam);
    CHECK(!combined.completeness_residual.has_value());

    SUBCASE("the map is the elementwise product of its parts") {
        for (int64_t i = 0; i < combined.values.numel(); ++i)
            CHECK(combined.values[i] == cam.upsampled[i] * guided[i]);
    }
    SUBCASE("support is contained in the grad-cam support") {
        for (int64_t i = 0; i < combined.values.numel(); ++i)
            if (cam.upsampled[i] == 0.0) CHECK(combined.values[i] == 0.0);
    }
    SUBCASE("coarse map is non-negative") {
        for (int64_t i = 0; i < cam.coarse.numel(); ++i) CHECK(cam.coarse[i] >= 0.0);
    }
}

TEST_CASE("integrated gradients on the affine model") {
    model::Model m = affine_model();
    Tensor x = Tensor::from(Shape{1, 1, 2}, {1.0, 1.0});
    const auto map = attribution::integrated_gradients(m, x, Label::FL, nullptr, 8);
    REQUIRE(map.values.shape() == Shape{1, 2});
    CHECK(map.values[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(map.values[1] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(map.steps == 8);
    CHECK(map.baseline_desc == "zeros");
    REQUIRE(map.completeness_residual.has_value());
    // sum = 1 = f(x) - f(0) exactly for an affine function
    CHECK(std::fabs(*map.completeness_residual) < 1e-12);
}

TEST_CASE("integrated gradients quadrature on a product function") {
    attribution::ScalarField field;
    field.value = [](const Tensor& p) { return p[0] * p[1]; };
    field.gradient = [](const Tensor& p) {
        return Tensor::from(Shape{2}, {p[1], p[0]});
    };
    Tensor x = Tensor::from(Shape{2}, {2.0, 3.0});
    double residual = 1.0;
    Tensor attr = attribution::integrated_gradients_field(field, x, nullptr, 7, &residual);
    // the path gradient is linear in the path position, which the midpoint
    // rule integrates exactly: each input gets x1 x2 / 2
    CHECK(attr[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(attr[1] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(std::fabs(residual) < 1e-12);
}

TEST_CASE("batched and single-step integrated gradients agree") {
    const auto spec = model::build_tiny();
    model::Model m = model::init_params(spec, "uniform", 35);
    Tensor x = testutil::random_tensor(Shape{1, 16, 16}, 36);

    attribution::ScalarField field;
    field.value = [&](const Tensor& p) {
        return model::logits_of_gray(m, p.reshaped(Shape{1, 1, 16, 16})).at2(0, 0);
    };
    field.gradient = [&](const Tensor& p) { return standard_input_gradient(m, p, Label::FL); };

    const auto batched = attribution::integrated_gradients(m, x, Label::FL, nullptr, 24);
    Tensor single = attribution::integrated_gradients_field(field, x, nullptr, 24);
    CHECK(testutil::max_abs_diff(batched.values, single) < 1e-12);
}

TEST_CASE("integrated gradients completeness on the small cnn") {
    const auto spec = model::build_tiny();
    model::Model m = model::init_params(spec, "uniform", 37);
    Tensor x = testutil::random_tensor(Shape{1, 16, 16}, 38);
    const auto map = attribution::integrated_gradients(m, x, Label::FL, nullptr, 256);

    const double fx = model::logits_of_gray(m, x.reshaped(Shape{1, 1, 16, 16})).at2(0, 0);
    const double f0 =
        model::logits_of_gray(m, Tensor::zeros(Shape{1, 1, 16, 16})).at2(0, 0);
    REQUIRE(map.completeness_residual.has_value());
    CHECK(std::fabs(*map.completeness_residual) <= 1e-3 * std::fabs(fx - f0) + 1e-6);

    SUBCASE("residual shrinks as steps grow") {
        const auto coarse = attribution::integrated_gradients(m, x, Label::FL, nullptr, 64);
        const auto fine = attribution::integrated_gradients(m, x, Label::FL, nullptr, 512);
        CHECK(std::fabs(*fine.completeness_residual) <=
              2.0 * std::fabs(*coarse.completeness_residual) + 1e-9);
    }
}

TEST_CASE("integrated gradients input validation") {
    model::Model m = affine_model();
    Tensor x = Tensor::from(Shape{1, 1, 2}, {1.0, 1.0});
    CHECK_THROWS_AS(attribution::integrated_gradients(m, x, Label::FL, nullptr, 0),
                    UsageError);
    Tensor wrong = Tensor::zeros(Shape{1, 2, 2});
    CHECK_THROWS_AS(attribution::integrated_gradients(m, x, Label::FL, &wrong, 4),
                    ShapeError);
}

TEST_CASE("deep shap on the affine model") {
    model::Model m = affine_model();
    Tensor x = Tensor::from(Shape{1, 1, 2}, {1.0, 0.5});
    SUBCASE("single background recovers the affine coefficients") {
        Tensor b = Tensor::from(Shape{1, 1, 2}, {0.25, -0.5});
        const auto map = attribution::deep_shap(m, x, Label::FL, {b});
        CHECK(map.values[0] == doctest::Approx(2.0 * (1.0 - 0.25)).epsilon(1e-8));
        CHECK(map.values[1] == doctest::Approx(-1.0 * (0.5 + 0.5)).epsilon(1e-8));
        CHECK(map.backgrounds == 1);
        REQUIRE(map.completeness_residual.has_value());
        CHECK(*map.completeness_residual < 1e-9);
    }
    SUBCASE("zero background matches integrated gradients") {
        Tensor zero = Tensor::zeros(Shape{1, 1, 2});
        const auto shap = attribution::deep_shap(m, x, Label::FL, {zero});
        const auto ig = attribution::integrated_gradients(m, x, Label::FL, nullptr, 16);
        CHECK(testutil::max_abs_diff(shap.values, ig.values) < 1e-8);
    }
    SUBCASE("empty background set is rejected") {
        CHECK_THROWS_AS(attribution::deep_shap(m, x, Label::FL, {}), UsageError);
    }
    SUBCASE("background shape mismatch is rejected") {
        CHECK_THROWS_AS(
            attribution::deep_shap(m, x, Label::FL, {Tensor::zeros(Shape{1, 2, 2})}),
            ShapeError);
    }
}

TEST_CASE("deep shap summation-to-delta on the small cnn") {
    const auto spec = model::build_tiny();
    model::Model m = model::init_params(spec, "uniform", 39);
    Tensor x = testutil::random_tensor(Shape{1, 16, 16}, 40);
    std::vector<Tensor> backgrounds;
    for (uint64_t s = 41; s < 44; ++s)
        backgrounds.push_back(testutil::random_tensor(Shape{1, 16, 16}, s));

    const auto map = attribution::deep_shap(m, x, Label::FL, backgrounds);
    CHECK(map.backgrounds == 3);
    REQUIRE(map.completeness_residual.has_value());
    CHECK(*map.completeness_residual < 1e-6);

    SUBCASE("mean attribution sums to the mean output delta") {
        double mean_delta = 0.0;
        const double fx = model::logits_of_gray(m, x.reshaped(Shape{1, 1, 16, 16})).at2(0, 0);
        for (const Tensor& b : backgrounds)
            mean_delta +=
                (fx - model::logits_of_gray(m, b.reshaped(Shape{1, 1, 16, 16})).at2(0, 0)) /
                3.0;
        double total = 0.0;
        for (int64_t i = 0; i < map.values.numel(); ++i) total += map.values[i];
        CHECK(total == doctest::Approx(mean_delta).epsilon(1e-9));
    }
}

TEST_CASE("attribution maps are target sensitive") {
    const auto spec = model::build_tiny();
    model::Model m = model::init_params(spec, "uniform", 45);
    Tensor x = testutil::random_tensor(Shape{1, 16, 16}, 46);
    const auto fl = attribution::integrated_gradients(m, x, Label::FL, nullptr, 16);
    const auto nf = attribution::integrated_gradients(m, x, Label::NF, nullptr, 16);
    CHECK(testutil::max_abs_diff(fl.values, nf.values) > 1e-8);
}

TEST_CASE("occlusion oracle") {
    model::Model m = affine_model();
    Tensor x = Tensor::from(Shape{1, 1, 2}, {1.0, 1.0});
    SUBCASE("pixel-sized patches recover the affine deltas") {
        Tensor map = attribution::occlusion_map(m, x, Label::FL, 1, 1);
        CHECK(map[0] == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(map[1] == doctest::Approx(-1.0).epsilon(1e-12));
    }
    SUBCASE("a constant model yields a zero map") {
        model::Model flat = affine_model();
        flat.set_param("out.weight", Tensor::zeros(Shape{2, 2}));
        Tensor map = attribution::occlusion_map(flat, x, Label::FL, 1, 1);
        CHECK(map[0] == 0.0);
        CHECK(map[1] == 0.0);
    }
    SUBCASE("whole-image patch compares against the fill image") {
        const auto spec = model::build_tiny();
        model::Model tiny = model::init_params(spec, "uniform", 47);
        Tensor img = testutil::random_tensor(Shape{1, 16, 16}, 48);
        Tensor map = attribution::occlusion_map(tiny, img, Label::FL, 16, 16);
        const double fx =
            model::logits_of_gray(tiny, img.reshaped(Shape{1, 1, 16, 16})).at2(0, 0);
        const double ff =
            model::logits_of_gray(tiny, Tensor::zeros(Shape{1, 1, 16, 16})).at2(0, 0);
        for (int64_t i = 0; i < map.numel(); ++i)
            CHECK(map[i] == doctest::Approx(fx - ff).epsilon(1e-12));
    }
    SUBCASE("degenerate parameters are rejected") {
        CHECK_THROWS_AS(attribution::occlusion_map(m, x, Label::FL, 3, 1), UsageError);
        CHECK_THROWS_AS(attribution::occlusion_map(m, x, Label::FL, 1, 0), UsageError);
    }
}

TEST_CASE("attribution mass in a region") {
    Tensor map = Tensor::from(Shape{2, 2}, {1.0, -1.0, 0.0, 2.0});
    CHECK(attribution::mass_in_region(map, 0, 1, 0, 2) == doctest::Approx(0.5));
    CHECK(attribution::mass_in_region(map, 0, 2, 0, 2) == doctest::Approx(1.0));
    CHECK(attribution::mass_in_region(Tensor::zeros(Shape{2, 2}), 0, 1, 0, 1) == 0.0);
    CHECK_THROWS_AS(attribution::mass_in_region(map, 1, 1, 0, 2), UsageError);
    CHECK_THROWS_AS(attribution::mass_in_region(map, 0, 3, 0, 2), UsageError);
    CHECK_THROWS_AS(attribution::mass_in_region(Tensor::zeros(Shape{1, 2, 2}), 0, 1, 0, 1),
                    ShapeError);
}
