#include <doctest.h>

#include <cmath>
#include <vector>

#include "fdflare/errors.hpp"
#include "fdflare/ops.hpp"
#include "fdflare/tape.hpp"
#include "testutil.hpp"

using namespace fdflare;
namespace tu = fdflare::testutil;

namespace {

// Fixed parameters for a small conv net used across the gradient checks:
// conv(1->2, 3x3, pad 1) -> relu -> maxpool2 -> conv(2->2, 3x3, pad 1) ->
// relu -> adaptive 2x2 -> flatten -> linear(8->2).
struct SmallNetParams {
    Tensor w1 = tu::random_tensor(Shape{2, 1, 3, 3}, 101, -0.5, 0.5, 0.05);
    Tensor b1 = Tensor::from(Shape{2}, {0.1, -0.2});
    Tensor w2 = tu::random_tensor(Shape{2, 2, 3, 3}, 102, -0.5, 0.5, 0.05);
    Tensor b2 = Tensor::from(Shape{2}, {0.05, 0.15});
    Tensor w3 = tu::random_tensor(Shape{2, 8}, 103, -0.5, 0.5, 0.05);
    Tensor b3 = Tensor::from(Shape{2}, {0.3, -0.1});
};

struct SmallNetVars {
    Var input, w1, b1, w2, b2, w3, b3, logits;
};

SmallNetVars build_small_net(Tape& tape, const SmallNetParams& p, Tensor input) {
    SmallNetVars v;
    v.input = tape.leaf(std::move(input.set_requires_grad(true)));
    v.w1 = tape.leaf(Tensor(p.w1).set_requires_grad(true));
    v.b1 = tape.leaf(Tensor(p.b1).set_requires_grad(true));
    v.w2 = tape.leaf(Tensor(p.w2).set_requires_grad(true));
    v.b2 = tape.leaf(Tensor(p.b2).set_requires_grad(true));
    v.w3 = tape.leaf(Tensor(p.w3).set_requires_grad(true));
    v.b3 = tape.leaf(Tensor(p.b3).set_requires_grad(true));
    Var h = ops::conv2d(v.input, v.w1, v.b1, 1, 1);
    h = ops::relu(h);
    h = ops::maxpool2d(h, 2, 2);
    h = ops::conv2d(h, v.w2, v.b2, 1, 1);
    h = ops::relu(h);
    h = ops::adaptive_avg_pool2d(h, 2, 2);
    h = ops::reshape(h, Shape{1, 8});
    v.logits = ops::linear(h, v.w3, v.b3);
    return v;
}

double small_net_loss(const SmallNetParams& p, const Tensor& input) {
    Tape tape;
    SmallNetVars v = build_small_net(tape, p, input);
    Var lp = ops::log_softmax(v.logits);
    Var loss = ops::nll_loss(lp, {0}, Tensor::from(Shape{2}, {1.0, 1.0}));
    return loss.value().value();
}

}  // namespace

TEST_CASE("forward values: relu, log_softmax, nll") {
    Tape tape;
    Var x = tape.leaf(Tensor::from(Shape{3}, {-1.0, 0.0, 2.0}));
    Var y = ops::relu(x);
    CHECK(y.value()[0] == 0.0);
    CHECK(y.value()[1] == 0.0);
    CHECK(y.value()[2] == 2.0);

    // logits (0, ln 3) give probabilities (1/4, 3/4)
    Var logits = tape.leaf(Tensor::from(Shape{1, 2}, {0.0, std::log(3.0)}));
    Var lp = ops::log_softmax(logits);
    CHECK(lp.value().at2(0, 0) == doctest::Approx(std::log(0.25)).epsilon(1e-12));
    CHECK(lp.value().at2(0, 1) == doctest::Approx(std::log(0.75)).epsilon(1e-12));

    // equal logits, one row: loss is ln 2
    Var even = tape.leaf(Tensor::from(Shape{1, 2}, {0.0, 0.0}));
    Var even_lp = ops::log_softmax(even);
    Var loss = ops::nll_loss(even_lp, {0}, Tensor::from(Shape{2}, {1.0, 1.0}));
    CHECK(loss.value().value() == doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("weighted nll averages by the summed target weights") {
    // row 0: p(target 0) = 1/2, row 1: p(target 1) = 3/4, weights (3, 1):
    // loss = (3*ln 2 + 1*(-ln 0.75)) / 4
    Tape tape;
    Var lp = tape.leaf(Tensor::from(
        Shape{2, 2}, {std::log(0.5), std::log(0.5), std::log(0.25), std::log(0.75)}));
    Var loss = ops::nll_loss(lp, {0, 1}, Tensor::from(Shape{2}, {3.0, 1.0}));
    const double expected = (3.0 * 0.6931471805599453 + 0.2876820724517809) / 4.0;
    CHECK(loss.value().value() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("forward values: conv identity kernel reproduces the input") {
    Tape tape;
    Tensor img = tu::random_tensor(Shape{1, 1, 4, 4}, 7);
    Var x = tape.leaf(img);
    Tensor ident = Tensor::zeros(Shape{1, 1, 3, 3});
    ident.mutable_data()[4] = 1.0;  // center tap
    Var w = tape.leaf(ident);
    Var b = tape.leaf(Tensor::zeros(Shape{1}));
    Var y = ops::conv2d(x, w, b, 1, 1);
    CHECK(y.value().shape() == img.shape());
    CHECK(tu::max_abs_diff(y.value(), img) == 0.0);
}

TEST_CASE("op-level shape and data validation") {
    Tape tape;
    Var a = tape.leaf(Tensor::zeros(Shape{2, 2}));
    Var b = tape.leaf(Tensor::zeros(Shape{2, 3}));
    CHECK_THROWS_AS(ops::add(a, b), ShapeError);
    CHECK_THROWS_AS(ops::pick(a, 2, 0), ShapeError);

    Tape other;
    Var c = other.leaf(Tensor::zeros(Shape{2, 2}));
    CHECK_THROWS_AS(ops::add(a, c), DataError);

    Var img = tape.leaf(Tensor::zeros(Shape{1, 1, 5, 5}));
    Var w = tape.leaf(Tensor::zeros(Shape{1, 1, 2, 2}));
    Var bias = tape.leaf(Tensor::zeros(Shape{1}));
    CHECK_THROWS_WITH_AS(ops::conv2d(img, w, bias, 2, 0), doctest::Contains("non-exact"),
                         ShapeError);
    Var w3 = tape.leaf(Tensor::zeros(Shape{1, 3, 3, 3}));
    CHECK_THROWS_AS(ops::conv2d(img, w3, bias, 1, 1), ShapeError);

    CHECK_THROWS_AS(ops::maxpool2d(img, 2, 1), ShapeError);   // overlapping
    CHECK_THROWS_AS(ops::maxpool2d(img, 2, 2), ShapeError);   // 5 not divisible
    CHECK_THROWS_AS(ops::adaptive_avg_pool2d(img, 7, 7), ShapeError);

    Var row = tape.leaf(Tensor::zeros(Shape{1, 4}));
    Var wfc = tape.leaf(Tensor::zeros(Shape{2, 5}));
    Var bfc = tape.leaf(Tensor::zeros(Shape{2}));
    CHECK_THROWS_AS(ops::linear(row, wfc, bfc), ShapeError);

    Var multi = tape.leaf(Tensor::zeros(Shape{3, 4, 4}));
    CHECK_THROWS_AS(ops::channel_duplicate(multi), ShapeError);

    Var lp = tape.leaf(Tensor::from(Shape{1, 2}, {std::log(0.5), std::log(0.5)}));
    CHECK_THROWS_AS(ops::nll_loss(lp, {2}, Tensor::from(Shape{2}, {1.0, 1.0})), DataError);
    CHECK_THROWS_AS(ops::nll_loss(lp, {0}, Tensor::from(Shape{2}, {0.0, 1.0})), DataError);
    CHECK_THROWS_AS(ops::nll_loss(lp, {0, 1}, Tensor::from(Shape{2}, {1.0, 1.0})), ShapeError);

    const double nan = std::nan("");
    CHECK_THROWS_AS(tape.leaf(Tensor::from(Shape{1}, {nan})), NumericError);
}

TEST_CASE("backward basics: scale, sub, pick, sum, channel_duplicate") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(5.0).set_requires_grad(true));
    Var y = ops::scale(x, 3.0);
    GradMap g = backward(tape, y);
    CHECK(g.at(x.id).value() == 3.0);

    Tape t2;
    Var a = t2.leaf(Tensor::from(Shape{2}, {1.0, 2.0}).set_requires_grad(true));
    Var b = t2.leaf(Tensor::from(Shape{2}, {3.0, 4.0}).set_requires_grad(true));
    Var d = ops::sum_all(ops::sub(a, b));
    GradMap g2 = backward(t2, d);
    CHECK(g2.at(a.id)[0] == 1.0);
    CHECK(g2.at(b.id)[0] == -1.0);
    CHECK(g2.at(b.id)[1] == -1.0);

    Tape t3;
    Var m = t3.leaf(Tensor::from(Shape{2, 2}, {1, 2, 3, 4}).set_requires_grad(true));
    Var p = ops::pick(m, 1, 0);
    CHECK(p.value().value() == 3.0);
    GradMap g3 = backward(t3, p);
    CHECK(g3.at(m.id).at2(1, 0) == 1.0);
    CHECK(g3.at(m.id).at2(0, 0) == 0.0);
    CHECK(g3.at(m.id).at2(1, 1) == 0.0);

    Tape t4;
    Var gray = t4.leaf(tu::random_tensor(Shape{1, 1, 2, 2}, 9).set_requires_grad(true));
    Var rgb = ops::channel_duplicate(gray);
    CHECK(rgb.value().shape() == Shape{1, 3, 2, 2});
    Var s = ops::sum_all(rgb);
    GradMap g4 = backward(t4, s);
    for (int64_t i = 0; i < 4; ++i) CHECK(g4.at(gray.id)[i] == 3.0);
}

TEST_CASE("backward seed rules") {
    Tape tape;
    Var x = tape.leaf(Tensor::from(Shape{1, 2}, {1.0, 2.0}).set_requires_grad(true));
    Var y = ops::scale(x, 2.0);
    CHECK_THROWS_AS(backward(tape, y), ShapeError);  // non-scalar, no seed

    Tensor bad_seed(Shape{2, 1}, {1.0, 0.0});
    CHECK_THROWS_AS(backward(tape, y, BackwardMode::standard_mode(), &bad_seed), ShapeError);

    Tensor seed(Shape{1, 2}, {1.0, 0.0});
    GradMap g = backward(tape, y, BackwardMode::standard_mode(), &seed);
    CHECK(g.at(x.id).at2(0, 0) == 2.0);
    CHECK(g.at(x.id).at2(0, 1) == 0.0);

    Tape other;
    Var z = other.leaf(Tensor::scalar(1.0));
    CHECK_THROWS_AS(backward(tape, z), DataError);
}

TEST_CASE("gradients without requires_grad are dropped, grad_or_zeros fills in") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0));  // not marked
    Var y = ops::scale(x, 4.0);
    GradMap g = backward(tape, y);
    CHECK(g.find(x.id) == g.end());
    Tensor z = grad_or_zeros(g, x);
    CHECK(z.shape() == Shape{1});
    CHECK(z[0] == 0.0);
}

TEST_CASE("finite differences confirm the composed-network gradients") {
    SmallNetParams params;
    const Tensor input = tu::random_tensor(Shape{1, 1, 6, 6}, 201, -1.0, 1.0, 0.05);

    Tape tape;
    SmallNetVars v = build_small_net(tape, params, input);
    Var lp = ops::log_softmax(v.logits);
    Var loss = ops::nll_loss(lp, {0}, Tensor::from(Shape{2}, {1.0, 1.0}));
    GradMap grads = backward(tape, loss);

    SUBCASE("input gradient") {
        Tensor numeric = tu::numeric_grad(
            [&](const Tensor& t) { return small_net_loss(params, t); }, input);
        CHECK(tu::max_rel_err(grads.at(v.input.id), numeric) < 1e-6);
    }
    SUBCASE("first conv weight and bias gradients") {
        SmallNetParams p2 = params;
        Tensor nw = tu::numeric_grad(
            [&](const Tensor& t) {
                p2.w1 = t;
                return small_net_loss(p2, input);
            },
            params.w1);
        CHECK(tu::max_rel_err(grads.at(v.w1.id), nw) < 1e-6);
        Tensor nb = tu::numeric_grad(
            [&](const Tensor& t) {
                p2 = params;
                p2.b1 = t;
                return small_net_loss(p2, input);
            },
            params.b1);
        CHECK(tu::max_rel_err(grads.at(v.b1.id), nb) < 1e-6);
    }
    SUBCASE("classifier weight and bias gradients") {
        SmallNetParams p2 = params;
        Tensor nw = tu::numeric_grad(
            [&](const Tensor& t) {
                p2.w3 = t;
                return small_net_loss(p2, input);
            },
            params.w3);
        CHECK(tu::max_rel_err(grads.at(v.w3.id), nw) < 1e-6);
        Tensor nb = tu::numeric_grad(
            [&](const Tensor& t) {
                p2 = params;
                p2.b3 = t;
                return small_net_loss(p2, input);
            },
            params.b3);
        CHECK(tu::max_rel_err(grads.at(v.b3.id), nb) < 1e-6);
    }
}

TEST_CASE("finite differences confirm elementwise op gradients") {
    const Tensor a0 = tu::random_tensor(Shape{2, 3}, 301, -1.0, 1.0, 0.05);
    const Tensor b0 = tu::random_tensor(Shape{2, 3}, 302, -1.0, 1.0, 0.05);

    auto f = [&](const Tensor& at, const Tensor& bt) {
        Tape tape;
        Var a = tape.leaf(at);
        Var b = tape.leaf(bt);
        Var y = ops::sum_all(ops::mul(ops::add(a, b), ops::sub(a, b)));
        return y.value().value();
    };

    Tape tape;
    Var a = tape.leaf(Tensor(a0).set_requires_grad(true));
    Var b = tape.leaf(Tensor(b0).set_requires_grad(true));
    Var y = ops::sum_all(ops::mul(ops::add(a, b), ops::sub(a, b)));
    GradMap g = backward(tape, y);

    Tensor na = tu::numeric_grad([&](const Tensor& t) { return f(t, b0); }, a0);
    Tensor nb = tu::numeric_grad([&](const Tensor& t) { return f(a0, t); }, b0);
    CHECK(tu::max_rel_err(g.at(a.id), na) < 1e-7);
    CHECK(tu::max_rel_err(g.at(b.id), nb) < 1e-7);
}

TEST_CASE("standard backward is linear in the seed") {
    SmallNetParams params;
    const Tensor input = tu::random_tensor(Shape{1, 1, 6, 6}, 401, -1.0, 1.0, 0.05);
    Tape tape;
    SmallNetVars v = build_small_net(tape, params, input);

    const Tensor s1(Shape{1, 2}, {1.0, 0.0});
    const Tensor s2(Shape{1, 2}, {0.0, 1.0});
    const Tensor s12(Shape{1, 2}, {1.0, 1.0});
    GradMap g1 = backward(tape, v.logits, BackwardMode::standard_mode(), &s1);
    GradMap g2 = backward(tape, v.logits, BackwardMode::standard_mode(), &s2);
    GradMap g12 = backward(tape, v.logits, BackwardMode::standard_mode(), &s12);

    const Tensor& x1 = g1.at(v.input.id);
    const Tensor& x2 = g2.at(v.input.id);
    const Tensor& x12 = g12.at(v.input.id);
    for (int64_t i = 0; i < x12.numel(); ++i)
        CHECK(std::fabs(x12[i] - (x1[i] + x2[i])) <= 1e-10);
}

TEST_CASE("guided backward zeroes negative upstream contributions at relu") {
    // h = relu(x), y = w . h with one negative weight on an active unit
    Tape tape;
    Var x = tape.leaf(
        Tensor::from(Shape{1, 4}, {2.0, -3.0, 1.0, -0.5}).set_requires_grad(true));
    Var h = ops::relu(x);
    Var w = tape.leaf(Tensor::from(Shape{1, 4}, {-1.0, -2.0, 3.0, 4.0}));
    Var b = tape.leaf(Tensor::zeros(Shape{1}));
    Var y = ops::linear(h, w, b);

    GradMap gs = backward(tape, y);
    const Tensor& sx = gs.at(x.id);
    CHECK(sx[0] == -1.0);  // active unit, negative weight passes in standard mode
    CHECK(sx[1] == 0.0);
    CHECK(sx[2] == 3.0);
    CHECK(sx[3] == 0.0);

    GradMap gg = backward(tape, y, BackwardMode::guided_mode());
    const Tensor& gx = gg.at(x.id);
    CHECK(gx[0] == 0.0);  // guided drops the negative contribution
    CHECK(gx[1] == 0.0);
    CHECK(gx[2] == 3.0);
    CHECK(gx[3] == 0.0);
}

TEST_CASE("guided equals standard when activations and upstream gradients are positive") {
    Tape tape;
    Var x = tape.leaf(Tensor::from(Shape{1, 3}, {1.0, 2.0, 3.0}).set_requires_grad(true));
    Var h = ops::relu(x);
    Var w = tape.leaf(Tensor::from(Shape{1, 3}, {0.5, 1.5, 2.5}));
    Var b = tape.leaf(Tensor::zeros(Shape{1}));
    Var y = ops::linear(h, w, b);
    GradMap gs = backward(tape, y);
    GradMap gg = backward(tape, y, BackwardMode::guided_mode());
    CHECK(gs.at(x.id).bitwise_equal(gg.at(x.id)));
}

namespace {

// Actual and reference tapes for the same op sequence; returns the rescale
// multipliers at the input together with both forward outputs.
struct RescaleRun {
    Tensor multipliers;
    double f_actual = 0.0;
    double f_reference = 0.0;
};

template <typename BuildFn>
RescaleRun rescale_run(const Tensor& input, const Tensor& reference, BuildFn build) {
    Tape actual, ref;
    Tensor in_marked = input;
    in_marked.set_requires_grad(true);
    Var xa = actual.leaf(in_marked);
    Var xr = ref.leaf(reference);
    Var ya = build(actual, xa);
    Var yr = build(ref, xr);
    GradMap g = backward(actual, ya, BackwardMode::rescale_mode(ref));
    RescaleRun out;
    out.multipliers = g.at(xa.id);
    out.f_actual = ya.value().value();
    out.f_reference = yr.value().value();
    return out;
}

double summation_gap(const RescaleRun& run, const Tensor& input, const Tensor& reference) {
    double acc = 0.0;
    for (int64_t i = 0; i < input.numel(); ++i)
        acc += run.multipliers[i] * (input[i] - reference[i]);
    const double delta = run.f_actual - run.f_reference;
    return std::fabs(acc - delta) / std::max(std::fabs(delta), 1e-12);
}

}  // namespace

TEST_CASE("rescale relu multiplier is the secant slope") {
    // relu between x=3 and reference -1: (3 - 0) / (3 - (-1)) = 0.75
    auto build = [](Tape&, Var x) { return ops::sum_all(ops::relu(x)); };
    RescaleRun run = rescale_run(Tensor::scalar(3.0), Tensor::scalar(-1.0), build);
    CHECK(run.multipliers.value() == doctest::Approx(0.75).epsilon(1e-15));

    // vanishing input difference falls back to the ordinary gradient
    RescaleRun tiny = rescale_run(Tensor::scalar(1e-9), Tensor::scalar(0.0), build);
    CHECK(tiny.multipliers.value() == 1.0);
}

TEST_CASE("rescale multipliers sum to the output delta across architectures") {
    SUBCASE("conv, relu, maxpool, linear") {
        SmallNetParams params;
        for (uint64_t seed : {501u, 502u, 503u}) {
            const Tensor x = tu::random_tensor(Shape{1, 1, 6, 6}, seed);
            const Tensor r = tu::random_tensor(Shape{1, 1, 6, 6}, seed + 50);
            auto build = [&](Tape& t, Var in) {
                SmallNetParams p = params;
                Var w1 = t.leaf(p.w1), b1 = t.leaf(p.b1);
                Var w2 = t.leaf(p.w2), b2 = t.leaf(p.b2);
                Var w3 = t.leaf(p.w3), b3 = t.leaf(p.b3);
                Var h = ops::conv2d(in, w1, b1, 1, 1);
                h = ops::relu(h);
                h = ops::maxpool2d(h, 2, 2);
                h = ops::conv2d(h, w2, b2, 1, 1);
                h = ops::relu(h);
                h = ops::adaptive_avg_pool2d(h, 2, 2);
                h = ops::reshape(h, Shape{1, 8});
                Var logits = ops::linear(h, w3, b3);
                return ops::pick(logits, 0, 0);
            };
            RescaleRun run = rescale_run(x, r, build);
            CHECK(summation_gap(run, x, r) <= 1e-6);
        }
    }
    SUBCASE("zero reference") {
        SmallNetParams params;
        const Tensor x = tu::random_tensor(Shape{1, 1, 6, 6}, 601);
        const Tensor r = Tensor::zeros(Shape{1, 1, 6, 6});
        auto build = [&](Tape& t, Var in) {
            Var w1 = t.leaf(params.w1), b1 = t.leaf(params.b1);
            Var h = ops::conv2d(in, w1, b1, 1, 1);
            h = ops::relu(h);
            h = ops::maxpool2d(h, 2, 2);
            h = ops::reshape(h, Shape{1, 18});
            Var w = t.leaf(tu::random_tensor(Shape{1, 18}, 602));
            Var b = t.leaf(Tensor::zeros(Shape{1}));
            return ops::pick(ops::linear(h, w, b), 0, 0);
        };
        RescaleRun run = rescale_run(x, r, build);
        CHECK(summation_gap(run, x, r) <= 1e-6);
    }
    SUBCASE("channel duplication and elementwise arithmetic") {
        const Tensor x = tu::random_tensor(Shape{1, 1, 4, 4}, 603);
        const Tensor r = tu::random_tensor(Shape{1, 1, 4, 4}, 604);
        auto build = [&](Tape& t, Var in) {
            Var rgb = ops::channel_duplicate(in);
            Var c = t.leaf(tu::random_tensor(Shape{1, 3, 4, 4}, 605));
            Var y = ops::mul(rgb, c);  // constant factor keeps the product linear
            y = ops::relu(y);
            return ops::sum_all(ops::scale(y, 2.0));
        };
        RescaleRun run = rescale_run(x, r, build);
        CHECK(summation_gap(run, x, r) <= 1e-6);
    }
}

TEST_CASE("rescale maxpool splits the window delta between both argmax positions") {
    // actual window (1,5,2,3): max 5 at index 1; reference (4,1,1,1): max 4
    // at index 0. The multipliers must reproduce the output delta exactly.
    const Tensor x(Shape{1, 1, 2, 2}, {1, 5, 2, 3});
    const Tensor r(Shape{1, 1, 2, 2}, {4, 1, 1, 1});
    auto build = [](Tape&, Var in) { return ops::sum_all(ops::maxpool2d(in, 2, 2)); };
    RescaleRun run = rescale_run(x, r, build);
    CHECK(run.f_actual == 5.0);
    CHECK(run.f_reference == 4.0);
    CHECK(summation_gap(run, x, r) <= 1e-12);
}

TEST_CASE("rescale rejects unsupported structure") {
    // log_softmax has no multiplier rule
    {
        Tape actual, ref;
        Var xa = actual.leaf(Tensor::from(Shape{1, 2}, {1.0, 2.0}).set_requires_grad(true));
        Var xr = ref.leaf(Tensor::from(Shape{1, 2}, {0.0, 0.0}));
        Var ya = ops::pick(ops::log_softmax(xa), 0, 0);
        (void)ops::pick(ops::log_softmax(xr), 0, 0);
        CHECK_THROWS_AS(backward(actual, ya, BackwardMode::rescale_mode(ref)), DataError);
    }
    // product of two varying tensors
    {
        Tape actual, ref;
        Var xa = actual.leaf(Tensor::from(Shape{2}, {1.0, 2.0}).set_requires_grad(true));
        Var xr = ref.leaf(Tensor::from(Shape{2}, {0.5, 0.5}));
        Var ya = ops::sum_all(ops::mul(ops::relu(xa), ops::relu(xa)));
        (void)ops::sum_all(ops::mul(ops::relu(xr), ops::relu(xr)));
        CHECK_THROWS_AS(backward(actual, ya, BackwardMode::rescale_mode(ref)), DataError);
    }
    // structurally different reference
    {
        Tape actual, ref;
        Var xa = actual.leaf(Tensor::scalar(1.0).set_requires_grad(true));
        Var xr = ref.leaf(Tensor::scalar(0.0));
        Var ya = ops::sum_all(ops::relu(xa));
        (void)ops::sum_all(ops::scale(xr, 2.0));
        CHECK_THROWS_AS(backward(actual, ya, BackwardMode::rescale_mode(ref)), DataError);
    }
    // missing reference
    {
        Tape actual;
        Var xa = actual.leaf(Tensor::scalar(1.0).set_requires_grad(true));
        Var ya = ops::relu(xa);
        BackwardMode mode;
        mode.kind = BackwardMode::Kind::rescale;
        CHECK_THROWS_AS(backward(actual, ya, mode), DataError);
    }
}
