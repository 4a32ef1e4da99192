#include <cmath>
#include <cstdio>
#include <string>

#include "doctest.h"
#include "fdflare/imaging.hpp"
#include "fdflare/png_io.hpp"
#include "testutil.hpp"

using namespace fdflare;

TEST_CASE("bilinear resize") {
    SUBCASE("identity size returns the same samples") {
        Tensor img = testutil::random_tensor(Shape{1, 6, 7}, 11, 0.0, 255.0);
        Tensor same = imaging::resize_bilinear(img, 6, 7);
        CHECK(same.bitwise_equal(img));
    }
    SUBCASE("doubling a 1x2 row uses half-pixel centers") {
        Tensor img = Tensor::from(Shape{1, 1, 2}, {0.0, 2.0});
        Tensor up = imaging::resize_bilinear(img, 1, 4);
        REQUIRE(up.shape() == Shape{1, 1, 4});
        CHECK(up[0] == doctest::Approx(0.0));
        CHECK(up[1] == doctest::Approx(0.5));
        CHECK(up[2] == doctest::Approx(1.5));
        CHECK(up[3] == doctest::Approx(2.0));
    }
    SUBCASE("rank is preserved") {
        Tensor flat = testutil::random_tensor(Shape{3, 3}, 12);
        CHECK(imaging::resize_bilinear(flat, 5, 5).shape() == Shape{5, 5});
    }
    SUBCASE("downsampling a constant image stays constant") {
        Tensor img = Tensor::full(Shape{1, 8, 8}, 42.0);
        Tensor down = imaging::resize_bilinear(img, 3, 3);
        for (int64_t i = 0; i < down.numel(); ++i) CHECK(down[i] == doctest::Approx(42.0));
    }
}

TEST_CASE("flips") {
    Tensor img = Tensor::from(Shape{1, 2, 3}, {1, 2, 3, 4, 5, 6});
    SUBCASE("vflip mirrors rows") {
        Tensor expect = Tensor::from(Shape{1, 2, 3}, {4, 5, 6, 1, 2, 3});
        CHECK(imaging::vflip(img).bitwise_equal(expect));
    }
    SUBCASE("hflip mirrors columns") {
        Tensor expect = Tensor::from(Shape{1, 2, 3}, {3, 2, 1, 6, 5, 4});
        CHECK(imaging::hflip(img).bitwise_equal(expect));
    }
    SUBCASE("both flips are involutions") {
        Tensor rnd = testutil::random_tensor(Shape{1, 5, 4}, 13);
        CHECK(imaging::vflip(imaging::vflip(rnd)).bitwise_equal(rnd));
        CHECK(imaging::hflip(imaging::hflip(rnd)).bitwise_equal(rnd));
    }
}

TEST_CASE("rotation") {
    SUBCASE("zero degrees is the identity") {
        Tensor img = testutil::random_tensor(Shape{1, 9, 9}, 14, 0.0, 255.0);
        CHECK(testutil::max_abs_diff(imaging::rotate_bilinear(img, 0.0), img) == 0.0);
    }
    SUBCASE("a quarter turn moves the left-edge pixel to the bottom edge") {
        Tensor img = Tensor::zeros(Shape{1, 3, 3});
        img.mutable_data()[3] = 1.0;  // row 1, column 0
        Tensor turned = imaging::rotate_bilinear(img, 90.0);
        CHECK(turned[2 * 3 + 1] == doctest::Approx(1.0).epsilon(1e-9));
        double total = 0.0;
        for (int64_t i = 0; i < turned.numel(); ++i) total += turned[i];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("small rotation spills zero fill over the corners") {
        Tensor ones = Tensor::full(Shape{1, 8, 8}, 1.0);
        Tensor turned = imaging::rotate_bilinear(ones, 5.0);
        double total = 0.0;
        for (int64_t i = 0; i < turned.numel(); ++i) {
            CHECK(turned[i] >= 0.0);
            CHECK(turned[i] <= 1.0 + 1e-12);
            total += turned[i];
        }
        CHECK(total < 64.0);
        CHECK(total > 56.0);  // only the rim is affected at 5 degrees
    }
    SUBCASE("opposite rotations cancel in the interior") {
        // bilinear sampling reproduces a linear ramp exactly, so the only
        // error left in the interior is round-off
        Tensor img(Shape{1, 16, 16});
        for (int64_t y = 0; y < 16; ++y)
            for (int64_t x = 0; x < 16; ++x)
                img.mutable_data()[y * 16 + x] =
                    1.0 + 0.3 * static_cast<double>(y) + 0.5 * static_cast<double>(x);
        Tensor back = imaging::rotate_bilinear(imaging::rotate_bilinear(img, 4.0), -4.0);
        double worst = 0.0;
        for (int64_t y = 4; y < 12; ++y)
            for (int64_t x = 4; x < 12; ++x)
                worst = std::max(worst, std::fabs(back[y * 16 + x] - img[y * 16 + x]));
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("gray normalization") {
    Tensor img = Tensor::from(Shape{1, 1, 3}, {0.0, 127.5, 255.0});
    Tensor norm = imaging::normalize_gray8(img);
    CHECK(norm[0] == doctest::Approx(-1.0));
    CHECK(norm[1] == doctest::Approx(0.0));
    CHECK(norm[2] == doctest::Approx(1.0));
    Tensor back = imaging::denormalize_gray8(norm);
    CHECK(testutil::max_abs_diff(back, img) < 1e-12);
}

TEST_CASE("percentile clipping threshold") {
    SUBCASE("three values use the largest magnitude") {
        CHECK(imaging::percentile99_abs(Tensor::from(Shape{3}, {3.0, -7.0, 1.0})) == 7.0);
    }
    SUBCASE("hundred values pick the 99th") {
        Tensor t(Shape{100});
        for (int64_t i = 0; i < 100; ++i) t.mutable_data()[i] = static_cast<double>(i + 1);
        CHECK(imaging::percentile99_abs(t) == 99.0);
    }
}

TEST_CASE("overlay rendering") {
    Tensor bg = Tensor::full(Shape{1, 2, 2}, 100.0);
    SUBCASE("zero map blends the background with white") {
        Tensor out = imaging::render_overlay(bg, Tensor::zeros(Shape{2, 2}));
        REQUIRE(out.shape() == Shape{3, 2, 2});
        for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 177.5);
    }
    SUBCASE("positive extreme is pure red over the background") {
        Tensor map = Tensor::from(Shape{2, 2}, {4.0, 0.0, 0.0, -4.0});
        Tensor out = imaging::render_overlay(bg, map);
        CHECK(out[0] == 177.5);            // red channel at the positive extreme
        CHECK(out[4] == 50.0);             // green drops to the background half
        CHECK(out[8] == 50.0);             // blue likewise
        CHECK(out[0 + 3] == 50.0);         // red at the negative extreme
        CHECK(out[4 + 3] == 50.0);
        CHECK(out[8 + 3] == 177.5);        // blue at the negative extreme
    }
    SUBCASE("an outlier is clipped at the 99th percentile") {
        Tensor wide_bg = Tensor::full(Shape{1, 10, 10}, 100.0);
        Tensor map(Shape{10, 10});
        for (int64_t i = 0; i < 100; ++i) map.mutable_data()[i] = 0.01;
        map.mutable_data()[0] = 1000.0;
        map.mutable_data()[1] = 0.02;
        // k = 99 of sorted magnitudes -> 0.02; the outlier saturates at t = 1
        Tensor out = imaging::render_overlay(wide_bg, map);
        CHECK(out[0] == 177.5);
        CHECK(out[100] == 50.0);  // green channel under the outlier
        CHECK(out[1] == 177.5);       // 0.02 also reaches t = 1 against the clip value
        CHECK(out[100 + 2] == 113.75);  // 0.01 sits at t = 0.5: green is half lit
    }
    SUBCASE("rendering is deterministic") {
        Tensor map = testutil::random_tensor(Shape{2, 2}, 16);
        CHECK(imaging::render_overlay(bg, map).bitwise_equal(imaging::render_overlay(bg, map)));
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(imaging::render_overlay(bg, Tensor::zeros(Shape{3, 3})), ShapeError);
    }
}

namespace {

std::string temp_png(const char* name) { return std::string("fdflare_test_") + name; }

}  // namespace

TEST_CASE("png gray round trip") {
    const std::string path = temp_png("gray.png");
    Tensor img(Shape{1, 5, 7});
    for (int64_t i = 0; i < img.numel(); ++i)
        img.mutable_data()[i] = static_cast<double>((i * 37) % 256);
    pngio::write_gray(path, img);
    Tensor back = pngio::read_gray(path);
    REQUIRE(back.shape() == img.shape());
    CHECK(testutil::max_abs_diff(back, img) == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("png value rounding and clamping") {
    const std::string path = temp_png("clamp.png");
    Tensor img = Tensor::from(Shape{1, 1, 4}, {-5.0, 100.4, 100.6, 300.0});
    pngio::write_gray(path, img);
    Tensor back = pngio::read_gray(path);
    CHECK(back[0] == 0.0);
    CHECK(back[1] == 100.0);
    CHECK(back[2] == 101.0);
    CHECK(back[3] == 255.0);
    std::remove(path.c_str());
}

TEST_CASE("png rgb collapses through integer luma") {
    const std::string path = temp_png("rgb.png");
    // rows of constant color: gray 80, pure red, pure green, pure blue
    Tensor rgb = Tensor::zeros(Shape{3, 4, 2});
    double* p = rgb.mutable_data();
    for (int64_t x = 0; x < 2; ++x) {
        p[0 * 8 + 0 * 2 + x] = 80.0;   // gray row: all channels
        p[1 * 8 + 0 * 2 + x] = 80.0;
        p[2 * 8 + 0 * 2 + x] = 80.0;
        p[0 * 8 + 1 * 2 + x] = 255.0;  // red row
        p[1 * 8 + 2 * 2 + x] = 255.0;  // green row
        p[2 * 8 + 3 * 2 + x] = 255.0;  // blue row
    }
    pngio::write_rgb(path, rgb);
    Tensor gray = pngio::read_gray(path);
    REQUIRE(gray.shape() == Shape{1, 4, 2});
    CHECK(gray[0] == 80.0);   // (299+587+114)*80/1000 rounds back to 80
    CHECK(gray[2] == 76.0);   // (299*255 + 500) / 1000
    CHECK(gray[4] == 150.0);  // (587*255 + 500) / 1000
    CHECK(gray[6] == 29.0);   // (114*255 + 500) / 1000
    std::remove(path.c_str());
}

TEST_CASE("png io error reporting") {
    CHECK_THROWS_AS(pngio::read_gray("no/such/image.png"), DataError);
    CHECK_THROWS_AS(pngio::write_gray("no/such/dir/image.png", Tensor::zeros(Shape{1, 2, 2})),
                    DataError);
    CHECK_THROWS_AS(pngio::write_gray("x.png", Tensor::zeros(Shape{2, 2, 2})), ShapeError);
    CHECK_THROWS_AS(pngio::write_rgb("x.png", Tensor::zeros(Shape{1, 2, 2})), ShapeError);
}
