#include <doctest.h>

#include <cmath>

#include "csformer/ops.hpp"
#include "test_support.hpp"

using namespace csf;
using testsup::max_abs_diff;
using testsup::random_tensor;

TEST_CASE("conv2d matches the paper sampling shape") {
    Rng rng(7);
    Tensor x = random_tensor(rng, {64, 64, 1});
    Tensor w = random_tensor(rng, {64, 16, 16, 1});
    Tensor y = ops::conv2d(x, w, 16, 0);
    CHECK(y.shape() == Dims{4, 4, 64});
}

TEST_CASE("conv2d with a 1x1 identity kernel is the identity") {
    Rng rng(8);
    Tensor x = random_tensor(rng, {5, 7, 1});
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0});
    Tensor y = ops::conv2d(x, w, 1, 0);
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d reproduces the four-term hand sums") {
    Tensor x = Tensor::from_data({3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w = Tensor::from_data({1, 2, 2, 1}, {1, 1, 1, 1});
    Tensor y = ops::conv2d(x, w, 1, 0);
    REQUIRE(y.shape() == Dims{2, 2, 1});
    CHECK(y.at(0) == 12.0);
    CHECK(y.at(1) == 16.0);
    CHECK(y.at(2) == 24.0);
    CHECK(y.at(3) == 28.0);
}

TEST_CASE("conv2d equals the direct cross-correlation oracle") {
    Rng rng(9);
    struct Case {
        int h, w, ci, co, k, stride, pad;
    };
    const Case cases[] = {
        {8, 8, 3, 5, 3, 1, 1}, {16, 16, 1, 4, 16, 16, 0}, {9, 11, 2, 3, 3, 2, 1}, {6, 6, 4, 8, 1, 1, 0},
    };
    for (const Case& c : cases) {
        Tensor x = random_tensor(rng, {c.h, c.w, c.ci});
        Tensor w = random_tensor(rng, {c.co, c.k, c.k, c.ci});
        Tensor b = random_tensor(rng, {c.co});
        Tensor y = ops::conv2d(x, w, c.stride, c.pad, b);
        auto bias = std::vector<double>(b.values().begin(), b.values().end());
        auto ref = testsup::naive_conv2d(x.values(), c.h, c.w, c.ci, w.values(), c.co, c.k, c.k, c.stride, c.pad, bias);
        CHECK(max_abs_diff(y.values(), ref) < 1e-10);
    }
}

TEST_CASE("conv2d on a batch equals per-sample convs") {
    Rng rng(10);
    Tensor x = random_tensor(rng, {3, 8, 8, 2});
    Tensor w = random_tensor(rng, {4, 3, 3, 2});
    Tensor y = ops::conv2d(x, w, 1, 1);
    REQUIRE(y.shape() == Dims{3, 8, 8, 4});
    for (int n = 0; n < 3; ++n) {
        std::vector<double> sample(x.values().begin() + n * 128, x.values().begin() + (n + 1) * 128);
        Tensor xs = Tensor::from_data({8, 8, 2}, sample);
        Tensor ys = ops::conv2d(xs, w, 1, 1);
        CHECK(max_abs_diff(std::span<const double>(y.values().data() + n * 256, 256), ys.values()) == 0.0);
    }
}

TEST_CASE("conv2d rejects a channel mismatch") {
    Rng rng(11);
    Tensor x = random_tensor(rng, {8, 8, 3});
    Tensor w = random_tensor(rng, {4, 3, 3, 2});
    CHECK_THROWS_AS(ops::conv2d(x, w, 1, 1), DimensionError);
}

TEST_CASE("pixel_shuffle shape laws and index formula") {
    Rng rng(12);
    Tensor big = random_tensor(rng, {4, 4, 256});
    CHECK(ops::pixel_shuffle(big, 16).shape() == Dims{64, 64, 1});

    Tensor same = random_tensor(rng, {3, 5, 7});
    CHECK(max_abs_diff(ops::pixel_shuffle(same, 1), same) == 0.0);

    Tensor tiny = Tensor::from_data({1, 1, 4}, {0, 1, 2, 3});
    Tensor ps = ops::pixel_shuffle(tiny, 2);
    REQUIRE(ps.shape() == Dims{2, 2, 1});
    CHECK(ps.at(0) == 0.0);
    CHECK(ps.at(1) == 1.0);
    CHECK(ps.at(2) == 2.0);
    CHECK(ps.at(3) == 3.0);

    CHECK_THROWS_AS(ops::pixel_shuffle(random_tensor(rng, {2, 2, 6}), 2), DimensionError);
}

TEST_CASE("pixel_shuffle then pixel_unshuffle is the identity") {
    Rng rng(13);
    const int rs[] = {1, 2, 3, 4};
    for (int r : rs) {
        Tensor x = random_tensor(rng, {3, 5, 2 * r * r});
        Tensor y = ops::pixel_unshuffle(ops::pixel_shuffle(x, r), r);
        CHECK(max_abs_diff(x, y) == 0.0);
        Tensor batched = random_tensor(rng, {2, 4, 4, 3 * r * r});
        CHECK(max_abs_diff(batched, ops::pixel_unshuffle(ops::pixel_shuffle(batched, r), r)) == 0.0);
    }
}

TEST_CASE("bicubic upsample preserves constants and shapes") {
    Tensor c = Tensor::full({5, 4, 3}, 0.37);
    Tensor up = ops::bicubic_upsample(c, 2);
    REQUIRE(up.shape() == Dims{10, 8, 3});
    for (double v : up.values()) CHECK(std::abs(v - 0.37) < 1e-12);

    Rng rng(14);
    CHECK(ops::bicubic_upsample(random_tensor(rng, {8, 8, 128}), 2).shape() == Dims{16, 16, 128});
}

TEST_CASE("bicubic upsample matches the scalar kernel reference") {
    std::vector<double> ramp = {0.0, 1.0, 2.0, 3.0};
    Tensor col = Tensor::from_data({4, 1, 1}, ramp);
    Tensor up = ops::bicubic_upsample(col, 2);
    REQUIRE(up.shape() == Dims{8, 2, 1});
    auto ref = testsup::bicubic_1d_ref(ramp, 2);
    // the width-1 strip is constant along x, so both output columns carry
    // the 1-D result
    for (int r = 0; r < 8; ++r) {
        CHECK(std::abs(up.at(r * 2) - ref[static_cast<std::size_t>(r)]) < 1e-12);
        CHECK(std::abs(up.at(r * 2 + 1) - ref[static_cast<std::size_t>(r)]) < 1e-12);
    }

    // 2-D: separable reference applied rows-then-columns
    Rng rng(15);
    Tensor x = random_tensor(rng, {5, 6, 1});
    Tensor y = ops::bicubic_upsample(x, 3);
    std::vector<std::vector<double>> cols_up(6);
    for (int cx = 0; cx < 6; ++cx) {
        std::vector<double> col_v(5);
        for (int r = 0; r < 5; ++r) col_v[r] = x.at(r * 6 + cx);
        cols_up[cx] = testsup::bicubic_1d_ref(col_v, 3);
    }
    for (int r = 0; r < 15; ++r) {
        std::vector<double> row(6);
        for (int cx = 0; cx < 6; ++cx) row[cx] = cols_up[cx][r];
        auto row_up = testsup::bicubic_1d_ref(row, 3);
        for (int cx = 0; cx < 18; ++cx) CHECK(std::abs(y.at(r * 18 + cx) - row_up[cx]) < 1e-12);
    }
}

TEST_CASE("layer_norm keeps an already-normalized input") {
    // rows with mean 0 and biased variance 1 - eps, so var + eps == 1 and
    // the normalization is numerically the identity
    const double a = std::sqrt(1.0 - 1e-5);
    std::vector<double> data;
    for (int r = 0; r < 6; ++r) {
        data.push_back(-a);
        data.push_back(a);
    }
    Tensor x = Tensor::from_data({6, 2}, data);
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    Tensor y = ops::layer_norm(x, gamma, beta);
    CHECK(max_abs_diff(x, y) < 1e-9);
}

TEST_CASE("layer_norm zeroes group means and hits the two-channel case") {
    Rng rng(16);
    Tensor x = random_tensor(rng, {7, 13});
    Tensor gamma = Tensor::full({13}, 1.0);
    Tensor beta = Tensor::zeros({13});
    Tensor y = ops::layer_norm(x, gamma, beta);
    for (int r = 0; r < 7; ++r) {
        double mean = 0.0;
        for (int c = 0; c < 13; ++c) mean += y.at(r * 13 + c);
        CHECK(std::abs(mean / 13.0) < 1e-9);
    }

    Tensor tok = Tensor::from_data({1, 2}, {1.0, 3.0});
    Tensor y2 = ops::layer_norm(tok, Tensor::full({2}, 1.0), Tensor::zeros({2}));
    CHECK(y2.at(0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y2.at(1) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("batch_norm training statistics and eval determinism") {
    Rng rng(17);
    Tensor x = random_tensor(rng, {2, 4, 4, 3}, -2.0, 5.0);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    ops::BatchNormState state;
    state.init(3);

    Tensor y = ops::batch_norm(x, gamma, beta, state, Mode::kTrain);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (int r = 0; r < 32; ++r) mean += y.at(r * 3 + c);
        CHECK(std::abs(mean / 32.0) < 1e-9);
    }
    // running stats moved toward the batch statistics
    CHECK(state.running_mean[0] != 0.0);

    // eval uses the stored statistics: zero input maps to -rm/sqrt(rv+eps)
    Tensor zero = Tensor::zeros({2, 4, 4, 3});
    Tensor ye = ops::batch_norm(zero, gamma, beta, state, Mode::kEval);
    for (int c = 0; c < 3; ++c) {
        const double expect = -state.running_mean[c] / std::sqrt(state.running_var[c] + 1e-5);
        CHECK(ye.at(c) == doctest::Approx(expect).epsilon(1e-12));
    }

    // variance exactly zero is handled by epsilon
    Tensor flat = Tensor::full({1, 2, 2, 1}, 3.0);
    ops::BatchNormState s2;
    s2.init(1);
    Tensor yf = ops::batch_norm(flat, Tensor::full({1}, 1.0), Tensor::zeros({1}), s2, Mode::kTrain);
    for (double v : yf.values()) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("activation point values") {
    Tensor z = Tensor::zeros({3});
    CHECK(ops::tanh(z).at(0) == 0.0);
    CHECK(ops::gelu(z).at(0) == 0.0);
    Tensor neg = Tensor::from_data({1}, {-1.0});
    CHECK(ops::leaky_relu(neg, 0.2).at(0) == doctest::Approx(-0.2).epsilon(1e-15));

    Tensor flat = Tensor::full({6}, 1.7);
    Tensor sm = ops::softmax(flat, 0);
    for (double v : sm.values()) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one on every axis layout") {
    Rng rng(18);
    Tensor x = random_tensor(rng, {3, 4, 5}, -30.0, 30.0);
    for (int axis = 0; axis < 3; ++axis) {
        Tensor y = ops::softmax(x, axis);
        const int n = x.dim(axis);
        std::size_t inner = 1;
        for (int i = axis + 1; i < 3; ++i) inner *= static_cast<std::size_t>(x.dim(i));
        const std::size_t outer = static_cast<std::size_t>(x.numel()) / (n * inner);
        for (std::size_t a = 0; a < outer; ++a)
            for (std::size_t b = 0; b < inner; ++b) {
                double s = 0.0;
                for (int i = 0; i < n; ++i) s += y.at(a * n * inner + i * inner + b);
                CHECK(std::abs(s - 1.0) < 1e-12);
            }
    }
}

TEST_CASE("matmul identities and hand-computed product") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(max_abs_diff(ops::matmul(eye, a), a) == 0.0);

    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = ops::matmul(a, b);
    CHECK(c.at(0) == 19.0);
    CHECK(c.at(1) == 22.0);
    CHECK(c.at(2) == 43.0);
    CHECK(c.at(3) == 50.0);

    Rng rng(19);
    Tensor ba = random_tensor(rng, {4, 8, 8});
    Tensor bb = random_tensor(rng, {4, 8, 8});
    CHECK(ops::matmul(ba, bb).shape() == Dims{4, 8, 8});

    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), DimensionError);
}

TEST_CASE("matmul batched values agree with per-slice products") {
    Rng rng(20);
    Tensor a = random_tensor(rng, {3, 4, 6});
    Tensor b = random_tensor(rng, {3, 6, 5});
    Tensor c = ops::matmul(a, b);
    for (int i = 0; i < 3; ++i) {
        Tensor ai = Tensor::from_data({4, 6}, std::vector<double>(a.values().begin() + i * 24, a.values().begin() + (i + 1) * 24));
        Tensor bi = Tensor::from_data({6, 5}, std::vector<double>(b.values().begin() + i * 30, b.values().begin() + (i + 1) * 30));
        Tensor ci = ops::matmul(ai, bi);
        CHECK(max_abs_diff(std::span<const double>(c.values().data() + i * 20, 20), ci.values()) < 1e-13);
    }
    // shared rank-2 right factor broadcasts over the batch
    Tensor w = random_tensor(rng, {6, 5});
    Tensor cw = ops::matmul(a, w);
    for (int i = 0; i < 3; ++i) {
        Tensor ai = Tensor::from_data({4, 6}, std::vector<double>(a.values().begin() + i * 24, a.values().begin() + (i + 1) * 24));
        CHECK(max_abs_diff(std::span<const double>(cw.values().data() + i * 20, 20), ops::matmul(ai, w).values()) < 1e-13);
    }
}

TEST_CASE("window partition produces tiles and merge inverts it") {
    Rng rng(21);
    // single window when H = W = P
    Tensor one = random_tensor(rng, {1, 64, 3});
    Tensor w1 = ops::window_partition(one, 8, 8, 8);
    CHECK(w1.shape() == Dims{1, 64, 3});
    CHECK(max_abs_diff(w1, one) == 0.0);

    // 64x64 with P=8 gives 64 windows
    Tensor big = random_tensor(rng, {1, 64 * 64, 2});
    CHECK(ops::window_partition(big, 64, 64, 8).dim(0) == 64);

    for (int trial = 0; trial < 4; ++trial) {
        const int p = 2 + static_cast<int>(rng.randint(0, 2));
        const int hy = p * static_cast<int>(rng.randint(1, 3));
        const int wx = p * static_cast<int>(rng.randint(1, 3));
        const int n = 1 + static_cast<int>(rng.randint(0, 2));
        Tensor x = random_tensor(rng, {n, hy * wx, 4});
        Tensor back = ops::window_merge(ops::window_partition(x, hy, wx, p), hy, wx, p);
        CHECK(max_abs_diff(x, back) == 0.0);
    }

    CHECK_THROWS_AS(ops::window_partition(random_tensor(rng, {1, 36, 2}), 6, 6, 4), DimensionError);
}

TEST_CASE("mosaic_patches tiles non-overlapping patches exactly") {
    Rng rng(22);
    Tensor patches = random_tensor(rng, {4, 2, 2, 1});
    std::vector<ops::PatchAnchor> anchors = {{0, 0, 0}, {0, 0, 2}, {0, 2, 0}, {0, 2, 2}};
    Tensor img = ops::mosaic_patches(patches, anchors, 1, 4, 4);
    CHECK(img.at(0 * 4 + 0) == patches.at(0));
    CHECK(img.at(0 * 4 + 2) == patches.at(4));
    CHECK(img.at(2 * 4 + 0) == patches.at(8));
    CHECK(img.at(2 * 4 + 3) == patches.at(13));

    std::vector<ops::PatchAnchor> overlapping = {{0, 0, 0}, {0, 0, 1}, {0, 2, 0}, {0, 2, 2}};
    CHECK_THROWS_AS(ops::mosaic_patches(patches, overlapping, 1, 4, 4), UsageError);
}

TEST_CASE("ops are deterministic given identical inputs") {
    Rng rng_a(23);
    Rng rng_b(23);
    Tensor xa = random_tensor(rng_a, {6, 6, 3});
    Tensor xb = random_tensor(rng_b, {6, 6, 3});
    CHECK(max_abs_diff(xa, xb) == 0.0);
    Tensor w = random_tensor(rng_a, {4, 3, 3, 3});
    Tensor y1 = ops::conv2d(xa, w, 1, 1);
    Tensor y2 = ops::conv2d(xa, w, 1, 1);
    CHECK(max_abs_diff(y1, y2) == 0.0);
}

TEST_CASE("non-finite results raise a numeric error") {
    Tensor big = Tensor::full({4}, 1e308);
    CHECK_THROWS_AS(ops::add(big, big), NumericError);
}
