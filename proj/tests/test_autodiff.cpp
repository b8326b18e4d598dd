#include <doctest.h>

#include <cmath>

#include "csformer/ops.hpp"
#include "test_support.hpp"

using namespace csf;
using testsup::max_abs_diff;
using testsup::random_tensor;

TEST_CASE("backward of a linear form gives the fixed factor") {
    Tensor w = Tensor::from_data({4}, {0.5, -1.0, 2.0, 3.0}, true);
    Tensor x = Tensor::from_data({4}, {1.0, 2.0, 3.0, 4.0});
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = ops::sum(ops::mul(w, x));
        tape.backward(loss);
    }
    CHECK(max_abs_diff(w.grad(), x.values()) == 0.0);
}

TEST_CASE("backward of sum of squares at w = 3 gives 6") {
    Tensor w = Tensor::from_data({1}, {3.0}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(ops::sum(ops::mul(w, w)));
    }
    CHECK(w.grad()[0] == 6.0);
}

TEST_CASE("a value used twice receives two contributions") {
    Tensor w = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(ops::sum(ops::add(w, w)));
    }
    for (double g : w.grad()) CHECK(g == 2.0);
}

TEST_CASE("parameters off the path stay at zero gradient") {
    Tensor used = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor unused = Tensor::from_data({2}, {5.0, 6.0}, true);
    used.zero_grad();
    unused.zero_grad();
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(ops::sum(used));
    }
    CHECK(unused.grad()[0] == 0.0);
    CHECK(unused.grad()[1] == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = ops::scale(w, 2.0);
    CHECK_THROWS_AS(tape.backward(y), UsageError);
}

TEST_CASE("grad_check on a linear map is exact to 1e-10") {
    Rng rng(31);
    Tensor w = random_tensor(rng, {5}, -1.0, 1.0, true);
    Tensor x = random_tensor(rng, {5});
    const double err = grad_check([&]() { return ops::sum(ops::mul(w, x)); }, {w}, 1e-5);
    CHECK(err < 1e-10);
}

namespace {

// Small scalar head so gradients flow through every output coordinate with
// distinct weights.
Tensor spread_sum(const Tensor& t, Rng& rng) {
    Tensor mask = testsup::random_tensor(rng, t.shape(), 0.5, 1.5);
    return ops::sum(ops::mul(t, mask));
}

}  // namespace

TEST_CASE("grad_check covers every primitive op") {
    Rng rng(32);

    SUBCASE("conv2d") {
        Tensor x = random_tensor(rng, {6, 5, 3}, -1.0, 1.0, true);
        Tensor w = random_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5, true);
        Tensor b = random_tensor(rng, {4}, -0.1, 0.1, true);
        Rng mask_rng(100);
        auto f = [&]() {
            Rng mr(100);
            return spread_sum(ops::conv2d(x, w, 2, 1, b), mr);
        };
        CHECK(grad_check(f, {x, w, b}, 1e-5) < 1e-4);
    }

    SUBCASE("matmul both layouts") {
        Tensor a = random_tensor(rng, {2, 3, 4}, -1.0, 1.0, true);
        Tensor b = random_tensor(rng, {2, 4, 5}, -1.0, 1.0, true);
        auto f1 = [&]() {
            Rng mr(101);
            return spread_sum(ops::matmul(a, b), mr);
        };
        CHECK(grad_check(f1, {a, b}, 1e-5) < 1e-4);

        Tensor w = random_tensor(rng, {4, 5}, -1.0, 1.0, true);
        auto f2 = [&]() {
            Rng mr(102);
            return spread_sum(ops::matmul(a, w), mr);
        };
        CHECK(grad_check(f2, {a, w}, 1e-5) < 1e-4);
    }

    SUBCASE("pixel_shuffle and unshuffle") {
        Tensor x = random_tensor(rng, {2, 3, 8}, -1.0, 1.0, true);
        auto f = [&]() {
            Rng mr(103);
            return spread_sum(ops::pixel_unshuffle(ops::pixel_shuffle(x, 2), 2), mr);
        };
        CHECK(grad_check(f, {x}, 1e-5) < 1e-4);
    }

    SUBCASE("bicubic_upsample") {
        Tensor x = random_tensor(rng, {4, 5, 2}, -1.0, 1.0, true);
        auto f = [&]() {
            Rng mr(104);
            return spread_sum(ops::bicubic_upsample(x, 2), mr);
        };
        CHECK(grad_check(f, {x}, 1e-5) < 1e-4);
    }

    SUBCASE("layer_norm") {
        Tensor x = random_tensor(rng, {4, 6}, -2.0, 2.0, true);
        Tensor g = random_tensor(rng, {6}, 0.5, 1.5, true);
        Tensor b = random_tensor(rng, {6}, -0.5, 0.5, true);
        auto f = [&]() {
            Rng mr(105);
            return spread_sum(ops::layer_norm(x, g, b), mr);
        };
        CHECK(grad_check(f, {x, g, b}, 1e-5) < 1e-4);
    }

    SUBCASE("batch_norm training mode") {
        Tensor x = random_tensor(rng, {2, 3, 3, 4}, -2.0, 2.0, true);
        Tensor g = random_tensor(rng, {4}, 0.5, 1.5, true);
        Tensor b = random_tensor(rng, {4}, -0.5, 0.5, true);
        ops::BatchNormState state;
        state.init(4);
        auto f = [&]() {
            Rng mr(106);
            return spread_sum(ops::batch_norm(x, g, b, state, Mode::kTrain, /*track_stats=*/false), mr);
        };
        CHECK(grad_check(f, {x, g, b}, 1e-5) < 1e-4);
    }

    SUBCASE("batch_norm eval mode") {
        Tensor x = random_tensor(rng, {2, 3, 3, 4}, -2.0, 2.0, true);
        Tensor g = random_tensor(rng, {4}, 0.5, 1.5, true);
        Tensor b = random_tensor(rng, {4}, -0.5, 0.5, true);
        ops::BatchNormState state;
        state.init(4);
        for (int c = 0; c < 4; ++c) {
            state.running_mean[static_cast<std::size_t>(c)] = 0.1 * c;
            state.running_var[static_cast<std::size_t>(c)] = 1.0 + 0.2 * c;
        }
        auto f = [&]() {
            Rng mr(107);
            return spread_sum(ops::batch_norm(x, g, b, state, Mode::kEval), mr);
        };
        CHECK(grad_check(f, {x, g, b}, 1e-5) < 1e-4);
    }

    SUBCASE("activations") {
        Tensor x = random_tensor(rng, {5, 7}, -2.0, 2.0, true);
        auto f_leaky = [&]() {
            Rng mr(108);
            return spread_sum(ops::leaky_relu(x, 0.2), mr);
        };
        CHECK(grad_check(f_leaky, {x}, 1e-5) < 1e-4);
        auto f_gelu = [&]() {
            Rng mr(109);
            return spread_sum(ops::gelu(x), mr);
        };
        CHECK(grad_check(f_gelu, {x}, 1e-5) < 1e-4);
        auto f_tanh = [&]() {
            Rng mr(110);
            return spread_sum(ops::tanh(x), mr);
        };
        CHECK(grad_check(f_tanh, {x}, 1e-5) < 1e-4);
        auto f_soft = [&]() {
            Rng mr(111);
            return spread_sum(ops::softmax(x, 1), mr);
        };
        CHECK(grad_check(f_soft, {x}, 1e-5) < 1e-4);
    }

    SUBCASE("windows, bias and attention contractions") {
        const int p = 3;
        const int t = p * p;
        Tensor q = random_tensor(rng, {2, t, 6}, -1.0, 1.0, true);
        Tensor k = random_tensor(rng, {2, t, 6}, -1.0, 1.0, true);
        Tensor v = random_tensor(rng, {2, t, 6}, -1.0, 1.0, true);
        Tensor e = random_tensor(rng, {2, (2 * p - 1) * (2 * p - 1)}, -0.5, 0.5, true);
        auto f = [&]() {
            Rng mr(112);
            Tensor s = ops::attn_scores(q, k, 2, 1.0 / std::sqrt(3.0));
            s = ops::add_relative_bias(s, e, p);
            Tensor probs = ops::softmax(s, 3);
            return spread_sum(ops::attn_context(probs, v, 2), mr);
        };
        CHECK(grad_check(f, {q, k, v, e}, 1e-5) < 1e-4);

        Tensor x = random_tensor(rng, {2, 36, 3}, -1.0, 1.0, true);
        auto f_win = [&]() {
            Rng mr(113);
            return spread_sum(ops::window_merge(ops::window_partition(x, 6, 6, 3), 6, 6, 3), mr);
        };
        CHECK(grad_check(f_win, {x}, 1e-5) < 1e-4);
    }

    SUBCASE("concat, bias, reshape, mse, mosaic") {
        Tensor a = random_tensor(rng, {3, 4}, -1.0, 1.0, true);
        Tensor b = random_tensor(rng, {3, 2}, -1.0, 1.0, true);
        Tensor bias = random_tensor(rng, {6}, -0.5, 0.5, true);
        Tensor target = random_tensor(rng, {3, 6});
        auto f = [&]() {
            Tensor cat = ops::concat_last(a, b);
            cat = ops::add_channel_bias(cat, bias);
            cat = ops::reshape(cat, {6, 3});
            return ops::mean_squared_error(cat, ops::reshape(target, {6, 3}));
        };
        CHECK(grad_check(f, {a, b, bias}, 1e-5) < 1e-4);

        Tensor patches = random_tensor(rng, {4, 2, 2, 1}, -1.0, 1.0, true);
        std::vector<ops::PatchAnchor> anchors = {{0, 0, 0}, {0, 0, 2}, {0, 2, 0}, {0, 2, 2}};
        Tensor img_target = random_tensor(rng, {1, 4, 4, 1});
        auto f_m = [&]() { return ops::mean_squared_error(ops::mosaic_patches(patches, anchors, 1, 4, 4), img_target); };
        CHECK(grad_check(f_m, {patches}, 1e-5) < 1e-4);
    }
}

TEST_CASE("no tape means no recording and no grad flow") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    w.zero_grad();
    Tensor y = ops::scale(w, 3.0);
    CHECK_FALSE(y.requires_grad());
    CHECK(w.grad()[0] == 0.0);
}
