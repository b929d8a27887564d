#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tpseg/checkpoint.hpp"
#include "tpseg/gradcheck.hpp"
#include "tpseg/ops.hpp"
#include "tpseg/optim.hpp"
#include "tpseg/tensor.hpp"

using namespace tpseg;

namespace {

Tensor<double> rand_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor<double>::uniform(std::move(shape), rng, lo, hi);
}

bool bits_equal(const Tensor<double>& a, const Tensor<double>& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data(), b.data(), a.values().size() * sizeof(double)) == 0;
}

} // namespace

TEST_CASE("tensor shape/data invariants") {
    CHECK_THROWS_AS(Tensor<double>({2, 3}, std::vector<double>(5, 0.0)), ShapeError);
    CHECK_THROWS_AS(Tensor<double>({2, 0}, std::vector<double>{}), ShapeError);
    Tensor<double> t = Tensor<double>::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.grad() == nullptr);
    t.set_requires_grad(true);
    REQUIRE(t.grad() != nullptr);
    CHECK(t.grad()->size() == 6);
    t.set_requires_grad(false);
    CHECK(t.grad() == nullptr);
}

TEST_CASE("tape enforces topological ids and replays in reverse") {
    Tape<double> tape;
    Tensor<double> a = Tensor<double>::scalar(1.0);
    Tensor<double> b = Tensor<double>::scalar(2.0);
    // output created before input: must be rejected
    CHECK_THROWS_AS(tape.record({b.id()}, a.id(), [] {}), ValidationError);

    std::vector<int> order;
    tape.record({a.id()}, b.id(), [&] { order.push_back(1); });
    Tensor<double> c = Tensor<double>::scalar(3.0);
    tape.record({b.id()}, c.id(), [&] { order.push_back(2); });
    Tensor<double> loss = Tensor<double>::scalar(0.0);
    loss.set_requires_grad(true);
    tape.record({c.id()}, loss.id(), [&] { order.push_back(3); });
    tape.backward(loss);
    CHECK(order == std::vector<int>{3, 2, 1});
}

TEST_CASE("ops record only under an active tape") {
    SplitMix64 rng(1);
    Tensor<double> a = rand_tensor({3, 3}, rng);
    a.set_requires_grad(true);
    Tensor<double> b = rand_tensor({3, 3}, rng);
    Tensor<double> c = mul(a, b); // no scope
    CHECK_FALSE(c.requires_grad());
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        Tensor<double> d = mul(a, b);
        CHECK(d.requires_grad());
        CHECK(tape.size() == 1);
    }
}

// -------------------------------------------------------------------
// matmul
// -------------------------------------------------------------------

TEST_CASE("matmul identity case") {
    SplitMix64 rng(7);
    Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor<double> a = rand_tensor({3, 3}, rng);
    Tensor<double> prod = matmul(eye, a);
    for (Index i = 0; i < 9; ++i)
        CHECK(prod.values()[i] == doctest::Approx(a.values()[i]).epsilon(1e-15));
}

TEST_CASE("matmul hand example") {
    Tensor<double> a({2, 2}, {1, 2, 3, 4});
    Tensor<double> b({2, 1}, {0, 1});
    Tensor<double> c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.values()[0] == 2.0);
    CHECK(c.values()[1] == 4.0);
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor<double> a = Tensor<double>::zeros({4, 5});
    Tensor<double> b = Tensor<double>::zeros({3, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[4, 5]") != std::string::npos);
        CHECK(msg.find("[3, 2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradcheck 4x5 * 5x3") {
    SplitMix64 rng(11);
    Tensor<double> a = rand_tensor({4, 5}, rng);
    Tensor<double> b = rand_tensor({5, 3}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(sigmoid(matmul(a, b))); }, {&a, &b}, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE("matmul broadcast batch dims") {
    SplitMix64 rng(13);
    Tensor<double> a = rand_tensor({2, 3, 4}, rng);
    Tensor<double> b = rand_tensor({4, 5}, rng);
    Tensor<double> c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 5});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(matmul(a, b)); }, {&a, &b}, 1e-5);
    CHECK(err < 1e-5);
}

// -------------------------------------------------------------------
// softmax
// -------------------------------------------------------------------

TEST_CASE("softmax uniform row") {
    Tensor<double> x({3}, {0, 0, 0});
    Tensor<double> y = softmax_lastdim(x);
    for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax two-element analytic") {
    double c = std::log(3.0);
    Tensor<double> x({2}, {0.4, 0.4 + c});
    Tensor<double> y = softmax_lastdim(x);
    CHECK(y.values()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y.values()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one") {
    SplitMix64 rng(17);
    Tensor<double> x = rand_tensor({7, 9}, rng, -5, 5);
    Tensor<double> y = softmax_lastdim(x);
    for (Index r = 0; r < 7; ++r) {
        double s = 0;
        for (Index c = 0; c < 9; ++c) s += y.values()[r * 9 + c];
        CHECK(std::fabs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("gradient of sum of softmax vanishes") {
    SplitMix64 rng(19);
    Tensor<double> x = rand_tensor({4, 6}, rng, -2, 2);
    x.set_requires_grad(true);
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        Tensor<double> loss = reduce_sum(softmax_lastdim(x));
        tape.backward(loss);
    }
    for (double g : *x.grad()) CHECK(std::fabs(g) < 1e-12);
}

TEST_CASE("softmax rejects NaN") {
    Tensor<double> x({2}, {0.0, std::nan("")});
    CHECK_THROWS_AS(softmax_lastdim(x), NumericError);
}

TEST_CASE("softmax gradcheck") {
    SplitMix64 rng(23);
    Tensor<double> x = rand_tensor({3, 5}, rng, -2, 2);
    Tensor<double> w = rand_tensor({3, 5}, rng);
    x.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(mul(softmax_lastdim(x), w)); }, {&x}, 1e-6);
    CHECK(err < 1e-5);
}

// -------------------------------------------------------------------
// l2_normalize
// -------------------------------------------------------------------

TEST_CASE("l2_normalize 3-4-5") {
    Tensor<double> x({2}, {3, 4});
    Tensor<double> y = l2_normalize(x, 0);
    CHECK(y.values()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y.values()[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("l2_normalize zero vector stays zero") {
    Tensor<double> x({2}, {0, 0});
    Tensor<double> y = l2_normalize(x, 0);
    CHECK(y.values()[0] == 0.0);
    CHECK(y.values()[1] == 0.0);
}

TEST_CASE("l2_normalize positive-scale invariance") {
    SplitMix64 rng(29);
    Tensor<double> v = rand_tensor({6}, rng);
    Tensor<double> scaled = scalar_mul(v, 7.3);
    Tensor<double> n1 = l2_normalize(v, 0);
    Tensor<double> n2 = l2_normalize(scaled, 0);
    for (Index i = 0; i < 6; ++i)
        CHECK(n1.values()[i] == doctest::Approx(n2.values()[i]).epsilon(1e-12));
}

TEST_CASE("l2_normalize gradcheck along rows") {
    SplitMix64 rng(31);
    Tensor<double> x = rand_tensor({4, 3}, rng, 0.2, 1.5);
    Tensor<double> w = rand_tensor({4, 3}, rng);
    x.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(mul(l2_normalize(x, 1), w)); }, {&x}, 1e-6);
    CHECK(err < 1e-5);
}

// -------------------------------------------------------------------
// conv1x1
// -------------------------------------------------------------------

TEST_CASE("conv1x1 stride-4 shape arithmetic") {
    Tensor<float> x = Tensor<float>::zeros({64, 64, 8});
    Tensor<float> w = Tensor<float>::zeros({8, 5});
    Tensor<float> b = Tensor<float>::zeros({5});
    Tensor<float> y = conv1x1(x, w, b, 4);
    CHECK(y.shape() == Shape{16, 16, 5});
    // ceil semantics on non-divisible sizes
    Tensor<float> x2 = Tensor<float>::zeros({10, 7, 8});
    CHECK(conv1x1(x2, w, b, 4).shape() == Shape{3, 2, 5});
}

TEST_CASE("conv1x1 identity weight is identity") {
    SplitMix64 rng(37);
    Tensor<double> x = rand_tensor({5, 4, 3}, rng);
    Tensor<double> w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor<double> b = Tensor<double>::zeros({3});
    Tensor<double> y = conv1x1(x, w, b, 1);
    CHECK(bits_equal(x, y) == false); // distinct buffers
    for (std::size_t i = 0; i < x.values().size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-15));
}

TEST_CASE("conv1x1 gradcheck input/weight/bias") {
    SplitMix64 rng(41);
    Tensor<double> x = rand_tensor({8, 8, 3}, rng);
    Tensor<double> w = rand_tensor({3, 4}, rng, -0.5, 0.5);
    Tensor<double> b = rand_tensor({4}, rng, -0.1, 0.1);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(sigmoid(conv1x1(x, w, b, 2))); }, {&x, &w, &b}, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE("conv1x1 channel mismatch error") {
    Tensor<double> x = Tensor<double>::zeros({4, 4, 3});
    Tensor<double> w = Tensor<double>::zeros({5, 2});
    Tensor<double> b = Tensor<double>::zeros({2});
    CHECK_THROWS_AS(conv1x1(x, w, b, 1), ShapeError);
}

// -------------------------------------------------------------------
// upsampling and block rearranges
// -------------------------------------------------------------------

TEST_CASE("upsample_nearest basics") {
    Tensor<double> x({2, 2}, {1, 2, 3, 4});
    Tensor<double> same = upsample_nearest(x, 1);
    for (Index i = 0; i < 4; ++i) CHECK(same.values()[i] == x.values()[i]);
    Tensor<double> y = upsample_nearest(x, 2);
    CHECK(y.shape() == Shape{4, 4});
    std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    for (Index i = 0; i < 16; ++i) CHECK(y.values()[i] == want[i]);
}

TEST_CASE("upsample_nearest conserves mass times factor^2") {
    SplitMix64 rng(43);
    Tensor<double> x = rand_tensor({3, 5, 2}, rng);
    Tensor<double> y = upsample_nearest(x, 3);
    double sx = 0, sy = 0;
    for (double v : x.values()) sx += v;
    for (double v : y.values()) sy += v;
    CHECK(sy == doctest::Approx(9 * sx).epsilon(1e-12));
}

TEST_CASE("upsample gradchecks") {
    SplitMix64 rng(47);
    Tensor<double> x = rand_tensor({3, 4, 2}, rng);
    Tensor<double> w = rand_tensor({6, 8, 2}, rng);
    x.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(mul(upsample_nearest(x, 2), w)); }, {&x}, 1e-6);
    CHECK(err < 1e-5);
    double err2 = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(mul(upsample_bilinear(x, 2), w)); }, {&x}, 1e-6);
    CHECK(err2 < 1e-5);
}

TEST_CASE("space_to_depth and depth_to_space invert each other") {
    SplitMix64 rng(53);
    Tensor<double> x = rand_tensor({4, 6, 3}, rng);
    Tensor<double> y = space_to_depth(x, 2);
    CHECK(y.shape() == Shape{2, 3, 12});
    Tensor<double> back = depth_to_space(y, 2);
    CHECK(back.shape() == x.shape());
    for (std::size_t i = 0; i < x.values().size(); ++i)
        CHECK(back.values()[i] == x.values()[i]);

    Tensor<double> w = rand_tensor({2, 3, 12}, rng);
    x.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(mul(space_to_depth(x, 2), w)); }, {&x}, 1e-6);
    CHECK(err < 1e-5);
}

// -------------------------------------------------------------------
// elementwise, broadcasting, unary
// -------------------------------------------------------------------

TEST_CASE("broadcast mul with ones and zeros") {
    SplitMix64 rng(59);
    Tensor<double> x = rand_tensor({3, 4, 5}, rng);
    Tensor<double> ones = Tensor<double>::ones({4, 5});
    Tensor<double> zeros = Tensor<double>::zeros({5});
    Tensor<double> same = mul(x, ones);
    for (std::size_t i = 0; i < x.values().size(); ++i)
        CHECK(same.values()[i] == x.values()[i]);
    Tensor<double> nil = mul(x, zeros);
    for (double v : nil.values()) CHECK(v == 0.0);
}

TEST_CASE("broadcast binary gradchecks") {
    SplitMix64 rng(61);
    Tensor<double> a = rand_tensor({3, 1, 4}, rng, 0.5, 1.5);
    Tensor<double> b = rand_tensor({2, 4}, rng, 0.5, 1.5);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    double err_add = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(sigmoid(add(a, b))); }, {&a, &b}, 1e-6);
    CHECK(err_add < 1e-5);
    double err_mul = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(sigmoid(mul(a, b))); }, {&a, &b}, 1e-6);
    CHECK(err_mul < 1e-5);
    double err_div = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(sigmoid(div(a, b))); }, {&a, &b}, 1e-6);
    CHECK(err_div < 1e-5);
    double err_sub = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(sigmoid(sub(a, b))); }, {&a, &b}, 1e-6);
    CHECK(err_sub < 1e-5);
}

TEST_CASE("unary op gradchecks") {
    SplitMix64 rng(67);
    Tensor<double> x = rand_tensor({4, 5}, rng, 0.2, 0.9);
    x.set_requires_grad(true);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_sum(sigmoid(x)); }, {&x}, 1e-6) < 1e-6);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_sum(gelu(x)); }, {&x}, 1e-6) < 1e-6);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_sum(log(x)); }, {&x}, 1e-7) < 1e-5);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_sum(clamp(x, 0.0, 0.85)); }, {&x}, 1e-8) < 1e-4);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_mean(scalar_add(scalar_mul(x, -2.5), 1.0)); }, {&x}, 1e-6) <
          1e-6);
}

TEST_CASE("layer_norm gradcheck and normalization") {
    SplitMix64 rng(71);
    Tensor<double> x = rand_tensor({6, 8}, rng, -2, 2);
    Tensor<double> g = rand_tensor({8}, rng, 0.5, 1.5);
    Tensor<double> b = rand_tensor({8}, rng, -0.2, 0.2);
    Tensor<double> y = layer_norm(x, Tensor<double>::ones({8}), Tensor<double>::zeros({8}));
    for (Index r = 0; r < 6; ++r) {
        double mean = 0;
        for (Index c = 0; c < 8; ++c) mean += y.values()[r * 8 + c];
        CHECK(std::fabs(mean / 8) < 1e-12);
    }
    x.set_requires_grad(true);
    g.set_requires_grad(true);
    b.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(sigmoid(layer_norm(x, g, b))); }, {&x, &g, &b}, 1e-6);
    CHECK(err < 1e-5);
}

// -------------------------------------------------------------------
// shape ops and reductions
// -------------------------------------------------------------------

TEST_CASE("reshape/permute/concat/slice gradchecks") {
    SplitMix64 rng(73);
    Tensor<double> x = rand_tensor({3, 4}, rng);
    Tensor<double> y = rand_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    y.set_requires_grad(true);

    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_sum(sigmoid(reshape(x, {4, 3}))); }, {&x}, 1e-6) < 1e-6);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_sum(sigmoid(permute(x, {1, 0}))); }, {&x}, 1e-6) < 1e-6);
    CHECK(finite_difference_gradcheck<double>(
              [&] {
                  return reduce_sum(sigmoid(concat<double>({x, y}, 0)));
              },
              {&x, &y}, 1e-6) < 1e-6);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_sum(sigmoid(slice(x, 1, 1, 2))); }, {&x}, 1e-6) < 1e-6);
}

TEST_CASE("permute moves elements correctly") {
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> y = permute(x, {1, 0});
    CHECK(y.shape() == Shape{3, 2});
    std::vector<double> want = {1, 4, 2, 5, 3, 6};
    for (Index i = 0; i < 6; ++i) CHECK(y.values()[i] == want[i]);
}

TEST_CASE("concat then slice round trip") {
    SplitMix64 rng(79);
    Tensor<double> a = rand_tensor({2, 3}, rng);
    Tensor<double> b = rand_tensor({2, 5}, rng);
    Tensor<double> c = concat<double>({a, b}, 1);
    CHECK(c.shape() == Shape{2, 8});
    Tensor<double> a2 = slice(c, 1, 0, 3);
    Tensor<double> b2 = slice(c, 1, 3, 5);
    for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(a2.values()[i] == a.values()[i]);
    for (std::size_t i = 0; i < b.values().size(); ++i) CHECK(b2.values()[i] == b.values()[i]);
}

TEST_CASE("reductions forward and gradcheck") {
    SplitMix64 rng(83);
    Tensor<double> x = rand_tensor({3, 4}, rng);
    double mn = 1e9, mx = -1e9, sum = 0;
    for (double v : x.values()) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        sum += v;
    }
    CHECK(reduce_sum(x).item() == doctest::Approx(sum).epsilon(1e-12));
    CHECK(reduce_mean(x).item() == doctest::Approx(sum / 12).epsilon(1e-12));
    CHECK(reduce_min(x).item() == mn);
    CHECK(reduce_max(x).item() == mx);

    x.set_requires_grad(true);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_mean(x); }, {&x}, 1e-6) < 1e-6);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_min(x); }, {&x}, 1e-7) < 1e-5);
    CHECK(finite_difference_gradcheck<double>(
              [&] { return reduce_max(x); }, {&x}, 1e-7) < 1e-5);
}

// -------------------------------------------------------------------
// linear and attention
// -------------------------------------------------------------------

TEST_CASE("linear matches manual matmul+bias") {
    SplitMix64 rng(89);
    Tensor<double> x = rand_tensor({2, 3, 4}, rng);
    Tensor<double> w = rand_tensor({4, 5}, rng);
    Tensor<double> b = rand_tensor({5}, rng);
    Tensor<double> y = linear(x, w, b);
    CHECK(y.shape() == Shape{2, 3, 5});
    for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 3; ++j)
            for (Index o = 0; o < 5; ++o) {
                double acc = b.values()[o];
                for (Index k = 0; k < 4; ++k)
                    acc += x.values()[(i * 3 + j) * 4 + k] * w.values()[k * 5 + o];
                CHECK(y.values()[(i * 3 + j) * 5 + o] == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("attention rows sum to one and are permutation invariant") {
    SplitMix64 rng(97);
    Tensor<double> q = rand_tensor({5, 8}, rng);
    Tensor<double> k = rand_tensor({7, 8}, rng);
    Tensor<double> v = rand_tensor({7, 6}, rng);
    auto res = attention(q, k, v);
    CHECK(res.output.shape() == Shape{5, 6});
    for (Index r = 0; r < 5; ++r) {
        double s = 0;
        for (Index c = 0; c < 7; ++c) s += res.weights.values()[r * 7 + c];
        CHECK(std::fabs(s - 1.0) < 1e-9);
    }

    // permute key/value rows together: per-query output is unchanged
    std::vector<Index> perm = {3, 0, 6, 1, 5, 2, 4};
    std::vector<double> kp(7 * 8), vp(7 * 6);
    for (Index r = 0; r < 7; ++r) {
        for (Index c = 0; c < 8; ++c) kp[r * 8 + c] = k.values()[perm[r] * 8 + c];
        for (Index c = 0; c < 6; ++c) vp[r * 6 + c] = v.values()[perm[r] * 6 + c];
    }
    auto res2 = attention(q, Tensor<double>({7, 8}, std::move(kp)),
                          Tensor<double>({7, 6}, std::move(vp)));
    for (std::size_t i = 0; i < res.output.values().size(); ++i)
        CHECK(res.output.values()[i] ==
              doctest::Approx(res2.output.values()[i]).epsilon(1e-12));
}

TEST_CASE("attention gradcheck") {
    SplitMix64 rng(101);
    Tensor<double> q = rand_tensor({3, 4}, rng);
    Tensor<double> k = rand_tensor({5, 4}, rng);
    Tensor<double> v = rand_tensor({5, 2}, rng);
    q.set_requires_grad(true);
    k.set_requires_grad(true);
    v.set_requires_grad(true);
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(sigmoid(attention(q, k, v).output)); }, {&q, &k, &v}, 1e-6);
    CHECK(err < 1e-5);
}

// -------------------------------------------------------------------
// composed chains, determinism, negative control
// -------------------------------------------------------------------

TEST_CASE("random 3-op composition gradchecks over 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SplitMix64 rng(seed * 1000 + 3);
        Tensor<double> a = rand_tensor({4, 6}, rng, 0.3, 1.2);
        Tensor<double> b = rand_tensor({4, 6}, rng, 0.3, 1.2);
        a.set_requires_grad(true);
        b.set_requires_grad(true);
        auto unary = [&](const Tensor<double>& t, std::uint64_t pick) -> Tensor<double> {
            switch (pick % 5) {
                case 0: return sigmoid(t);
                case 1: return gelu(t);
                case 2: return softmax_lastdim(t);
                case 3: return l2_normalize(t, 1);
                default: return scalar_add(scalar_mul(t, 1.3), 0.2);
            }
        };
        std::uint64_t p1 = rng.next(), p2 = rng.next(), p3 = rng.next();
        auto fn = [&] {
            Tensor<double> u = unary(a, p1);
            Tensor<double> w = unary(b, p2);
            Tensor<double> m = (p3 % 2 == 0) ? mul(u, w) : add(u, w);
            return reduce_mean(unary(m, p3 >> 8));
        };
        double err = finite_difference_gradcheck<double>(fn, {&a, &b}, 1e-6);
        CAPTURE(seed);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("ops are bit-deterministic") {
    SplitMix64 rng(103);
    Tensor<double> a = rand_tensor({16, 16}, rng);
    Tensor<double> b = rand_tensor({16, 16}, rng);
    Tensor<double> m1 = matmul(a, b);
    Tensor<double> m2 = matmul(a, b);
    CHECK(bits_equal(m1, m2));
    Tensor<double> s1 = softmax_lastdim(a);
    Tensor<double> s2 = softmax_lastdim(a);
    CHECK(bits_equal(s1, s2));
}

TEST_CASE("gradcheck catches a corrupted backward rule") {
    // op with a deliberately wrong gradient: y = 2x forward, dx += 3g back
    SplitMix64 rng(107);
    Tensor<double> x = rand_tensor({5}, rng);
    x.set_requires_grad(true);
    auto corrupt_double = [](const Tensor<double>& in) {
        std::vector<double> vals(in.values());
        for (auto& v : vals) v *= 2.0;
        bool track = active_tape<double>() != nullptr && in.requires_grad();
        Tensor<double> out(in.shape(), std::move(vals));
        if (track) {
            out.set_requires_grad(true);
            active_tape<double>()->record({in.id()}, out.id(), [in, out]() {
                const std::vector<double>& g = *out.grad();
                std::vector<double>& gx = *in.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3.0 * g[i]; // wrong on purpose
            });
        }
        return out;
    };
    double err = finite_difference_gradcheck<double>(
        [&] { return reduce_sum(corrupt_double(x)); }, {&x}, 1e-6);
    CHECK(err > 1e-2);
}

// -------------------------------------------------------------------
// AdamW
// -------------------------------------------------------------------

TEST_CASE("adamw zero grad and zero decay is a no-op") {
    std::vector<double> p = {1.0, -2.0, 3.0};
    std::vector<double> g = {0.0, 0.0, 0.0};
    AdamState<double> st;
    adamw_step(p, g, st, 0.01, 0.9, 0.999, 1e-8, 0.0);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adamw first step moves by lr in the sign direction") {
    std::vector<double> p = {0.7};
    std::vector<double> g = {0.3};
    AdamState<double> st;
    adamw_step(p, g, st, 0.01, 0.9, 0.999, 1e-8, 0.0);
    CHECK(p[0] == doctest::Approx(0.7 - 0.01).epsilon(1e-6));
    std::vector<double> pn = {0.7};
    std::vector<double> gn = {-4.2};
    AdamState<double> st2;
    adamw_step(pn, gn, st2, 0.01, 0.9, 0.999, 1e-8, 0.0);
    CHECK(pn[0] == doctest::Approx(0.7 + 0.01).epsilon(1e-6));
}

TEST_CASE("adamw descends x^2") {
    std::vector<double> x = {1.0};
    AdamState<double> st;
    double prev = x[0] * x[0];
    for (int i = 0; i < 5; ++i) {
        std::vector<double> g = {2.0 * x[0]};
        adamw_step(x, g, st, 0.1, 0.9, 0.999, 1e-8, 0.0);
        double f = x[0] * x[0];
        CHECK(f < prev);
        prev = f;
    }
}

// -------------------------------------------------------------------
// checkpoint archive
// -------------------------------------------------------------------

TEST_CASE("checkpoint round trip is bit exact") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "tpseg_ckpt_test";
    fs::create_directories(dir);
    std::string path = (dir / "t.tpseg").string();

    SplitMix64 rng(109);
    Tensor<double> a = rand_tensor({3, 4}, rng);
    Tensor<double> b = rand_tensor({7}, rng);
    save_checkpoint<double>(path, {{"alpha", &a}, {"beta", &b}});

    Tensor<double> a2 = Tensor<double>::zeros({3, 4});
    Tensor<double> b2 = Tensor<double>::zeros({7});
    load_checkpoint<double>(path, {{"alpha", &a2}, {"beta", &b2}});
    CHECK(bits_equal(a, a2));
    CHECK(bits_equal(b, b2));

    // writing the loaded tensors again reproduces the file byte-for-byte
    std::string path2 = (dir / "t2.tpseg").string();
    save_checkpoint<double>(path2, {{"alpha", &a2}, {"beta", &b2}});
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("checkpoint errors carry record names and offsets") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "tpseg_ckpt_test";
    fs::create_directories(dir);
    std::string path = (dir / "bad.tpseg").string();

    SplitMix64 rng(113);
    Tensor<float> a = Tensor<float>::uniform({4}, rng, -1, 1);
    save_checkpoint<float>(path, {{"theta", &a}});

    Tensor<float> wrong_shape = Tensor<float>::zeros({5});
    try {
        load_checkpoint<float>(path, {{"theta", &wrong_shape}});
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("theta") != std::string::npos);
    }

    Tensor<float> ok = Tensor<float>::zeros({4});
    CHECK_THROWS_AS(load_checkpoint<float>(path, {{"missing", &ok}}), FormatError);

    // truncate mid-record: offset must be reported
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    std::string cut = bytes.substr(0, bytes.size() - 3);
    std::string path_cut = (dir / "cut.tpseg").string();
    {
        std::ofstream out(path_cut, std::ios::binary);
        out.write(cut.data(), static_cast<std::streamsize>(cut.size()));
    }
    try {
        read_checkpoint<float>(path_cut);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
}

TEST_CASE("checkpoint rejects dtype mismatch") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "tpseg_ckpt_test";
    fs::create_directories(dir);
    std::string path = (dir / "dt.tpseg").string();
    SplitMix64 rng(127);
    Tensor<float> a = Tensor<float>::uniform({4}, rng, -1, 1);
    save_checkpoint<float>(path, {{"theta", &a}});
    CHECK_THROWS_AS(read_checkpoint<double>(path), FormatError);
}
