#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "sdeattn/tensor.hpp"
#include "testutil.hpp"

using namespace sdeattn;
using testutil::gradient_check;
using testutil::param;
using testutil::random_tensor;

TEST_CASE("elementwise arithmetic basics") {
    Tensor a({2}, {1.0, 2.0});
    Tensor b({2}, {3.0, 4.0});
    auto c = add(a, b);
    CHECK(c(0) == 4.0);
    CHECK(c(1) == 6.0);

    Rng rng(7);
    Tensor x = random_tensor({3, 4}, rng);
    auto y = mul(x, Tensor::full({3, 4}, 1.0));
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);

    CHECK(sigmoid(Tensor({1}, {0.0})).value() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("elementwise shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({4});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
    try {
        add(a, b);
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("[4]") != std::string::npos);
    }
}

TEST_CASE("broadcast result shape is associative") {
    Rng rng(11);
    const std::vector<Shape> pool = {{1}, {3}, {2, 1}, {2, 3}, {1, 3}, {4, 2, 3}, {4, 1, 1}, {4, 2, 1}};
    int tried = 0;
    for (const auto& sa : pool)
        for (const auto& sb : pool)
            for (const auto& sc : pool) {
                Shape left, right;
                try {
                    left = broadcast_shape(broadcast_shape(sa, sb), sc);
                    right = broadcast_shape(sa, broadcast_shape(sb, sc));
                } catch (const std::invalid_argument&) {
                    continue;
                }
                ++tried;
                CHECK(left == right);
            }
    CHECK(tried > 50);
}

TEST_CASE("matmul hand values") {
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor v({3, 1}, {2.5, -1.0, 4.0});
    auto out = matmul(eye, v);
    CHECK(out(0, 0) == 2.5);
    CHECK(out(1, 0) == -1.0);
    CHECK(out(2, 0) == 4.0);

    Tensor m({2, 2}, {1, 2, 3, 4});
    Tensor ones({2, 1}, {1, 1});
    auto r = matmul(m, ones);
    CHECK(r(0, 0) == 3.0);
    CHECK(r(1, 0) == 7.0);

    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), std::invalid_argument);
}

TEST_CASE("matmul gradient matches central differences") {
    Rng rng(42);
    Tensor a = param({4, 5}, rng);
    Tensor b = param({5, 3}, rng);
    std::vector<Tensor> params = {a, b};
    const double err = gradient_check(params, [&]() { return sum_all(tanh(matmul(a, b))); });
    CHECK(err < 1e-6);
}

TEST_CASE("backward on linear and quadratic losses") {
    Tensor x({3}, {0.5, -1.0, 2.0});
    x.set_requires_grad();
    {
        Tape tape;
        auto loss = sum_all(x);
        tape.backward(loss);
    }
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 1.0);

    Tensor y({2}, {1.0, 2.0});
    y.set_requires_grad();
    {
        Tape tape;
        auto loss = sum_all(mul(y, y));
        tape.backward(loss);
    }
    CHECK(y.grad()[0] == 2.0);
    CHECK(y.grad()[1] == 4.0);
}

TEST_CASE("backward errors: non-scalar, double call, detached loss") {
    Tensor x({2}, {1.0, 2.0});
    x.set_requires_grad();
    Tape tape;
    auto v = mul(x, x);
    CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);
    auto loss = sum_all(v);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
    tape.reset();
    Tensor constant = Tensor::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(constant), std::invalid_argument);
}

TEST_CASE("parameter not reached by loss keeps zero gradient") {
    Tensor used({2}, {1.0, -2.0});
    Tensor unused({3}, {5.0, 5.0, 5.0});
    used.set_requires_grad();
    unused.set_requires_grad();
    used.zero_grad();
    unused.zero_grad();
    {
        Tape tape;
        auto loss = sum_all(mul(used, used));
        // unused participates in taped work whose result is dropped
        auto dead = sigmoid(unused);
        (void)dead;
        tape.backward(loss);
    }
    for (double g : unused.grad()) CHECK(g == 0.0);
    CHECK(used.grad()[0] == 2.0);
}

TEST_CASE("two layer tanh network gradient vs finite differences") {
    Rng rng(3);
    Tensor w1 = param({4, 3}, rng, -0.7, 0.7);
    Tensor b1 = param({4}, rng, -0.3, 0.3);
    Tensor w2 = param({1, 4}, rng, -0.7, 0.7);
    Tensor b2 = param({1}, rng, -0.3, 0.3);
    Tensor x = random_tensor({6, 3}, rng);
    std::vector<Tensor> params = {w1, b1, w2, b2};
    auto make_loss = [&]() {
        auto h = tanh(add(matmul(x, permute(w1, {1, 0})), b1));
        auto out = add(matmul(h, permute(w2, {1, 0})), b2);
        return sum_all(mul(out, out));
    };
    CHECK(gradient_check(params, make_loss) < 1e-6);
}

TEST_CASE("softmax rows sum to one and uniform rows are uniform") {
    Rng rng(9);
    Tensor x = random_tensor({5, 7}, rng, -4.0, 4.0);
    auto y = softmax(x, 1);
    for (std::int64_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (std::int64_t c = 0; c < 7; ++c) s += y(r, c);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    auto u = softmax(Tensor::full({4}, 2.5), 0);
    for (std::int64_t c = 0; c < 4; ++c) CHECK(u(c) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("softmax over a non-trailing axis") {
    Tensor x({2, 2}, {0.0, 100.0, 0.0, 100.0});
    auto y = softmax(x, 0);
    CHECK(y(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(y(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("slice_time identity and round trip with concat") {
    Rng rng(5);
    Tensor seq = random_tensor({6, 2, 3}, rng);
    std::vector<std::int64_t> all = {0, 1, 2, 3, 4, 5};
    auto same = slice_time(seq, all);
    for (std::int64_t i = 0; i < seq.size(); ++i) CHECK(same.data()[i] == seq.data()[i]);

    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    std::vector<Tensor> parts = {a, b};
    auto joined = concat(parts, 0);
    std::vector<std::int64_t> first = {0, 1}, second = {2, 3, 4, 5};
    auto back_a = slice_time(joined, first);
    auto back_b = slice_time(joined, second);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(back_a.data()[i] == a.data()[i]);
    for (std::int64_t i = 0; i < b.size(); ++i) CHECK(back_b.data()[i] == b.data()[i]);

    std::vector<std::int64_t> bad = {7};
    CHECK_THROWS_AS(slice_time(seq, bad), std::invalid_argument);
}

TEST_CASE("concat along the feature axis") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {9, 8});
    std::vector<Tensor> parts = {a, b};
    auto j = concat(parts, 1);
    CHECK(j.shape() == Shape{2, 3});
    CHECK(j(0, 2) == 9.0);
    CHECK(j(1, 0) == 3.0);
}

TEST_CASE("gradient sweep across differentiable ops on random shapes") {
    Rng rng(2024);
    const std::vector<Shape> shapes = {{2}, {3}, {2, 2}, {3, 2}, {2, 3, 2}, {1, 4}, {4, 1}};
    int checked = 0;
    for (const auto& s : shapes) {
        Tensor a = param(s, rng, -0.8, 0.8);
        Tensor b = param(s, rng, 0.3, 1.2);
        std::vector<Tensor> ab = {a, b};
        auto composite = [&]() {
            auto t1 = add(mul(a, b), sigmoid(a));
            auto t2 = div(tanh(t1), add_scalar(b, 2.0));
            auto t3 = exp(scale(t2, 0.3));
            return mean_all(mul(t3, log(add_scalar(mul(b, b), 1.0))));
        };
        CHECK(gradient_check(ab, composite) < 1e-5);
        ++checked;

        Tensor c = param(s, rng, -2.0, 2.0);
        std::vector<Tensor> cs = {c};
        auto reductions = [&]() {
            auto sm = softmax(c, c.ndim() - 1);
            return sum_all(mul(sm, sm));
        };
        CHECK(gradient_check(cs, reductions) < 1e-5);
        ++checked;

        auto axis_ops = [&]() {
            auto r = sum_axis(mul(c, c), 0);
            return mean_all(tanh(r));
        };
        CHECK(gradient_check(cs, axis_ops) < 1e-5);
        ++checked;
    }
    CHECK(checked >= 20);
}

TEST_CASE("gradients through broadcasting reduce correctly") {
    Rng rng(77);
    Tensor big = param({4, 3, 2}, rng);
    Tensor row = param({2}, rng);
    Tensor mid = param({3, 1}, rng);
    std::vector<Tensor> params = {big, row, mid};
    auto loss = [&]() { return sum_all(mul(add(big, row), sigmoid(mid))); };
    CHECK(gradient_check(params, loss) < 1e-5);
}

TEST_CASE("gradients through permute, reshape, concat, slice") {
    Rng rng(13);
    Tensor a = param({3, 2, 2}, rng);
    Tensor b = param({2, 2, 2}, rng);
    std::vector<Tensor> params = {a, b};
    auto loss = [&]() {
        std::vector<Tensor> parts = {a, b};
        auto j = concat(parts, 0);                      // [5,2,2]
        std::vector<std::int64_t> pick = {0, 2, 4, 4};  // repeated index
        auto g = slice_time(j, pick);                   // [4,2,2]
        auto p = permute(g, {1, 0, 2});                 // [2,4,2]
        auto r = reshape(p, {2, 8});
        return mean_all(mul(r, r));
    };
    CHECK(gradient_check(params, loss) < 1e-5);
}

TEST_CASE("batched matmul values and gradient") {
    Rng rng(21);
    Tensor a = param({3, 2, 4}, rng);
    Tensor b = param({3, 4, 2}, rng);
    auto c = matmul(a, b);
    CHECK(c.shape() == Shape{3, 2, 2});
    double manual = 0.0;
    for (std::int64_t k = 0; k < 4; ++k) manual += a(1, 0, k) * b(1, k, 1);
    CHECK(c(1, 0, 1) == doctest::Approx(manual).epsilon(1e-14));

    std::vector<Tensor> params = {a, b};
    CHECK(gradient_check(params, [&]() { return sum_all(tanh(matmul(a, b))); }) < 1e-5);
}

TEST_CASE("causal row softmax zeroes the future and keeps row sums") {
    Rng rng(31);
    Tensor scores = param({2, 4, 4}, rng, -2.0, 2.0);
    auto p = causal_row_softmax(scores);
    for (std::int64_t s = 0; s < 2; ++s)
        for (std::int64_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::int64_t c = 0; c < 4; ++c) {
                if (c > r) CHECK(p(s, r, c) == 0.0);
                sum += p(s, r, c);
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    std::vector<Tensor> params = {scores};
    CHECK(gradient_check(params, [&]() { return sum_all(mul(causal_row_softmax(scores), scores)); }) < 1e-5);
}

TEST_CASE("softmax cross entropy uniform logits give log C") {
    Tensor logits({3, 4});
    std::vector<int> labels = {0, 1, 3};
    std::vector<double> w = {1.0, 1.0, 1.0};
    auto loss = softmax_cross_entropy(logits, labels, w);
    CHECK(loss.value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Rng rng(55);
    Tensor z = param({5, 3}, rng);
    std::vector<int> ys = {0, 2, 1, 1, 0};
    std::vector<double> ws = {1.0, 0.0, 1.0, 1.0, 1.0};
    std::vector<Tensor> params = {z};
    CHECK(gradient_check(params, [&]() { return softmax_cross_entropy(z, ys, ws); }) < 1e-5);
}

TEST_CASE("zero_nonfinite_rows flags and silences bad rows") {
    Tensor x({3, 2}, {1.0, 2.0, std::nan(""), 1.0, 3.0, 4.0});
    std::vector<std::uint8_t> flags(3, 0);
    flags[2] = 1;  // pre-flagged row stays dead even though its values are fine
    auto y = zero_nonfinite_rows(x, flags);
    CHECK(flags[0] == 0);
    CHECK(flags[1] == 1);
    CHECK(flags[2] == 1);
    CHECK(y(0, 0) == 1.0);
    CHECK(y(1, 0) == 0.0);
    CHECK(y(1, 1) == 0.0);
    CHECK(y(2, 1) == 0.0);

    Tensor p({3, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    p.set_requires_grad();
    p.zero_grad();
    std::vector<std::uint8_t> f2 = {0, 1, 0};
    {
        Tape tape;
        auto out = zero_nonfinite_rows(p, f2);
        tape.backward(sum_all(out));
    }
    CHECK(p.grad()[0] == 1.0);
    CHECK(p.grad()[2] == 0.0);
    CHECK(p.grad()[3] == 0.0);
    CHECK(p.grad()[4] == 1.0);
}

TEST_CASE("no-grad guard suppresses recording") {
    Tensor x({2}, {1.0, 2.0});
    x.set_requires_grad();
    x.zero_grad();
    Tape tape;
    Tensor inside;
    {
        NoGradGuard guard;
        inside = mul(x, x);
    }
    auto loss = sum_all(mul(x, x));
    tape.backward(loss);
    CHECK(tape.num_nodes() > 0);
    CHECK(x.grad()[0] == 2.0);
}
