#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gbx/ops.hpp"
#include "gbx/rng.hpp"
#include "helpers.hpp"

using gbx::Tensor;
using testutil::central_diff;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_CASE("conv2d forward matches a hand computation") {
    // One 3x3 input channel, one 2x2 filter, stride 1, no padding.
    Tensor in = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor w = Tensor::from({1, 1, 2, 2}, {1, 0, 0, -1});
    Tensor b = Tensor::from({1}, {0.5});
    Tensor out = gbx::conv2d_forward(in, w, b, 1, 0);
    REQUIRE(out.shape() == std::vector<std::size_t>{1, 2, 2});
    // Each window: top-left minus bottom-right, plus bias.
    REQUIRE(out(0, 0, 0) == Catch::Approx(1 - 5 + 0.5));
    REQUIRE(out(0, 0, 1) == Catch::Approx(2 - 6 + 0.5));
    REQUIRE(out(0, 1, 0) == Catch::Approx(4 - 8 + 0.5));
    REQUIRE(out(0, 1, 1) == Catch::Approx(5 - 9 + 0.5));
}

TEST_CASE("conv2d padding and stride") {
    Tensor in = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
    Tensor w = Tensor::from({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    Tensor b({1});
    // Identity kernel with pad 1 keeps the input.
    Tensor same = gbx::conv2d_forward(in, w, b, 1, 1);
    REQUIRE(same.shape() == std::vector<std::size_t>{1, 2, 2});
    REQUIRE(max_abs_diff(same, in) == 0.0);

    Tensor in4 = Tensor::from({1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    Tensor w1 = Tensor::from({1, 1, 1, 1}, {1});
    Tensor strided = gbx::conv2d_forward(in4, w1, b, 2, 0);
    REQUIRE(strided.shape() == std::vector<std::size_t>{1, 2, 2});
    REQUIRE(strided(0, 0, 0) == 1.0);
    REQUIRE(strided(0, 0, 1) == 3.0);
    REQUIRE(strided(0, 1, 0) == 9.0);
    REQUIRE(strided(0, 1, 1) == 11.0);
}

TEST_CASE("conv2d backward matches finite differences") {
    gbx::Rng g(31);
    Tensor in = random_tensor({2, 5, 5}, g);
    Tensor w = random_tensor({3, 2, 3, 3}, g);
    Tensor b = random_tensor({3}, g);
    Tensor c = random_tensor({3, 5, 5}, g);  // random linear readout, pad 1 output

    auto loss_of = [&](const Tensor& inp, const Tensor& wp, const Tensor& bp) {
        Tensor out = gbx::conv2d_forward(inp, wp, bp, 1, 1);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += c[i] * out[i];
        return s;
    };

    Tensor d_w(w.shape()), d_b(b.shape());
    Tensor d_in = gbx::conv2d_backward(in, w, 1, 1, c, d_w, d_b);

    Tensor fd_in = central_diff([&](const Tensor& t) { return loss_of(t, w, b); }, in);
    Tensor fd_w = central_diff([&](const Tensor& t) { return loss_of(in, t, b); }, w);
    Tensor fd_b = central_diff([&](const Tensor& t) { return loss_of(in, w, t); }, b);
    REQUIRE(max_abs_diff(d_in, fd_in) < 1e-7);
    REQUIRE(max_abs_diff(d_w, fd_w) < 1e-7);
    REQUIRE(max_abs_diff(d_b, fd_b) < 1e-7);
}

TEST_CASE("relu and its gradient") {
    Tensor x = Tensor::from({4}, {-1.0, 0.0, 0.5, 2.0});
    Tensor y = gbx::relu(x);
    REQUIRE(y[0] == 0.0);
    REQUIRE(y[1] == 0.0);
    REQUIRE(y[2] == 0.5);
    REQUIRE(y[3] == 2.0);

    Tensor d = Tensor::from({4}, {1, 1, 1, 1});
    Tensor dx = gbx::relu_backward(x, d);
    REQUIRE(dx[0] == 0.0);
    REQUIRE(dx[1] == 0.0);  // gradient at exactly zero is zero
    REQUIRE(dx[2] == 1.0);
    REQUIRE(dx[3] == 1.0);
}

TEST_CASE("maxpool picks the first of tied maxima") {
    Tensor in = Tensor::from({1, 2, 2}, {3, 3, 1, 3});
    gbx::PoolResult res = gbx::maxpool_forward(in, 2, 2);
    REQUIRE(res.out.size() == 1);
    REQUIRE(res.out[0] == 3.0);
    REQUIRE(res.argmax[0] == 0);  // smallest flat index wins

    Tensor d_out = Tensor::from({1, 1, 1}, {5.0});
    Tensor d_in = gbx::maxpool_backward({1, 2, 2}, res.argmax, d_out);
    REQUIRE(d_in[0] == 5.0);
    REQUIRE(d_in[1] == 0.0);
    REQUIRE(d_in[3] == 0.0);
}

TEST_CASE("maxpool windows and strides") {
    Tensor in = Tensor::from({1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    gbx::PoolResult res = gbx::maxpool_forward(in, 2, 2);
    REQUIRE(res.out.shape() == std::vector<std::size_t>{1, 2, 2});
    REQUIRE(res.out(0, 0, 0) == 6.0);
    REQUIRE(res.out(0, 0, 1) == 8.0);
    REQUIRE(res.out(0, 1, 0) == 14.0);
    REQUIRE(res.out(0, 1, 1) == 16.0);
}

TEST_CASE("fc forward and backward") {
    Tensor x = Tensor::from({3}, {1, 2, 3});
    Tensor w = Tensor::from({2, 3}, {1, 0, 0, 0, 1, 1});
    Tensor b = Tensor::from({2}, {10, 20});
    Tensor out = gbx::fc_forward(x, w, b);
    REQUIRE(out(0) == 11.0);
    REQUIRE(out(1) == 25.0);

    gbx::Rng g(17);
    Tensor xr = random_tensor({4}, g);
    Tensor wr = random_tensor({3, 4}, g);
    Tensor br = random_tensor({3}, g);
    Tensor c = random_tensor({3}, g);
    auto loss_of = [&](const Tensor& xp, const Tensor& wp, const Tensor& bp) {
        Tensor o = gbx::fc_forward(xp, wp, bp);
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += c[i] * o[i];
        return s;
    };
    Tensor d_w(wr.shape()), d_b(br.shape());
    Tensor d_x = gbx::fc_backward(xr, wr, c, d_w, d_b);
    REQUIRE(max_abs_diff(d_x, central_diff([&](const Tensor& t) { return loss_of(t, wr, br); }, xr)) < 1e-8);
    REQUIRE(max_abs_diff(d_w, central_diff([&](const Tensor& t) { return loss_of(xr, t, br); }, wr)) < 1e-8);
    REQUIRE(max_abs_diff(d_b, central_diff([&](const Tensor& t) { return loss_of(xr, wr, t); }, br)) < 1e-8);
}

TEST_CASE("softmax loss value, gradient, and shift invariance") {
    Tensor z = Tensor::from({3}, {1.0, 2.0, 0.5});
    Tensor d({3});
    const double loss = gbx::softmax_loss(z, 1, d);
    const double Z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
    REQUIRE(loss == Catch::Approx(std::log(Z) - 2.0).epsilon(1e-12));
    double dsum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) dsum += d[i];
    REQUIRE(dsum == Catch::Approx(0.0).margin(1e-12));

    Tensor zs = z;
    for (std::size_t i = 0; i < 3; ++i) zs[i] += 100.0;
    Tensor d2({3});
    REQUIRE(gbx::softmax_loss(zs, 1, d2) == Catch::Approx(loss).epsilon(1e-9));

    Tensor fd = central_diff(
        [&](const Tensor& t) {
            Tensor scratch({3});
            return gbx::softmax_loss(t, 1, scratch);
        },
        z);
    REQUIRE(max_abs_diff(d, fd) < 1e-8);
}

TEST_CASE("logistic loss value and gradient") {
    Tensor z = Tensor::from({2}, {0.3, -0.7});
    Tensor d({2});
    const double loss = gbx::logistic_loss(z, 0, d);
    const double expect = (std::log1p(std::exp(-0.3)) + std::log1p(std::exp(-0.7))) / 2.0;
    REQUIRE(loss == Catch::Approx(expect).epsilon(1e-12));

    Tensor fd = central_diff(
        [&](const Tensor& t) {
            Tensor scratch({2});
            return gbx::logistic_loss(t, 0, scratch);
        },
        z);
    REQUIRE(max_abs_diff(d, fd) < 1e-8);

    Tensor big = Tensor::from({2}, {800.0, -800.0});
    Tensor d3({2});
    REQUIRE(std::isfinite(gbx::logistic_loss(big, 0, d3)));
}

TEST_CASE("task_loss dispatches on kind") {
    Tensor z = Tensor::from({2}, {0.1, 0.9});
    Tensor d1({2}), d2({2});
    REQUIRE(gbx::task_loss(z, 0, gbx::TaskLossKind::softmax_multiclass, d1) ==
            gbx::softmax_loss(z, 0, d2));
    REQUIRE(gbx::task_loss(z, 0, gbx::TaskLossKind::logistic_binary, d1) ==
            gbx::logistic_loss(z, 0, d2));
}

TEST_CASE("sgd_step basics") {
    Tensor p = Tensor::from({2}, {1.0, -1.0});
    Tensor v({2});
    Tensor zero({2});
    Tensor p0 = p;
    gbx::sgd_step(p, v, zero, 0.1, 0.9, "t");
    REQUIRE(max_abs_diff(p, p0) == 0.0);  // zero gradient, zero velocity

    Tensor g = Tensor::from({2}, {0.5, -0.25});
    Tensor v2({2});
    gbx::sgd_step(p, v2, g, 0.1, 0.0, "t");
    REQUIRE(p[0] == Catch::Approx(1.0 - 0.1 * 0.5));
    REQUIRE(p[1] == Catch::Approx(-1.0 + 0.1 * 0.25));
}

TEST_CASE("sgd_step momentum matches the hand-unrolled recurrence") {
    Tensor p = Tensor::from({1}, {2.0});
    Tensor v({1});
    Tensor g1 = Tensor::from({1}, {0.4});
    Tensor g2 = Tensor::from({1}, {-0.2});
    const double lr = 0.05, m = 0.9;
    gbx::sgd_step(p, v, g1, lr, m, "t");
    gbx::sgd_step(p, v, g2, lr, m, "t");
    // v1 = g1; p1 = p0 - lr v1; v2 = m v1 + g2; p2 = p1 - lr v2
    const double v1 = 0.4, p1 = 2.0 - lr * v1;
    const double v2 = m * v1 - 0.2, p2 = p1 - lr * v2;
    REQUIRE(v[0] == Catch::Approx(v2).epsilon(1e-15));
    REQUIRE(p[0] == Catch::Approx(p2).epsilon(1e-15));
}

TEST_CASE("sgd_step rejects non-finite values") {
    Tensor p = Tensor::from({1}, {1.0});
    Tensor v({1});
    Tensor g = Tensor::from({1}, {std::nan("")});
    REQUIRE_THROWS_AS(gbx::sgd_step(p, v, g, 0.1, 0.0, "t"), gbx::DivergenceError);
}

TEST_CASE("shape preconditions throw") {
    Tensor a({2, 2}), b({3, 3});
    REQUIRE_THROWS_AS(gbx::add_scaled(a, b, 1.0), std::invalid_argument);
    Tensor in({2, 3});  // rank 2, conv needs rank 3
    Tensor w({1, 2, 3, 3}), bias({1});
    REQUIRE_THROWS_AS(gbx::conv2d_forward(in, w, bias, 1, 0), std::invalid_argument);
}
