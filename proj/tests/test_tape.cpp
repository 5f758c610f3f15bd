#include <doctest.h>

#include <cmath>
#include <functional>

#include "coms2t/tape.hpp"

using namespace coms2t;

namespace {

/// Central finite differences against the analytic gradient of a scalar
/// loss built by `build` from one parameter array.
double max_rel_grad_err(NDArray value,
                        const std::function<ad::Tape::Var(ad::Tape&, ad::Tape::Var)>& build,
                        double h = 1e-5) {
    NDArray grad(value.shape());
    {
        ad::Tape tape;
        auto p = tape.param(value, &grad);
        tape.backward(build(tape, p));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
        auto eval = [&](double delta) {
            NDArray v = value;
            v[i] += delta;
            NDArray g(v.shape());
            ad::Tape tape;
            auto p = tape.param(v, &g);
            return tape.val(build(tape, p))[0];
        };
        double fd = (eval(h) - eval(-h)) / (2.0 * h);
        double denom = std::max({std::fabs(fd), std::fabs(grad[i]), 1e-8});
        worst = std::max(worst, std::fabs(fd - grad[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("softplus at zero is ln 2") {
    ad::Tape tape;
    auto v = tape.softplus(tape.input(NDArray::scalar(0.0)));
    CHECK(tape.val(v)[0] == doctest::Approx(0.6931471805599453).epsilon(1e-12));
}

TEST_CASE("mae subgradient at zero error is zero") {
    NDArray value({2}, {1.0, 2.0});
    NDArray grad({2});
    ad::Tape tape;
    auto p = tape.param(value, &grad);
    auto loss = tape.mae(p, NDArray({2}, {1.0, 5.0}));
    tape.backward(loss);
    CHECK(grad[0] == 0.0);             // |0| kink resolved to 0
    CHECK(grad[1] == doctest::Approx(-0.5));
    CHECK(tape.val(loss)[0] == doctest::Approx(1.5));
}

TEST_CASE("matmul value and gradient") {
    NDArray a({2, 2}, {1, 2, 3, 4});
    NDArray b({2, 2}, {5, 6, 7, 8});
    ad::Tape tape;
    auto m = tape.matmul(tape.input(a), tape.input(b));
    CHECK(tape.val(m).at(0, std::size_t{0}) == 19);
    CHECK(tape.val(m).at(1, 1) == 50);
    CHECK(max_rel_grad_err(a, [&](ad::Tape& t, ad::Tape::Var p) {
              return t.sse(t.matmul(p, t.input(b)), NDArray({2, 2}));
          }) < 1e-6);
}

TEST_CASE("row softmax rows sum to one and gradients check out") {
    NDArray a({3, 3}, {0.3, -1.2, 0.7, 2.0, 0.1, -0.5, 0.0, 0.0, 0.0});
    ad::Tape tape;
    auto s = tape.row_softmax(tape.input(a));
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) sum += tape.val(s).at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    NDArray target({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(max_rel_grad_err(a, [&](ad::Tape& t, ad::Tape::Var p) {
              return t.sse(t.row_softmax(p), target);
          }) < 1e-6);
}

TEST_CASE("causal convolution never reads padding or the future") {
    // Single kernel [0, 0, 1] with width 3 selects the current step.
    NDArray x({1, 4, 1, 1}, {1, 2, 3, 4});
    NDArray k({3, 1, 1}, {0, 0, 1});
    ad::Tape tape;
    auto y = tape.causal_conv(tape.input(x), tape.input(k), 1);
    for (std::size_t t = 0; t < 4; ++t)
        CHECK(tape.val(y).at(std::size_t{0}, t, std::size_t{0}, std::size_t{0}) ==
              doctest::Approx(x.at(std::size_t{0}, t, std::size_t{0}, std::size_t{0})));

    // Kernel [1, 0, 0] reaches two steps back; the first outputs see only
    // zero padding.
    NDArray k2({3, 1, 1}, {1, 0, 0});
    ad::Tape tape2;
    auto y2 = tape2.causal_conv(tape2.input(x), tape2.input(k2), 1);
    CHECK(tape2.val(y2).at(std::size_t{0}, std::size_t{0}, std::size_t{0}, std::size_t{0}) == 0.0);
    CHECK(tape2.val(y2).at(std::size_t{0}, 3, std::size_t{0}, std::size_t{0}) ==
          doctest::Approx(2.0));
}

TEST_CASE("causal convolution gradient matches finite differences") {
    NDArray k({2, 2, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8});
    NDArray x({1, 3, 2, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i) - 0.4;
    NDArray target({1, 3, 2, 2});
    CHECK(max_rel_grad_err(k, [&](ad::Tape& t, ad::Tape::Var p) {
              return t.sse(t.causal_conv(t.input(x), p, 2), target);
          }) < 1e-6);
}

TEST_CASE("cin_pool matches the hand formula") {
    // out[m,h] = sum_e sum_{i,j} W[h,i,j] z_i[m,e] z_j[m,e]
    NDArray a({1, 2}, {1.0, 2.0});
    NDArray b({1, 2}, {3.0, -1.0});
    NDArray w({1, 2, 2}, {0.5, 1.0, -1.0, 0.25});
    ad::Tape tape;
    auto out = tape.cin_pool(tape.input(a), tape.input(b), tape.input(w));
    double hand = 0.0;
    for (int e = 0; e < 2; ++e) {
        double za = a[static_cast<std::size_t>(e)], zb = b[static_cast<std::size_t>(e)];
        hand += 0.5 * za * za + 1.0 * za * zb + (-1.0) * zb * za + 0.25 * zb * zb;
    }
    CHECK(tape.val(out).at(std::size_t{0}, std::size_t{0}) == doctest::Approx(hand).epsilon(1e-12));
    CHECK(max_rel_grad_err(w, [&](ad::Tape& t, ad::Tape::Var p) {
              return t.sse(t.cin_pool(t.input(a), t.input(b), p), NDArray({1, 1}));
          }) < 1e-6);
    CHECK(max_rel_grad_err(a, [&](ad::Tape& t, ad::Tape::Var p) {
              return t.sse(t.cin_pool(p, t.input(b), t.input(w)), NDArray({1, 1}));
          }) < 1e-6);
}

TEST_CASE("broadcast adds place their values where expected") {
    NDArray x({2, 2, 2, 2});
    NDArray vn({2, 2}, {1, 2, 3, 4});    // per node
    NDArray vt({2, 2}, {10, 20, 30, 40});  // per step
    ad::Tape tape;
    auto xn = tape.add_node_broadcast(tape.input(x), tape.input(vn));
    CHECK(tape.val(xn).at(1, 1, 1, std::size_t{0}) == 3.0);
    auto xt = tape.add_step_broadcast(tape.input(x), tape.input(vt));
    CHECK(tape.val(xt).at(1, 1, std::size_t{0}, 1) == 40.0);
    NDArray vbt({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});  // per sample-step
    auto xb = tape.add_sample_step_broadcast(tape.input(x), tape.input(vbt));
    CHECK(tape.val(xb).at(1, std::size_t{0}, 1, 1) == 6.0);
}

TEST_CASE("concat and slice of columns round-trip") {
    NDArray a({2, 2}, {1, 2, 3, 4});
    NDArray b({2, 1}, {9, 8});
    ad::Tape tape;
    auto cat = tape.concat_cols(tape.input(a), tape.input(b));
    CHECK(tape.val(cat).at(std::size_t{0}, 2) == 9.0);
    auto back = tape.slice_cols(cat, 0, 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(tape.val(back)[i] == a[i]);
}

TEST_CASE("composite expression gradient survives reuse of nodes") {
    NDArray v({3}, {0.2, -0.7, 1.1});
    CHECK(max_rel_grad_err(v, [](ad::Tape& t, ad::Tape::Var p) {
              auto s = t.mul(t.relu(p), t.softplus(p));
              return t.sum(t.square(s));
          }) < 1e-5);
}
