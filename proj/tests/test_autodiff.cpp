#include <doctest.h>

#include <cmath>

#include "certsim/autodiff.hpp"
#include "certsim/errors.hpp"
#include "certsim/rng.hpp"
#include "test_helpers.hpp"

using namespace certsim;

namespace {

// Weighted sum with fixed random weights so gradients are not uniform.
ad::Var weighted_sum(const ad::Var& v, const Tensor& w) {
    return ad::dot(v, ad::Var::constant(w));
}

} // namespace

TEST_CASE("grad_check on the quadratic is near exact") {
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
        const Tensor p = testutil::random_tensor({8}, rng);
        const double err = ad::grad_check(
            [](const ad::Var& x) { return ad::scale(ad::dot(x, x), 0.5); }, p, 1e-5);
        CHECK(err <= 1e-8);
    }
}

TEST_CASE("grad_check on sum(relu) away from kinks") {
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
        const Tensor p = testutil::random_tensor_away_from_zero({12}, rng, 1e-3);
        const double err =
            ad::grad_check([](const ad::Var& x) { return ad::sum(ad::relu(x)); }, p, 1e-5);
        CHECK(err <= 1e-6);
    }
}

TEST_CASE("relu backward is the positivity indicator") {
    ad::Var x = ad::Var::leaf(Tensor::from_data({2}, {-1, 2}));
    ad::Var y = ad::sum(ad::relu(x));
    y.backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("every differentiable op passes grad_check at random points") {
    Rng rng(3);
    const double tol = 1e-5;
    const int points = 100;
    double worst = 0.0;
    auto run = [&worst](const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& p) {
        worst = std::max(worst, ad::grad_check(fn, p, 1e-5));
    };

    for (int i = 0; i < points; ++i) {
        Rng local = rng.fork(i);
        const Tensor w6 = testutil::random_tensor({6}, local);

        run([&](const ad::Var& x) { return weighted_sum(ad::add(x, ad::scale(x, 0.5)), w6); },
            testutil::random_tensor({6}, local));
        run([&](const ad::Var& x) {
            return weighted_sum(ad::sub(ad::mul(x, x), ad::scale(x, 2.0)), w6);
        }, testutil::random_tensor({6}, local));
        run([&](const ad::Var& x) {
            ad::Var denom = ad::add_scalar(ad::mul(x, x), 1.5);
            return weighted_sum(ad::div(x, denom), w6);
        }, testutil::random_tensor({6}, local));
        run([&](const ad::Var& x) { return weighted_sum(ad::exp(ad::scale(x, 0.7)), w6); },
            testutil::random_tensor({6}, local));
        run([&](const ad::Var& x) {
            return weighted_sum(ad::log(ad::add_scalar(ad::mul(x, x), 1.0)), w6);
        }, testutil::random_tensor({6}, local));
        run([&](const ad::Var& x) {
            return weighted_sum(ad::sqrt(ad::add_scalar(ad::mul(x, x), 0.5)), w6);
        }, testutil::random_tensor({6}, local));
        run([&](const ad::Var& x) { return ad::mean(ad::mul(x, x)); },
            testutil::random_tensor({6}, local));
        run([&](const ad::Var& x) { return weighted_sum(ad::abs(x), w6); },
            testutil::random_tensor_away_from_zero({6}, local, 1e-3));
        run([&](const ad::Var& x) { return ad::l2norm(x); },
            testutil::random_tensor_away_from_zero({6}, local, 0.1));

        // dot with two roles of the same leaf
        run([&](const ad::Var& x) { return ad::dot(x, x); }, testutil::random_tensor({6}, local));

        // matmul w.r.t. left then right operand
        const Tensor a23 = testutil::random_tensor({2, 3}, local);
        const Tensor b34 = testutil::random_tensor({3, 4}, local);
        const Tensor w8 = testutil::random_tensor({8}, local);
        run([&](const ad::Var& x) {
            ad::Var prod = ad::matmul(ad::reshape(x, {2, 3}), ad::Var::constant(b34));
            return weighted_sum(ad::reshape(prod, {8}), w8);
        }, testutil::random_tensor({6}, local));
        run([&](const ad::Var& x) {
            ad::Var prod = ad::matmul(ad::Var::constant(a23), ad::reshape(x, {3, 4}));
            return weighted_sum(ad::reshape(prod, {8}), w8);
        }, testutil::random_tensor({12}, local));

        // matvec both sides, transpose
        const Tensor m34 = testutil::random_tensor({3, 4}, local);
        const Tensor w3 = testutil::random_tensor({3}, local);
        run([&](const ad::Var& x) {
            return weighted_sum(ad::matvec(ad::Var::constant(m34), x), w3);
        }, testutil::random_tensor({4}, local));
        run([&](const ad::Var& x) {
            ad::Var mt = ad::transpose(ad::reshape(x, {3, 4}));
            return weighted_sum(ad::matvec(ad::transpose(mt), ad::Var::constant(Tensor::full({4}, 0.5))), w3);
        }, testutil::random_tensor({12}, local));

        // broadcast scalar ops
        run([&](const ad::Var& x) {
            ad::Var s = ad::l2norm(x);
            return ad::sum(ad::div_scalar(ad::mul(x, x), s));
        }, testutil::random_tensor_away_from_zero({6}, local, 0.1));
        run([&](const ad::Var& x) {
            ad::Var s = ad::mean(x);
            return weighted_sum(ad::mul_scalar(x, s), w6);
        }, testutil::random_tensor({6}, local));
    }
    CHECK(worst <= tol);
}

TEST_CASE("conv ops pass grad_check") {
    Rng rng(4);
    double worst = 0.0;
    for (int i = 0; i < 25; ++i) {
        Rng local = rng.fork(i);
        const Tensor kern = testutil::random_tensor({3, 2, 3, 3}, local);
        const Tensor img = testutil::random_tensor({2, 5, 5}, local);
        const Tensor inner = testutil::random_tensor({3, 5, 5}, local);
        const Tensor w_out = testutil::random_tensor({3 * 5 * 5}, local);
        const Tensor w_in = testutil::random_tensor({2 * 5 * 5}, local);

        // conv w.r.t. image
        worst = std::max(worst, ad::grad_check([&](const ad::Var& x) {
            ad::Var z = ad::conv2d_circular(ad::reshape(x, {2, 5, 5}), ad::Var::constant(kern));
            return ad::dot(ad::reshape(z, {75}), ad::Var::constant(w_out));
        }, img.reshaped({50}), 1e-5));
        // conv w.r.t. kernel
        worst = std::max(worst, ad::grad_check([&](const ad::Var& k) {
            ad::Var z = ad::conv2d_circular(ad::Var::constant(img), ad::reshape(k, {3, 2, 3, 3}));
            return ad::dot(ad::reshape(z, {75}), ad::Var::constant(w_out));
        }, kern.reshaped({54}), 1e-5));
        // adjoint w.r.t. activation
        worst = std::max(worst, ad::grad_check([&](const ad::Var& z) {
            ad::Var y = ad::conv2d_adjoint(ad::reshape(z, {3, 5, 5}), ad::Var::constant(kern));
            return ad::dot(ad::reshape(y, {50}), ad::Var::constant(w_in));
        }, inner.reshaped({75}), 1e-5));
        // adjoint w.r.t. kernel
        worst = std::max(worst, ad::grad_check([&](const ad::Var& k) {
            ad::Var y = ad::conv2d_adjoint(ad::Var::constant(inner), ad::reshape(k, {3, 2, 3, 3}));
            return ad::dot(ad::reshape(y, {50}), ad::Var::constant(w_in));
        }, kern.reshaped({54}), 1e-5));
        // kernel self correlation
        const Tensor w_corr = testutil::random_tensor({3 * 3 * 5 * 5}, local);
        worst = std::max(worst, ad::grad_check([&](const ad::Var& k) {
            ad::Var p = ad::kernel_corr(ad::reshape(k, {3, 2, 3, 3}));
            return ad::dot(ad::reshape(p, {3 * 3 * 5 * 5}), ad::Var::constant(w_corr));
        }, kern.reshaped({54}), 1e-5));
        // channel bias and channel scale
        const Tensor bias = testutil::random_tensor({3}, local);
        worst = std::max(worst, ad::grad_check([&](const ad::Var& b) {
            ad::Var z = ad::add_channel_bias(ad::Var::constant(inner), b);
            return ad::dot(ad::reshape(z, {75}), ad::Var::constant(w_out));
        }, bias, 1e-5));
        const Tensor tvec = testutil::random_tensor({3}, local, 0.5, 2.0);
        worst = std::max(worst, ad::grad_check([&](const ad::Var& t) {
            ad::Var z = ad::div_channel(ad::Var::constant(inner), t);
            return ad::dot(ad::reshape(z, {75}), ad::Var::constant(w_out));
        }, tvec, 1e-5));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("spectral_normalize passes grad_check") {
    Rng rng(5);
    double worst = 0.0;
    for (int i = 0; i < 25; ++i) {
        Rng local = rng.fork(i);
        const Tensor w_out = testutil::random_tensor({4 * 6}, local);
        worst = std::max(worst, ad::grad_check([&](const ad::Var& w) {
            ad::Var what = ad::spectral_normalize(ad::reshape(w, {4, 6}));
            return ad::dot(ad::reshape(what, {24}), ad::Var::constant(w_out));
        }, testutil::random_tensor({24}, local), 1e-6));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("backward accumulation is additive across paths") {
    // duplicated-input oracle: g(a, b) = <a, b> with independent leaves, so
    // grad f(x) = g(x, x) must equal grad_a g + grad_b g evaluated at x.
    Rng rng(6);
    const Tensor p = testutil::random_tensor({5}, rng);

    ad::Var x = ad::Var::leaf(p);
    ad::Var y = ad::dot(x, x);
    y.backward();
    const Tensor got = x.grad();

    ad::Var a = ad::Var::leaf(p);
    ad::Var b = ad::Var::leaf(p);
    ad::Var z = ad::dot(a, b);
    z.backward();
    for (size_t i = 0; i < p.size(); ++i) {
        CHECK(got[i] == doctest::Approx(a.grad()[i] + b.grad()[i]).epsilon(1e-14));
    }

    // value used twice through different ops
    ad::Var u = ad::Var::leaf(p);
    ad::Var w = ad::add(ad::sum(ad::mul(u, u)), ad::scale(ad::sum(u), 3.0));
    w.backward();
    for (size_t i = 0; i < p.size(); ++i) {
        CHECK(u.grad()[i] == doctest::Approx(2.0 * p[i] + 3.0).epsilon(1e-14));
    }
}

TEST_CASE("grad_check reports non-finite evaluation") {
    const Tensor p = Tensor::from_data({1}, {-1.0});
    CHECK_THROWS_AS(ad::grad_check([](const ad::Var& x) { return ad::log(x); }, p, 1e-5),
                    NumericError);
}
