#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fgloc/gradcheck.hpp"
#include "fgloc/rng.hpp"
#include "fgloc/tensor.hpp"

using namespace fgloc;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = uniform(rng, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("backward: x*x at x=3 gives grad 6") {
    Tensor<double> x = Tensor<double>::scalar(3.0);
    x.set_requires_grad(true);
    auto f = mul(x, x);
    backward(f);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward: sum gives all-ones grad") {
    Rng rng(7);
    auto x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: sigmoid at 0 gives grad 0.25") {
    Tensor<double> x = Tensor<double>::scalar(0.0);
    x.set_requires_grad(true);
    backward(sigmoid(x));
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar root") {
    Tensor<double> x({2, 2}, 1.0);
    x.set_requires_grad(true);
    auto y = relu(x);
    CHECK_THROWS_AS(backward(y), ShapeError);
}

TEST_CASE("gradients accumulate across repeated backward calls") {
    Tensor<double> x = Tensor<double>::scalar(2.0);
    x.set_requires_grad(true);
    auto f = mul(x, x);
    backward(f);
    backward(f);
    CHECK(x.grad()[0] == doctest::Approx(8.0));
    x.zero_grad();
    backward(f);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("backward is linear over graph sums") {
    Rng rng(11);
    auto x = random_tensor({5}, rng);
    x.set_requires_grad(true);

    auto f = sum(mul(x, x));
    auto g = sum(sigmoid(x));
    backward(add(f, g));
    auto combined = x.grad();

    x.zero_grad();
    backward(f);
    auto gf = x.grad();
    x.zero_grad();
    backward(g);
    auto gg = x.grad();

    for (std::size_t i = 0; i < combined.size(); ++i)
        CHECK(combined[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-12));
}

TEST_CASE("primitive forward values") {
    CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);
    CHECK(sum(Tensor<double>({4}, 1.0)).item() == 4.0);

    Tensor<double> a({2, 2, 32}, 1.0), b({2, 2, 32}, 2.0);
    auto c = concat(a, b, 2);
    CHECK(c.shape() == Shape{2, 2, 64});
    CHECK(c.data()[0] == 1.0);
    CHECK(c.data()[32] == 2.0);
    CHECK(c.data()[64] == 1.0);
}

TEST_CASE("shape and domain errors") {
    Tensor<double> a({2, 3}), b({3, 2});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(mul(a, b), ShapeError);
    CHECK_THROWS_AS(concat(a, b, 0), ShapeError);
    CHECK_THROWS_AS(reshape(a, {7}), ShapeError);
    CHECK_THROWS_AS(slice(a, 0, 1, 5), ShapeError);
    CHECK_THROWS_AS(log(Tensor<double>::scalar(0.0)), NumericError);
    CHECK_THROWS_AS(log(Tensor<double>::scalar(-1.0)), NumericError);
}

TEST_CASE("reshape and slice round-trip bit-exactly") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_tensor({4, 6, 2}, rng);
        auto r = reshape(reshape(x, {8, 6}), {4, 6, 2});
        CHECK(r.values() == x.values());

        auto left = slice(x, 1, 0, 3);
        auto right = slice(x, 1, 3, 3);
        auto joined = concat(left, right, 1);
        CHECK(joined.values() == x.values());
    }
}

TEST_CASE("finite_diff_check: linear map is exact") {
    Rng rng(5);
    auto x = random_tensor({6}, rng);
    double err = finite_diff_check([](const Tensor<double>& t) { return scale(t, 3.5); }, x);
    CHECK(err <= 1e-10);
}

TEST_CASE("finite_diff_check: relu away from the kink") {
    Rng rng(9);
    Tensor<double> x({8});
    for (auto& v : x.values()) {
        v = uniform(rng, 0.1, 1.0);
        if (uniform(rng, 0, 1) < 0.5) v = -v;
    }
    double err = finite_diff_check([](const Tensor<double>& t) { return relu(t); }, x);
    CHECK(err < 1e-6);
}

TEST_CASE("finite_diff_check over 100 seeds for every primitive") {
    for (unsigned seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        auto x = random_tensor({3, 4}, rng, 0.1, 2.0);  // positive: also valid for log
        auto other = random_tensor({3, 4}, rng);

        CHECK(finite_diff_check([&](const Tensor<double>& t) { return add(t, other); }, x) < 1e-4);
        CHECK(finite_diff_check([&](const Tensor<double>& t) { return mul(t, other); }, x) < 1e-4);
        CHECK(finite_diff_check([](const Tensor<double>& t) { return scale(t, -0.7); }, x) < 1e-4);
        CHECK(finite_diff_check([](const Tensor<double>& t) { return sum(t); }, x) < 1e-4);
        CHECK(finite_diff_check([](const Tensor<double>& t) { return mean(t); }, x) < 1e-4);
        CHECK(finite_diff_check([](const Tensor<double>& t) { return log(t); }, x) < 1e-4);
        CHECK(finite_diff_check([](const Tensor<double>& t) { return sigmoid(t); }, x) < 1e-4);
        CHECK(finite_diff_check([&](const Tensor<double>& t) { return concat(t, other, 1); }, x) <
              1e-4);
        CHECK(finite_diff_check([](const Tensor<double>& t) { return slice(t, 0, 1, 2); }, x) <
              1e-4);
        CHECK(finite_diff_check([](const Tensor<double>& t) { return reshape(t, {12}); }, x) <
              1e-4);
    }
}

TEST_CASE("non-finite forward values abort with a diagnostic") {
    Tensor<double> big = Tensor<double>::scalar(1e308);
    CHECK_THROWS_AS(mul(big, big), NumericError);
}
