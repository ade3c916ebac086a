#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "carft/numerics.hpp"
#include "carft/rng.hpp"

using namespace carft;

TEST_CASE("softmax of equal logits is uniform") {
    const std::vector<double> logits = {0.0, 0.0, 0.0};
    const Vector p = softmax(logits);
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax closed form: (ln 2, 0) -> (2/3, 1/3)") {
    const std::vector<double> logits = {std::log(2.0), 0.0};
    const Vector p = softmax(logits);
    CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax is invariant under exact constant shifts") {
    const std::vector<double> logits = {0.5, 1.25, -2.0, 3.0};
    std::vector<double> shifted = logits;
    for (double& v : shifted) v += 8.0;  // exact in binary floating point
    CHECK(softmax(logits) == softmax(shifted));
}

TEST_CASE("softmax sums to one over random inputs") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(12);
        std::vector<double> logits(n);
        for (double& v : logits) v = rng.normal(0.0, 50.0);
        const Vector p = softmax(logits);
        double total = 0.0;
        for (double v : p) {
            CHECK(v > 0.0);
            CHECK(v <= 1.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax rejects bad input") {
    CHECK_THROWS_AS(softmax(std::vector<double>{}), NumericError);
    CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::nan("")}), NumericError);
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(softmax(std::vector<double>{1.0, inf}), NumericError);
}

TEST_CASE("l2_normalize_columns basics") {
    Matrix m = Matrix::from_rows({{3.0, 1.0}, {4.0, 0.0}});
    const Matrix out = l2_normalize_columns(m);
    CHECK(out(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out(1, 0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(out(0, 1) == 1.0);
    CHECK(out(1, 1) == 0.0);
}

TEST_CASE("l2_normalize_columns is idempotent") {
    Rng rng(11);
    Matrix m(6, 5);
    for (double& v : m.values()) v = rng.normal(0.0, 2.0);
    const Matrix once = l2_normalize_columns(m);
    const Matrix twice = l2_normalize_columns(once);
    for (std::size_t i = 0; i < once.size(); ++i)
        CHECK(std::abs(once.values()[i] - twice.values()[i]) <= 1e-12);
}

TEST_CASE("l2_normalize_columns names the degenerate column") {
    Matrix m = Matrix::from_rows({{1.0, 0.0}, {0.0, 0.0}});
    CHECK_THROWS_WITH_AS(l2_normalize_columns(m), doctest::Contains("column 1"), NumericError);
}

TEST_CASE("kl_divergence closed forms") {
    CHECK(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}) == 0.0);
    CHECK(kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.25, 0.75}) ==
          doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("kl_divergence is nonnegative and zero on identical inputs") {
    Rng rng(13);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(8);
        std::vector<double> a(n), b(n);
        for (double& v : a) v = -50.0 * rng.uniform();
        for (double& v : b) v = -50.0 * rng.uniform();
        const Vector p = softmax(a);
        const Vector q = softmax(b);
        CHECK(kl_divergence(p, q) >= 0.0);
        CHECK(kl_divergence(p, p) == 0.0);
    }
}

TEST_CASE("kl_divergence validates its inputs") {
    CHECK_THROWS_AS(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0}),
                    NumericError);
    CHECK_THROWS_AS(kl_divergence(std::vector<double>{0.7, 0.7}, std::vector<double>{0.5, 0.5}),
                    NumericError);
}

TEST_CASE("cross_entropy closed forms") {
    CHECK(cross_entropy(std::vector<double>{0.0, 0.0}, 0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(cross_entropy(std::vector<double>{std::log(3.0), 0.0}, 1) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy survives huge logits without overflow") {
    const double loss = cross_entropy(std::vector<double>{1000.0, 0.0}, 0);
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross_entropy rejects out-of-range labels") {
    CHECK_THROWS_AS(cross_entropy(std::vector<double>{0.0, 0.0}, 2), NumericError);
}

TEST_CASE("grad_check validates a quadratic") {
    const std::vector<double> w = {1.0, 2.0};
    const std::vector<double> analytic = {2.0, 4.0};
    auto f = [](std::span<const double> p) {
        double s = 0.0;
        for (double v : p) s += v * v;
        return s;
    };
    CHECK(grad_check(f, w, analytic, 1e-5) < 1e-8);
}

TEST_CASE("grad_check on a constant function") {
    const std::vector<double> w = {0.3, -0.7, 2.0};
    const std::vector<double> analytic = {0.0, 0.0, 0.0};
    auto f = [](std::span<const double>) { return 4.25; };
    CHECK(grad_check(f, w, analytic, 1e-5) < 1e-10);
}

TEST_CASE("grad_check flags wrong gradients and bad h") {
    const std::vector<double> w = {1.0};
    const std::vector<double> wrong = {5.0};
    auto f = [](std::span<const double> p) { return p[0] * p[0]; };
    CHECK(grad_check(f, w, wrong, 1e-5) > 0.5);
    CHECK_THROWS_AS(grad_check(f, w, wrong, 1e-8), NumericError);
    CHECK_THROWS_AS(grad_check(f, w, wrong, 1e-2), NumericError);
    auto bad = [](std::span<const double>) { return std::nan(""); };
    CHECK_THROWS_AS(grad_check(bad, w, wrong, 1e-5), NumericError);
}
