#include <catch2/catch_amalgamated.hpp>

#include "byzfed/adversary.hpp"

using namespace byzfed;

namespace {

AttackSpec make_spec(double pa, double var, std::vector<std::uint8_t> byz) {
    AttackSpec a;
    a.attack_prob = pa;
    a.attack_var = var;
    a.byzantine = std::move(byz);
    return a;
}

}  // namespace

TEST_CASE("zero attack probability never perturbs") {
    RngStream rng(1);
    AttackSpec a = make_spec(0.0, 1.0, {1});
    Vector w(3);
    w << 1.0, -2.0, 0.5;
    for (int i = 0; i < 100; ++i) REQUIRE(corrupt_model(w, 0, a, rng) == w);
}

TEST_CASE("zero attack strength never perturbs") {
    RngStream rng(2);
    AttackSpec a = make_spec(1.0, 0.0, {1});
    Vector w(3);
    w << 1.0, -2.0, 0.5;
    for (int i = 0; i < 100; ++i) REQUIRE(corrupt_model(w, 0, a, rng) == w);
}

TEST_CASE("honest clients are never perturbed") {
    RngStream rng(3);
    AttackSpec a = make_spec(1.0, 1.0, {0, 1});
    Vector w = Vector::Ones(4);
    for (int i = 0; i < 100; ++i) REQUIRE(corrupt_model(w, 0, a, rng) == w);
}

TEST_CASE("perturbation energy matches D * attack variance") {
    RngStream rng(4);
    const int D = 5, n = 100000;
    const double var = 0.25;
    AttackSpec a = make_spec(1.0, var, {1});
    Vector w = Vector::Zero(D);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double e = (corrupt_model(w, 0, a, rng) - w).squaredNorm();
        sum += e;
        sumsq += e * e;
    }
    const double mean = sum / n;
    const double expected = D * var;  // chi-square with D degrees of freedom
    const double se = std::sqrt((sumsq / n - mean * mean) / n);
    REQUIRE(std::abs(mean - expected) < 3 * se);
}

TEST_CASE("attack frequency matches the attack probability") {
    RngStream rng(5);
    const int n = 100000;
    const double pa = 0.2;
    AttackSpec a = make_spec(pa, 1.0, {1});
    Vector w = Vector::Zero(3);
    long perturbed = 0;
    for (int i = 0; i < n; ++i)
        if (corrupt_model(w, 0, a, rng) != w) perturbed += 1;
    REQUIRE(std::abs(perturbed / double(n) - pa) < 3 * std::sqrt(pa * (1 - pa) / n));
}

TEST_CASE("second moment of the injected perturbation matches its closed form") {
    RngStream rng(6);
    const int D = 3, n = 100000;
    const double pa = 0.3, var = 0.5;
    AttackSpec a = make_spec(pa, var, {1});
    Vector w = Vector::Zero(D);
    Matrix sum = Matrix::Zero(D, D), sumsq = Matrix::Zero(D, D);
    for (int i = 0; i < n; ++i) {
        Vector delta = corrupt_model(w, 0, a, rng) - w;
        Matrix outer = delta * delta.transpose();
        sum += outer;
        sumsq += outer.cwiseAbs2();
    }
    // expectation over both the Bernoulli gate and the Gaussian: pa*var*I
    for (int r = 0; r < D; ++r)
        for (int c = 0; c < D; ++c) {
            const double mean = sum(r, c) / n;
            const double expected = r == c ? pa * var : 0.0;
            const double se =
                std::sqrt(std::max(0.0, sumsq(r, c) / n - mean * mean) / n);
            REQUIRE(std::abs(mean - expected) < 3 * se + 1e-12);
        }
}

TEST_CASE("negative attack variance is a configuration error") {
    RngStream rng(7);
    AttackSpec a = make_spec(0.5, -1.0, {1});
    Vector w = Vector::Zero(2);
    REQUIRE_THROWS_AS(corrupt_model(w, 0, a, rng), ConfigError);
}
