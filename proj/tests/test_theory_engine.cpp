#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include "byzfed/theory.hpp"

using namespace byzfed;

namespace {

TheorySpec engine_spec(int K, int D, int M, int s) {
    TheorySpec sp;
    sp.clients = K;
    sp.dim = D;
    sp.shared = M;
    sp.round_size = s;
    sp.input_var.resize(K);
    for (int k = 0; k < K; ++k) sp.input_var[k] = 0.4 + 0.7 * k / std::max(1, K - 1);
    sp.noise_var = Vector::Constant(K, 0.01);
    sp.byzantine.assign(K, 0);
    sp.true_model = Vector::Constant(D, 1.0 / std::sqrt(double(D)));
    return sp;
}

double dense_spectral_radius(const SpMat& F) {
    Eigen::EigenSolver<Matrix> es(Matrix(F), false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("transition operator polynomial structure") {
    TheorySpec sp = engine_spec(3, 2, 1, 2);
    MomentBundle b = build_bundle(sp);
    const double mu = 0.08;

    SECTION("zero stepsize leaves the product of the two second moments") {
        Matrix f0 = Matrix(build_transition(b, 0.0));
        Matrix expect = Matrix(b.aggregate_sq) * Matrix(b.combine_sq);
        REQUIRE(f0.isApprox(expect, 1e-13));
    }
    SECTION("linear coefficient is the curvature sandwich") {
        // F(mu) - F(0) + mu*QB*K*QA - mu^2*QB*H*QA = 0
        Matrix f = Matrix(build_transition(b, mu));
        Matrix f0 = Matrix(build_transition(b, 0.0));
        Matrix lin = Matrix(b.aggregate_sq) * Matrix(b.curvature) * Matrix(b.combine_sq);
        Matrix quad = Matrix(b.aggregate_sq) * Matrix(b.fourth_moment) * Matrix(b.combine_sq);
        REQUIRE((f - f0 + mu * lin - mu * mu * quad).isZero(1e-12));
    }
    SECTION("small-stepsize mode differs by exactly the quadratic term") {
        Matrix full = Matrix(build_transition(b, mu, false));
        Matrix ssa = Matrix(build_transition(b, mu, true));
        Matrix quad = Matrix(b.aggregate_sq) * Matrix(b.fourth_moment) * Matrix(b.combine_sq);
        REQUIRE((full - ssa - mu * mu * quad).isZero(1e-12));
    }
}

TEST_CASE("mean stability bound") {
    TheorySpec sp = engine_spec(4, 3, 2, 2);
    sp.input_var << 0.5, 1.2, 0.9, 0.3;
    REQUIRE(mean_stability_bound(sp) == Catch::Approx(2.0 / 1.2));
    sp.input_var.setOnes();
    REQUIRE(mean_stability_bound(sp) == Catch::Approx(2.0));
    // independent of K and M: only the largest variance matters
    TheorySpec other = engine_spec(9, 3, 3, 5);
    other.input_var.setConstant(1.2);
    REQUIRE(mean_stability_bound(other) == Catch::Approx(2.0 / 1.2));
}

TEST_CASE("mean-square stability bound keeps the spectral radius below one") {
    TheorySpec sp = engine_spec(5, 3, 1, 2);
    MomentBundle b = build_bundle(sp);
    const double bound = mean_square_stability_bound(b);
    REQUIRE(bound > 0.0);
    for (double f : {0.25, 0.5, 0.75, 0.99}) {
        const double rho = dense_spectral_radius(build_transition(b, f * bound));
        INFO("fraction " << f << " rho " << rho);
        REQUIRE(rho < 1.0);
    }
}

TEST_CASE("doubling all input variances exactly halves the mean-square bound") {
    TheorySpec sp = engine_spec(4, 3, 2, 2);
    MomentBundle b1 = build_bundle(sp);
    TheorySpec sp2 = sp;
    sp2.input_var *= 2.0;
    MomentBundle b2 = build_bundle(sp2);
    REQUIRE(mean_square_stability_bound(b2) ==
            Catch::Approx(0.5 * mean_square_stability_bound(b1)).epsilon(1e-12));
}

TEST_CASE("msd recursion trace") {
    TheorySpec sp = engine_spec(3, 2, 1, 2);
    sp.byzantine = {1, 0, 0};
    sp.attack_prob = 0.25;
    sp.attack_var = 0.4;
    MomentBundle b = build_bundle(sp);
    const double mu = 0.15;
    const BlockLayout lay = sp.layout();
    // plain deviation energy weighting
    Matrix eye = Matrix::Identity(lay.blocks * lay.dim, lay.blocks * lay.dim);
    const Vector sigma = bvec(eye, lay.dim);

    SECTION("pure contraction decays monotonically to zero") {
        TheorySpec clean = sp;
        clean.noise_var.setZero();
        clean.byzantine.assign(3, 0);
        MomentBundle bc = build_bundle(clean);
        auto trace = msd_trace(bc, mu, sigma, 3000);
        for (std::size_t i = 1; i < trace.size(); ++i)
            REQUIRE(trace[i] <= trace[i - 1] + 1e-12);
        REQUIRE(trace.back() < 1e-6 * trace.front());
    }
    SECTION("trace limit matches the closed-form fixed point") {
        auto trace = msd_trace(b, mu, sigma, 6000);
        const Vector z = solve_steady_system(build_transition(b, mu), sigma, 1e-12);
        const double limit = mu * mu * b.phi.dot(z) + b.omega.dot(z);
        REQUIRE(std::abs(trace.back() - limit) < 1e-6 * std::abs(limit));
    }
    SECTION("attack strictly raises the limit") {
        TheorySpec clean = sp;
        clean.byzantine.assign(3, 0);
        MomentBundle bc = build_bundle(clean);
        auto with_attack = msd_trace(b, mu, sigma, 6000);
        auto without = msd_trace(bc, mu, sigma, 6000);
        REQUIRE(with_attack.back() > without.back());
    }
}

TEST_CASE("steady-state MSE decomposition") {
    TheorySpec sp = engine_spec(4, 3, 1, 2);
    sp.byzantine = {1, 1, 0, 0};
    sp.attack_prob = 0.2;
    sp.attack_var = 0.5;
    MomentBundle b = build_bundle(sp);
    const double mu = 0.1;

    SECTION("terms are nonnegative and sum to the total") {
        MseDecomposition m = steady_state_mse(b, mu);
        REQUIRE(m.e_phi >= 0.0);
        REQUIRE(m.e_omega > 0.0);
        REQUIRE(m.e_theta == Catch::Approx(sp.noise_var.sum() / sp.clients));
        REQUIRE(m.total == m.e_phi + m.e_omega + m.e_theta);
    }
    SECTION("no attack zeroes the attack term exactly") {
        TheorySpec clean = sp;
        clean.byzantine.assign(4, 0);
        MseDecomposition m = steady_state_mse(build_bundle(clean), mu);
        REQUIRE(m.e_omega == 0.0);
    }
    SECTION("noise floor is independent of stepsize and mask width") {
        MseDecomposition a = steady_state_mse(b, 0.05);
        TheorySpec wide = sp;
        wide.shared = 3;
        MseDecomposition c = steady_state_mse(build_bundle(wide), 0.1);
        REQUIRE(a.e_theta == c.e_theta);
    }
    SECTION("unstable stepsize raises an instability error carrying the radius") {
        const double bound = mean_square_stability_bound(b);
        try {
            steady_state_mse(b, 5.0 * bound);
            FAIL("expected instability");
        } catch (const InstabilityError& e) {
            REQUIRE(e.spectral_radius >= 1.0);
        }
    }
    SECTION("matches the limit of the trace-based estimate") {
        const Vector sigma = b.combine_sq.transpose() * b.cov_bvec;
        auto trace = msd_trace(b, mu, sigma, 8000);
        const double mse_from_trace =
            (trace.back() + sp.noise_var.sum()) / sp.clients;
        MseDecomposition m = steady_state_mse(b, mu);
        REQUIRE(std::abs(mse_from_trace - m.total) < 1e-6 * m.total);
    }
}

TEST_CASE("attack term monotonicity in the attack parameters") {
    TheorySpec sp = engine_spec(4, 3, 1, 2);
    sp.byzantine = {1, 0, 0, 0};
    sp.attack_prob = 0.2;
    sp.attack_var = 0.3;
    const double mu = 0.1;

    auto term = [&](TheorySpec s) { return steady_state_mse(build_bundle(s), mu).e_omega; };

    SECTION("in attack variance") {
        double prev = -1.0;
        for (double v : {0.1, 0.4, 0.8}) {
            TheorySpec s = sp;
            s.attack_var = v;
            const double e = term(s);
            REQUIRE(e >= prev);
            prev = e;
        }
    }
    SECTION("in attack probability") {
        double prev = -1.0;
        for (double p : {0.1, 0.5, 0.9}) {
            TheorySpec s = sp;
            s.attack_prob = p;
            const double e = term(s);
            REQUIRE(e >= prev);
            prev = e;
        }
    }
    SECTION("in the number of Byzantine clients") {
        double prev = -1.0;
        for (int n : {1, 2, 4}) {
            TheorySpec s = sp;
            for (int k = 0; k < 4; ++k) s.byzantine[k] = k < n;
            const double e = term(s);
            REQUIRE(e >= prev);
            prev = e;
        }
    }
}

TEST_CASE("partial sharing damps the attack term and inflates the gradient term") {
    TheorySpec sp = engine_spec(5, 5, 1, 2);
    sp.byzantine = {1, 1, 0, 0, 0};
    sp.attack_prob = 0.2;
    sp.attack_var = 0.5;
    const double mu = 0.1;
    MseDecomposition narrow = steady_state_mse(build_bundle(sp), mu);
    TheorySpec full = sp;
    full.shared = 5;
    MseDecomposition wide = steady_state_mse(build_bundle(full), mu);
    REQUIRE(narrow.e_omega < wide.e_omega);
    REQUIRE(narrow.e_phi > wide.e_phi);
}

namespace {

// Literal dense evaluation of the truncated-series stepsize formula, kept
// independent of the matrix-free recursion path it checks.
double dense_series_stepsize(const MomentBundle& b, int J) {
    Matrix QA = Matrix(b.combine_sq), QB = Matrix(b.aggregate_sq);
    Matrix Kv = Matrix(b.curvature), Hm = Matrix(b.fourth_moment);
    Matrix A0 = QA.transpose() * QB.transpose();
    Matrix A1 = QA.transpose() * Kv * QB.transpose();
    Matrix A2 = QA.transpose() * Hm * QB.transpose();
    const long n = A0.rows();
    auto mpow = [&](const Matrix& M, int p) {
        Matrix r = Matrix::Identity(n, n);
        for (int i = 0; i < p; ++i) r = r * M;
        return r;
    };
    auto B0 = [&](int m) {
        Matrix r = Matrix::Zero(n, n);
        for (int j = 0; j <= m; ++j) r += mpow(A0, j);
        return r;
    };
    auto B1 = [&](int m) {
        Matrix r = Matrix::Zero(n, n);
        for (int j = 1; j <= m; ++j) r += mpow(A0, j - 1) * A1 * B0(m - j);
        return r;
    };
    std::vector<Matrix> C(J + 1, Matrix::Zero(n, n));
    C[2] = A1 * A1;
    for (int j = 3; j <= J; ++j) {
        Matrix mj = Matrix::Zero(n, n);
        for (int r = 1; r <= j; ++r) mj += mpow(A0, r - 1) * A1 * mpow(A0, j - r);
        C[j] = C[j - 1] * A0 + mj * A1;
    }
    Matrix B2 = B1(J - 1) * A1;
    for (int j = 1; j <= J; ++j) B2 += mpow(A0, j - 1) * A2 * B0(J - j);
    for (int j = 3; j <= J; ++j) B2 += C[j];
    Vector q = QA.transpose() * b.cov_bvec;
    const double num = b.omega.dot(B1(J) * q);
    const double den = 2.0 * (b.phi.dot(B0(J) * q) + b.omega.dot(B2 * q));
    return num / den;
}

}  // namespace

TEST_CASE("optimal stepsize") {
    SECTION("attack-free case is exactly zero, both routes") {
        TheorySpec sp = engine_spec(4, 3, 1, 2);
        REQUIRE(optimal_stepsize(build_bundle(sp)) == 0.0);
        REQUIRE(optimal_stepsize_series(build_bundle(sp), 5) == 0.0);
        TheorySpec gated = sp;
        gated.byzantine = {1, 1, 0, 0};
        gated.attack_prob = 0.0;
        gated.attack_var = 0.5;
        REQUIRE(optimal_stepsize(build_bundle(gated)) == 0.0);
        REQUIRE(optimal_stepsize_series(build_bundle(gated), 5) == 0.0);
    }
    SECTION("series order below three is rejected") {
        TheorySpec sp = engine_spec(3, 2, 1, 1);
        REQUIRE_THROWS_AS(optimal_stepsize_series(build_bundle(sp), 2), ArgumentError);
    }
    SECTION("series recursion matches a literal dense evaluation") {
        TheorySpec sp = engine_spec(3, 2, 1, 1);
        sp.byzantine = {1, 0, 0};
        sp.attack_prob = 0.3;
        sp.attack_var = 0.4;
        MomentBundle b = build_bundle(sp);
        for (int J : {3, 4, 5, 6})
            REQUIRE(optimal_stepsize_series(b, J) ==
                    Catch::Approx(dense_series_stepsize(b, J)).epsilon(1e-12));
    }
    SECTION("attacked case lands at the minimizer of the predicted MSE") {
        TheorySpec sp = engine_spec(6, 4, 1, 2);
        sp.byzantine.assign(6, 0);
        sp.byzantine[0] = sp.byzantine[1] = 1;
        sp.attack_prob = 0.25;
        sp.attack_var = 0.25;
        MomentBundle b = build_bundle(sp);
        const double star = optimal_stepsize(b);
        REQUIRE(star > 0.0);
        const double at_star = steady_state_mse(b, star).total;
        double best = std::numeric_limits<double>::infinity();
        const double bound = mean_square_stability_bound(b);
        for (int i = 1; i <= 60; ++i) {
            const double mu = 0.9 * bound * i / 60.0;
            best = std::min(best, steady_state_mse(b, mu).total);
        }
        INFO("mu* = " << star << " mse(mu*) = " << at_star << " grid best = " << best);
        REQUIRE(at_star <= 1.005 * best);
    }
}
