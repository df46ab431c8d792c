#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <Eigen/IterativeLinearSolvers>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "byzfed/blockkron.hpp"
#include "byzfed/types.hpp"
#include "byzfed/rng.hpp"

namespace byzfed {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Validated inputs for the closed-form analysis path.
struct TheorySpec {
    int clients = 0;     // K
    int dim = 0;         // D
    int shared = 0;      // M
    int round_size = 0;  // |S_n|
    Vector input_var;    // size K
    Vector noise_var;    // size K
    std::vector<std::uint8_t> byzantine;  // size K
    double attack_prob = 0.0;
    double attack_var = 0.0;
    Vector true_model;

    double share_prob() const { return static_cast<double>(shared) / dim; }
    double select_prob() const { return static_cast<double>(round_size) / clients; }
    BlockLayout layout() const { return BlockLayout{clients + 1, dim}; }
    // Isotropic per-block variance, server block first.
    double block_var(int i) const { return i == 0 ? 0.0 : input_var[i - 1]; }
};

inline TheorySpec theory_view(const NetworkSpec& net) {
    net.validate();
    if (net.mask_mode != MaskMode::kUniformRandom)
        throw UnsupportedLawError(
            "closed-form moment matrices assume the uniform-without-replacement mask law");
    TheorySpec t;
    t.clients = net.clients;
    t.dim = net.dim;
    t.shared = net.shared;
    t.round_size = net.round_size;
    t.input_var.resize(net.clients);
    t.noise_var.resize(net.clients);
    t.byzantine.resize(net.clients);
    for (int k = 0; k < net.clients; ++k) {
        t.input_var[k] = net.client_specs[k].input_variance;
        t.noise_var[k] = net.client_specs[k].noise_variance;
        t.byzantine[k] = net.client_specs[k].byzantine ? 1 : 0;
    }
    t.attack_prob = net.attack_prob;
    t.attack_var = net.attack_var;
    t.true_model = net.true_model;
    return t;
}

namespace moments {

// Second moment of one client's mask across a Kronecker square,
// E[S (x) S] restricted to its D^2 diagonal entries. Entry z = a*D + c is
// the probability that coordinates a and c both sit in the same M-of-D
// uniform draw: p_e when a == c, p_e (M-1)/(D-1) otherwise.
inline Vector mask_pair_diag(int dim, int shared) {
    const double pe = static_cast<double>(shared) / dim;
    const double off = dim == 1 ? pe : pe * (shared - 1) / (dim - 1);
    Vector d(dim * dim);
    for (int a = 0; a < dim; ++a)
        for (int c = 0; c < dim; ++c) d[a * dim + c] = (a == c) ? pe : off;
    return d;
}

// P(two distinct clients are both scheduled) = p_c (s-1)/(K-1).
inline double joint_select_prob(int clients, int round_size) {
    if (clients == 1) return 0.0;
    const double pc = static_cast<double>(round_size) / clients;
    return pc * static_cast<double>(round_size - 1) / (clients - 1);
}

inline void add_diag_const(std::vector<Triplet>& ts, const BlockLayout& lay,
                           int row_pair, int col_pair, double value) {
    if (value == 0.0) return;
    const int d2 = lay.dim * lay.dim;
    const long r0 = static_cast<long>(row_pair) * d2;
    const long c0 = static_cast<long>(col_pair) * d2;
    for (int z = 0; z < d2; ++z) ts.emplace_back(r0 + z, c0 + z, value);
}

inline void add_diag_vec(std::vector<Triplet>& ts, const BlockLayout& lay,
                         int row_pair, int col_pair, const Vector& diag) {
    const int d2 = lay.dim * lay.dim;
    const long r0 = static_cast<long>(row_pair) * d2;
    const long c0 = static_cast<long>(col_pair) * d2;
    for (int z = 0; z < d2; ++z)
        if (diag[z] != 0.0) ts.emplace_back(r0 + z, c0 + z, diag[z]);
}

}  // namespace moments

// E[A (x)b A]: second moment of the combine operator. The combine operator
// has an identity server row; client row k carries a_k S_k toward the server
// column and I - a_k S_k on its own diagonal. Blocks pairing two client rows
// need the joint law of (a_i S_i, a_l S_l): for i == l this is the same-mask
// second moment, for i != l the masks are independent so the expectation
// factors into the joint scheduling probability times p_e^2.
inline SpMat build_combine_sq(const TheorySpec& sp) {
    const BlockLayout lay = sp.layout();
    const int K = sp.clients, d2 = sp.dim * sp.dim;
    const double pe = sp.share_prob(), pc = sp.select_prob();
    const double pcpe = pc * pe;
    const Vector same = pc * moments::mask_pair_diag(sp.dim, sp.shared);
    const double cross = moments::joint_select_prob(K, sp.round_size) * pe * pe;

    std::vector<Triplet> ts;
    ts.reserve(static_cast<std::size_t>(lay.pairs()) * 4 * d2);
    const Vector ones = Vector::Ones(d2);
    for (int i = 0; i <= K; ++i) {
        for (int l = 0; l <= K; ++l) {
            const int rp = lay.pair(i, l);
            if (i == 0 && l == 0) {
                moments::add_diag_const(ts, lay, rp, lay.pair(0, 0), 1.0);
            } else if (i == 0) {
                moments::add_diag_const(ts, lay, rp, lay.pair(0, 0), pcpe);
                moments::add_diag_const(ts, lay, rp, lay.pair(0, l), 1.0 - pcpe);
            } else if (l == 0) {
                moments::add_diag_const(ts, lay, rp, lay.pair(0, 0), pcpe);
                moments::add_diag_const(ts, lay, rp, lay.pair(i, 0), 1.0 - pcpe);
            } else {
                const Vector pair_mom = (i == l) ? same : Vector(cross * ones);
                moments::add_diag_vec(ts, lay, rp, lay.pair(0, 0), pair_mom);
                moments::add_diag_vec(ts, lay, rp, lay.pair(0, l), pcpe * ones - pair_mom);
                moments::add_diag_vec(ts, lay, rp, lay.pair(i, 0), pcpe * ones - pair_mom);
                moments::add_diag_vec(ts, lay, rp, lay.pair(i, l),
                                      (1.0 - 2.0 * pcpe) * ones + pair_mom);
            }
        }
    }
    SpMat out(lay.side(), lay.side());
    out.setFromTriplets(ts.begin(), ts.end());
    return out;
}

// E[B (x)b B]: second moment of the aggregation operator. The server row of
// the aggregation operator mixes the scheduled clients' next-round masks,
// every client row is identity.
inline SpMat build_aggregate_sq(const TheorySpec& sp) {
    const BlockLayout lay = sp.layout();
    const int K = sp.clients, d2 = sp.dim * sp.dim;
    const double s = sp.round_size;
    const double pe = sp.share_prob(), pc = sp.select_prob();
    const Vector same = pc * moments::mask_pair_diag(sp.dim, sp.shared);
    const double cross = moments::joint_select_prob(K, sp.round_size) * pe * pe;
    const Vector ones = Vector::Ones(d2);

    std::vector<Triplet> ts;
    ts.reserve(static_cast<std::size_t>(lay.pairs() + 4 * K * K) * d2);
    // row pair (0,0): all column pairs are reachable
    {
        const int rp = lay.pair(0, 0);
        Vector v00 = (1.0 - 2.0 * pe) * ones + (K / (s * s)) * same;
        if (K > 1) v00 += (K * (K - 1.0) / (s * s)) * cross * ones;
        moments::add_diag_vec(ts, lay, rp, lay.pair(0, 0), v00);
        Vector vedge = (pe / K) * ones - (1.0 / (s * s)) * same;
        if (K > 1) vedge -= ((K - 1.0) / (s * s)) * cross * ones;
        for (int m = 1; m <= K; ++m) moments::add_diag_vec(ts, lay, rp, lay.pair(0, m), vedge);
        for (int j = 1; j <= K; ++j) moments::add_diag_vec(ts, lay, rp, lay.pair(j, 0), vedge);
        for (int j = 1; j <= K; ++j)
            for (int m = 1; m <= K; ++m) {
                const Vector v = (j == m) ? Vector((1.0 / (s * s)) * same)
                                          : Vector((cross / (s * s)) * ones);
                moments::add_diag_vec(ts, lay, rp, lay.pair(j, m), v);
            }
    }
    for (int l = 1; l <= K; ++l) {
        const int rp = lay.pair(0, l);
        moments::add_diag_const(ts, lay, rp, lay.pair(0, l), 1.0 - pe);
        for (int j = 1; j <= K; ++j) moments::add_diag_const(ts, lay, rp, lay.pair(j, l), pe / K);
    }
    for (int i = 1; i <= K; ++i) {
        const int rp = lay.pair(i, 0);
        moments::add_diag_const(ts, lay, rp, lay.pair(i, 0), 1.0 - pe);
        for (int m = 1; m <= K; ++m) moments::add_diag_const(ts, lay, rp, lay.pair(i, m), pe / K);
    }
    for (int i = 1; i <= K; ++i)
        for (int l = 1; l <= K; ++l)
            moments::add_diag_const(ts, lay, lay.pair(i, l), lay.pair(i, l), 1.0);

    SpMat out(lay.side(), lay.side());
    out.setFromTriplets(ts.begin(), ts.end());
    return out;
}

// E[C (x)b C]: second moment of the attack-injection operator (the server-row
// slice of the aggregation operator that multiplies the perturbations).
inline SpMat build_inject_sq(const TheorySpec& sp) {
    const BlockLayout lay = sp.layout();
    const int K = sp.clients;
    const double s = sp.round_size;
    const double pe = sp.share_prob(), pc = sp.select_prob();
    const Vector same = pc * moments::mask_pair_diag(sp.dim, sp.shared);
    const double cross = moments::joint_select_prob(K, sp.round_size) * pe * pe;
    const Vector ones = Vector::Ones(sp.dim * sp.dim);

    std::vector<Triplet> ts;
    const int rp = lay.pair(0, 0);
    for (int j = 1; j <= K; ++j)
        for (int m = 1; m <= K; ++m) {
            const Vector v = (j == m) ? Vector((1.0 / (s * s)) * same)
                                      : Vector((cross / (s * s)) * ones);
            moments::add_diag_vec(ts, lay, rp, lay.pair(j, m), v);
        }
    SpMat out(lay.side(), lay.side());
    out.setFromTriplets(ts.begin(), ts.end());
    return out;
}

// Gaussian fourth moment of one client's input across a Kronecker square:
// E[x x' (x) x x'] for x with IID N(0, var) entries. Wick pairings give
// var^2 (delta_ab delta_cd + delta_ac delta_bd + delta_ad delta_bc).
inline Matrix gaussian_fourth_block(int dim, double var) {
    const double v2 = var * var;
    Matrix g = Matrix::Zero(dim * dim, dim * dim);
    for (int a = 0; a < dim; ++a)
        for (int b = 0; b < dim; ++b)
            for (int c = 0; c < dim; ++c)
                for (int d = 0; d < dim; ++d) {
                    double e = 0.0;
                    if (a == b && c == d) e += v2;
                    if (a == c && b == d) e += v2;
                    if (a == d && b == c) e += v2;
                    if (e != 0.0) g(a * dim + c, b * dim + d) = e;
                }
    return g;
}

// E[XX' (x)b XX']: fourth moment of the stacked input matrix. Block diagonal
// over row pairs; same-client pairs carry the Gaussian fourth moment, pairs
// of distinct clients factor into R_i (x) R_l.
inline SpMat build_fourth_moment(const TheorySpec& sp) {
    const BlockLayout lay = sp.layout();
    const int K = sp.clients, d2 = sp.dim * sp.dim;
    std::vector<Triplet> ts;
    for (int i = 1; i <= K; ++i) {
        for (int l = 1; l <= K; ++l) {
            const int p = lay.pair(i, l);
            const long o = static_cast<long>(p) * d2;
            if (i != l) {
                const double v = sp.input_var[i - 1] * sp.input_var[l - 1];
                for (int z = 0; z < d2; ++z) ts.emplace_back(o + z, o + z, v);
            } else {
                const Matrix g = gaussian_fourth_block(sp.dim, sp.input_var[i - 1]);
                for (int r = 0; r < d2; ++r)
                    for (int c = 0; c < d2; ++c)
                        if (g(r, c) != 0.0) ts.emplace_back(o + r, o + c, g(r, c));
            }
        }
    }
    SpMat out(lay.side(), lay.side());
    out.setFromTriplets(ts.begin(), ts.end());
    return out;
}

// (I (x)b R) + (R (x)b I): diagonal, pair (i,l) carries var_i + var_l.
inline SpMat build_curvature(const TheorySpec& sp) {
    const BlockLayout lay = sp.layout();
    const int d2 = sp.dim * sp.dim;
    std::vector<Triplet> ts;
    for (int i = 0; i <= sp.clients; ++i)
        for (int l = 0; l <= sp.clients; ++l) {
            const double v = sp.block_var(i) + sp.block_var(l);
            if (v == 0.0) continue;
            const long o = static_cast<long>(lay.pair(i, l)) * d2;
            for (int z = 0; z < d2; ++z) ts.emplace_back(o + z, o + z, v);
        }
    SpMat out(lay.side(), lay.side());
    out.setFromTriplets(ts.begin(), ts.end());
    return out;
}

// bdiag{0, R_1, ..., R_K} with isotropic R_k, side (K+1) D.
inline SpMat build_covariance(const TheorySpec& sp) {
    const int side = (sp.clients + 1) * sp.dim;
    std::vector<Triplet> ts;
    for (int i = 1; i <= sp.clients; ++i)
        for (int d = 0; d < sp.dim; ++d)
            ts.emplace_back(i * sp.dim + d, i * sp.dim + d, sp.input_var[i - 1]);
    SpMat out(side, side);
    out.setFromTriplets(ts.begin(), ts.end());
    return out;
}

// bvec of a block-diagonal matrix with isotropic blocks {v_0 I, ..., v_K I}.
inline Vector bvec_block_diag_iso(const BlockLayout& lay, const Vector& block_values) {
    Vector out = Vector::Zero(lay.side());
    for (int i = 0; i < lay.blocks; ++i) {
        if (block_values[i] == 0.0) continue;
        for (int c = 0; c < lay.dim; ++c) out[lay.entry(i, i, c, c)] = block_values[i];
    }
    return out;
}

// bvec{E[X Theta_nu X']}: per-client blocks sigma_nu^2 R_k, zero server block.
inline Vector build_phi_nu(const TheorySpec& sp) {
    const BlockLayout lay = sp.layout();
    Vector vals = Vector::Zero(lay.blocks);
    for (int i = 1; i <= sp.clients; ++i)
        vals[i] = sp.noise_var[i - 1] * sp.input_var[i - 1];
    return bvec_block_diag_iso(lay, vals);
}

// bvec of the attack covariance bdiag{0, beta_k sigma_B^2 p_a I}.
inline Vector build_attack_bvec(const TheorySpec& sp) {
    const BlockLayout lay = sp.layout();
    Vector vals = Vector::Zero(lay.blocks);
    for (int i = 1; i <= sp.clients; ++i)
        if (sp.byzantine[i - 1]) vals[i] = sp.attack_var * sp.attack_prob;
    return bvec_block_diag_iso(lay, vals);
}

// Everything the steady-state analysis needs, built once per configuration.
struct MomentBundle {
    TheorySpec spec;
    SpMat combine_sq;     // E[A (x)b A]
    SpMat aggregate_sq;   // E[B (x)b B]
    SpMat inject_sq;      // E[C (x)b C]
    SpMat fourth_moment;  // E[XX' (x)b XX']
    SpMat curvature;      // (I (x)b R) + (R (x)b I)
    SpMat covariance;     // bdiag{0, R_1..R_K}
    Vector cov_bvec;      // bvec{R}
    Vector mask_sq_same;  // same-client scheduled mask second moment diagonal
    Vector mask_sq_cross; // cross-client counterpart (scalar law, stored as diagonal)
    Vector phi_nu;        // bvec{E[X Theta X']}
    Vector phi;           // aggregate_sq * phi_nu
    Vector attack_bvec;   // bvec of attack covariance
    Vector omega;         // inject_sq * attack_bvec
};

inline MomentBundle build_bundle(const TheorySpec& sp) {
    MomentBundle b;
    b.spec = sp;
    const BlockLayout lay = sp.layout();
    b.combine_sq = build_combine_sq(sp);
    b.aggregate_sq = build_aggregate_sq(sp);
    b.inject_sq = build_inject_sq(sp);
    b.fourth_moment = build_fourth_moment(sp);
    b.curvature = build_curvature(sp);
    b.covariance = build_covariance(sp);
    Vector vars = Vector::Zero(lay.blocks);
    for (int i = 1; i <= sp.clients; ++i) vars[i] = sp.input_var[i - 1];
    b.cov_bvec = bvec_block_diag_iso(lay, vars);
    b.mask_sq_same = sp.select_prob() * moments::mask_pair_diag(sp.dim, sp.shared);
    b.mask_sq_cross = moments::joint_select_prob(sp.clients, sp.round_size) *
                      sp.share_prob() * sp.share_prob() *
                      Vector::Ones(sp.dim * sp.dim);
    b.phi_nu = build_phi_nu(sp);
    b.phi = b.aggregate_sq * b.phi_nu;
    b.attack_bvec = build_attack_bvec(sp);
    b.omega = b.inject_sq * b.attack_bvec;
    return b;
}

inline MomentBundle build_bundle(const NetworkSpec& net) { return build_bundle(theory_view(net)); }

// Moment transition operator: QB (I - mu*curvature + mu^2*fourth) QA.
// small_step drops the quadratic term.
inline SpMat build_transition(const MomentBundle& b, double mu, bool small_step = false) {
    SpMat mid(b.curvature.rows(), b.curvature.cols());
    mid.setIdentity();
    mid = mid - mu * b.curvature;
    if (!small_step) mid = mid + (mu * mu) * b.fourth_moment;
    SpMat tmp = b.aggregate_sq * mid;
    return SpMat(tmp * b.combine_sq);
}

// Largest-stepsize guarantee for convergence in the mean: 2 over the largest
// input covariance eigenvalue, which is the largest client input variance.
inline double mean_stability_bound(const TheorySpec& sp) {
    return 2.0 / sp.input_var.maxCoeff();
}

// Mean-square stepsize bound
//   min{ 1 / lambda_max(curvature^{-1} fourth), 1 / max{real spectrum of the
//        companion pencil, 0} }.
// Both matrices are simultaneously block diagonal over index pairs, so the
// spectra decompose into independent D^2-sized problems: with kappa the
// scalar curvature of a pair and g an eigenvalue of its fourth-moment block,
// the companion eigenvalues solve lambda^2 - (kappa/2) lambda + g/2 = 0.
// The pair with zero curvature (the server-server pair) carries no input
// energy and is excluded, which is exactly the range-space restriction.
inline double mean_square_stability_bound(const MomentBundle& b) {
    const TheorySpec& sp = b.spec;
    const int K = sp.clients, dim = sp.dim;
    double max_ratio = 0.0;    // lambda_max of curvature^{-1} fourth
    double max_real = 0.0;     // largest real companion eigenvalue

    // Eigenvalues of the same-client fourth-moment block, computed once per
    // client from the assembled block.
    std::vector<Vector> same_eigs(K);
    for (int k = 0; k < K; ++k) {
        Matrix g = gaussian_fourth_block(dim, sp.input_var[k]);
        Eigen::SelfAdjointEigenSolver<Matrix> es(g);
        same_eigs[k] = es.eigenvalues();
    }

    bool any_pair = false;
    for (int i = 0; i <= K; ++i) {
        for (int l = 0; l <= K; ++l) {
            const double kappa = sp.block_var(i) + sp.block_var(l);
            if (kappa == 0.0) continue;  // server-server pair
            any_pair = true;
            // fourth-moment eigenvalues of this pair
            auto consider = [&](double g) {
                if (g > 0.0) max_ratio = std::max(max_ratio, g / kappa);
                const double disc = 0.25 * kappa * kappa - 2.0 * g;
                if (disc >= 0.0) {
                    const double root = 0.5 * (0.5 * kappa + std::sqrt(disc));
                    max_real = std::max(max_real, root);
                }
            };
            if (i == 0 || l == 0) {
                consider(0.0);
            } else if (i != l) {
                consider(sp.input_var[i - 1] * sp.input_var[l - 1]);
            } else {
                const Vector& eigs = same_eigs[i - 1];
                for (long t = 0; t < eigs.size(); ++t) consider(std::max(eigs[t], 0.0));
            }
        }
    }
    if (!any_pair || max_ratio == 0.0)
        throw DegenerateError("mean_square_stability_bound: curvature has empty range");
    const double b1 = 1.0 / max_ratio;
    const double b2 = max_real > 0.0 ? 1.0 / max_real : std::numeric_limits<double>::infinity();
    return std::min(b1, b2);
}

// Dominant |eigenvalue| estimate by power iteration with a geometric-mean
// growth read-out (robust to complex dominant pairs).
inline double spectral_radius_estimate(const SpMat& F, int max_iters = 800,
                                       double tol = 1e-10) {
    RngStream rs(0x9d2c5680cafef00dull);
    Vector v(F.cols());
    for (long i = 0; i < v.size(); ++i) v[i] = rs.uniform01() - 0.5;
    double nv = v.norm();
    if (nv == 0.0 || F.nonZeros() == 0) return 0.0;
    v /= nv;
    constexpr int kWindow = 24;
    std::vector<double> growth;
    growth.reserve(max_iters);
    double prev_est = -1.0;
    for (int it = 0; it < max_iters; ++it) {
        Vector w = F * v;
        const double g = w.norm();
        if (g == 0.0) return 0.0;
        v = w / g;
        growth.push_back(g);
        if (static_cast<int>(growth.size()) >= kWindow && it % 8 == 0) {
            double acc = 0.0;
            for (int t = 0; t < kWindow; ++t)
                acc += std::log(growth[growth.size() - 1 - t]);
            const double est = std::exp(acc / kWindow);
            if (prev_est >= 0.0 && std::abs(est - prev_est) <= tol * std::max(1.0, est))
                return est;
            prev_est = est;
        }
    }
    return prev_est >= 0.0 ? prev_est : growth.back();
}

// Solve (I - F') z = rhs by BiCGSTAB at the requested residual tolerance,
// falling back to the fixed-point sum z <- rhs + F' z when the Krylov solve
// stalls. Never forms an inverse.
inline Vector solve_steady_system(const SpMat& F, const Vector& rhs,
                                  double tol = 1e-10, int max_iters = 200000) {
    SpMat Ft = SpMat(F.transpose());
    SpMat A(F.rows(), F.cols());
    A.setIdentity();
    A = A - Ft;
    Eigen::BiCGSTAB<SpMat> solver;
    solver.setTolerance(tol);
    solver.setMaxIterations(5000);
    solver.compute(A);
    Vector z = solver.solve(rhs);
    if (solver.info() == Eigen::Success &&
        (rhs - A * z).norm() <= 10.0 * tol * rhs.norm())
        return z;
    // geometric-series fallback, converges whenever rho(F) < 1
    z = rhs;
    for (int it = 0; it < max_iters; ++it) {
        Vector nz = rhs + Ft * z;
        const double dn = (nz - z).norm();
        z = std::move(nz);
        if (dn <= tol * std::max(1.0, z.norm())) return z;
        if (!z.allFinite() || z.norm() > 1e14)
            throw NumericError("solve_steady_system: iteration diverged");
    }
    throw NumericError("solve_steady_system: no convergence at requested tolerance");
}

struct MseDecomposition {
    double e_phi = 0.0;    // gradient-noise term
    double e_omega = 0.0;  // attack-induced term
    double e_theta = 0.0;  // observation-noise floor
    double total = 0.0;
};

// Steady-state network MSE split. Weighting sigma* = combine_sq' bvec{R};
// the limit energy solves (I - F') z = sigma*.
inline MseDecomposition steady_state_mse(const MomentBundle& b, double mu,
                                         bool small_step = false) {
    const SpMat F = build_transition(b, mu, small_step);
    const double rho = spectral_radius_estimate(F);
    if (rho >= 1.0) throw InstabilityError(rho);
    const Vector sigma = b.combine_sq.transpose() * b.cov_bvec;
    const Vector z = solve_steady_system(F, sigma);
    MseDecomposition m;
    const double K = b.spec.clients;
    m.e_phi = mu * mu * b.phi.dot(z) / K;
    m.e_omega = b.omega.dot(z) / K;
    m.e_theta = b.spec.noise_var.sum() / K;
    m.total = m.e_phi + m.e_omega + m.e_theta;
    return m;
}

// Weighted mean-square-deviation recursion, unrolled forward from the
// zero-initialized estimate (deviation = true model everywhere). Entry n is
// the weighted deviation energy at iteration n; the driving term
// mu^2 phi'sigma + omega'sigma accumulates while sigma propagates through F'.
inline std::vector<double> msd_trace(const MomentBundle& b, double mu,
                                     const Vector& sigma_weight, int iters,
                                     bool small_step = false) {
    if (iters < 1) throw ArgumentError("msd_trace: iters >= 1 required");
    const SpMat F = build_transition(b, mu, small_step);
    const SpMat Ft = SpMat(F.transpose());
    const BlockLayout lay = b.spec.layout();
    const Vector& w = b.spec.true_model;
    // bvec of the initial deviation outer product: every block is w* w*'.
    Vector dev0 = Vector::Zero(lay.side());
    for (int i = 0; i < lay.blocks; ++i)
        for (int l = 0; l < lay.blocks; ++l)
            for (int c = 0; c < lay.dim; ++c)
                for (int r = 0; r < lay.dim; ++r)
                    dev0[lay.entry(i, l, c, r)] = w[r] * w[c];

    std::vector<double> out;
    out.reserve(iters);
    Vector s = sigma_weight;
    double forced = 0.0;
    for (int n = 0; n < iters; ++n) {
        const double value = dev0.dot(s) + forced;
        if (!std::isfinite(value) || std::abs(value) > 1e12)
            throw NumericError("msd_trace: divergence at iteration " + std::to_string(n));
        out.push_back(value);
        forced += mu * mu * b.phi.dot(s) + b.omega.dot(s);
        s = Ft * s;
    }
    return out;
}

// Approximate optimal stepsize from the truncated geometric-series expansion
// of the steady-state MSE, keeping terms through mu^2. All coefficient sums
// are evaluated by O(J) forward recursions of sparse matrix-vector chains.
inline double optimal_stepsize_series(const MomentBundle& b, int series_terms = 5) {
    if (series_terms < 3) throw ArgumentError("optimal_stepsize: series order must be >= 3");
    const int J = series_terms;
    if (b.omega.isZero(0.0)) return 0.0;

    const SpMat QAt = SpMat(b.combine_sq.transpose());
    const SpMat QBt = SpMat(b.aggregate_sq.transpose());
    const SpMat& QA = b.combine_sq;
    const SpMat& QB = b.aggregate_sq;
    const SpMat& Kv = b.curvature;
    const SpMat& Hm = b.fourth_moment;

    auto A0 = [&](const Vector& x) { return Vector(QAt * (QBt * x)); };
    auto A1 = [&](const Vector& x) { return Vector(QAt * (Kv * (QBt * x))); };
    auto A2 = [&](const Vector& x) { return Vector(QAt * (Hm * (QBt * x))); };
    auto A0t = [&](const Vector& x) { return Vector(QB * (QA * x)); };
    auto A1t = [&](const Vector& x) { return Vector(QB * (Kv * (QA * x))); };

    const Vector q = QAt * b.cov_bvec;
    const long n = q.size();

    // forward states, all at index m-1 on loop entry:
    //   p  = A0^m q,          u  = (sum_{j<=m} A0^j) q
    //   w  = (sum_j A0^{j-1} A1 B0_{m-j}) q, w2 the same with A2
    //   p1/u1/w1: the primed chain driven by A1 q (for B1_{J-1} A1 q)
    Vector p = q, u = q;
    Vector w = Vector::Zero(n), w2 = Vector::Zero(n), w1 = Vector::Zero(n);
    Vector p1 = A1(q), u1 = p1;
    // left states for the curvature-squared chain
    Vector L = b.omega;                 // (A0')^{j-1} omega
    Vector mvec = A1t(L);               // running two-factor mixed sum
    Vector cvec(n);                     // omega' C_{2,j} as a column
    double c_sum_q = 0.0;               // sum_{j=3..J} omega' C_{2,j} q
    double w1_at_Jm1 = 0.0;

    for (int m = 1; m <= J; ++m) {
        w = A0(w) + A1(u);
        w2 = A0(w2) + A2(u);
        if (m <= J - 1) w1 = A0(w1) + A1(u1);
        if (m == J - 1) w1_at_Jm1 = b.omega.dot(w1);
        p = A0(p);
        u += p;
        p1 = A0(p1);
        u1 += p1;
        if (m == 2) {
            cvec = A1t(mvec);           // omega' C_{2,2}
            L = A0t(L);
            mvec = A0t(mvec) + A1t(L);
        } else if (m >= 3) {
            L = A0t(L);
            mvec = A0t(mvec) + A1t(L);
            cvec = A0t(cvec) + A1t(mvec);
            c_sum_q += cvec.dot(q);
        }
    }
    const double numerator = b.omega.dot(w);                  // omega' B1J q
    const double phi_term = b.phi.dot(u);                     // phi' B0J q
    const double omega_b2 = w1_at_Jm1 + b.omega.dot(w2) + c_sum_q;
    const double denom = 2.0 * (phi_term + omega_b2);
    if (std::abs(denom) < 1e-300)
        throw DegenerateError("optimal_stepsize: vanishing curvature denominator");
    return numerator / denom;
}

namespace detail {

// Steady-state energy terms without the stability probe; only called for
// stepsizes inside the sufficient bound, where the transition operator is
// guaranteed contractive.
inline double steady_error_energy(const MomentBundle& b, double mu) {
    const SpMat F = build_transition(b, mu);
    const Vector sigma = b.combine_sq.transpose() * b.cov_bvec;
    const Vector z = solve_steady_system(F, sigma);
    return (mu * mu * b.phi.dot(z) + b.omega.dot(z)) / b.spec.clients;
}

}  // namespace detail

// The stepsize minimizing the predicted steady-state MSE. Without an attack
// the MSE increases monotonically in the stepsize and the optimum is zero;
// under attack the attack term diverges as mu -> 0 and a strict interior
// optimum appears. Located by a coarse log-spaced bracket plus golden-section
// refinement over the guaranteed-stable range (0, 0.95 * bound].
//
// The truncated-series formula above is the closed-form approximation of
// this optimum; it underestimates the true minimizer whenever the series
// horizon is short against the mixing time, so the search is what the
// mu_star outputs report.
inline double optimal_stepsize(const MomentBundle& b, int /*series_terms*/ = 5) {
    if (b.omega.isZero(0.0)) return 0.0;
    const double hi = 0.95 * mean_square_stability_bound(b);
    const double lo = hi * 1e-3;
    constexpr int kGrid = 12;
    double best_mu = lo, best_val = std::numeric_limits<double>::infinity();
    std::vector<double> grid(kGrid);
    for (int i = 0; i < kGrid; ++i)
        grid[i] = lo * std::pow(hi / lo, i / double(kGrid - 1));
    std::vector<double> vals(kGrid);
    for (int i = 0; i < kGrid; ++i) {
        vals[i] = detail::steady_error_energy(b, grid[i]);
        if (vals[i] < best_val) {
            best_val = vals[i];
            best_mu = grid[i];
        }
    }
    int idx = int(std::find(grid.begin(), grid.end(), best_mu) - grid.begin());
    double a = grid[std::max(0, idx - 1)];
    double c = grid[std::min(kGrid - 1, idx + 1)];
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = c - gr * (c - a), x2 = a + gr * (c - a);
    double f1 = detail::steady_error_energy(b, x1);
    double f2 = detail::steady_error_energy(b, x2);
    while (c - a > 1e-3 * c) {
        if (f1 < f2) {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - gr * (c - a);
            f1 = detail::steady_error_energy(b, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (c - a);
            f2 = detail::steady_error_energy(b, x2);
        }
    }
    return 0.5 * (a + c);
}

}  // namespace byzfed
