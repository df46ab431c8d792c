#pragma once

// Shared helpers for the test suites: dense extended-operator samplers built
// straight from the recursion definitions, and Monte-Carlo moment
// accumulators used as independent oracles for the closed-form matrices.

#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "byzfed/blockkron.hpp"
#include "byzfed/scheduling.hpp"
#include "byzfed/types.hpp"

namespace testutil {

using byzfed::Matrix;
using byzfed::SelectionMask;
using byzfed::Vector;

inline Matrix mask_matrix(const SelectionMask& m, int dim) {
    Matrix s = Matrix::Zero(dim, dim);
    for (int idx : m.indices) s(idx, idx) = 1.0;
    return s;
}

// Combine operator of one round: identity server row; client row k blends
// a_k S_k of the global model with I - a_k S_k of its own.
inline Matrix extended_combine(int clients, int dim, const std::vector<int>& selected,
                               const std::vector<SelectionMask>& masks) {
    const int side = (clients + 1) * dim;
    Matrix A = Matrix::Zero(side, side);
    A.block(0, 0, dim, dim).setIdentity();
    std::vector<bool> in(clients, false);
    for (int k : selected) in[k] = true;
    for (int k = 0; k < clients; ++k) {
        const int r = (k + 1) * dim;
        Matrix s = in[k] ? mask_matrix(masks[k], dim) : Matrix::Zero(dim, dim);
        A.block(r, 0, dim, dim) = s;
        A.block(r, r, dim, dim) = Matrix::Identity(dim, dim) - s;
    }
    return A;
}

// Aggregation operator: the server row averages the scheduled clients'
// next-round masked entries and keeps its own elsewhere; client rows are
// identity.
inline Matrix extended_aggregate(int clients, int dim, const std::vector<int>& selected,
                                 const std::vector<SelectionMask>& masks_next) {
    const int side = (clients + 1) * dim;
    const double s = static_cast<double>(selected.size());
    Matrix B = Matrix::Zero(side, side);
    Matrix acc = Matrix::Zero(dim, dim);
    for (int k : selected) {
        const Matrix sk = mask_matrix(masks_next[k], dim);
        B.block(0, (k + 1) * dim, dim, dim) = sk / s;
        acc += sk / s;
    }
    B.block(0, 0, dim, dim) = Matrix::Identity(dim, dim) - acc;
    for (int k = 0; k < clients; ++k)
        B.block((k + 1) * dim, (k + 1) * dim, dim, dim).setIdentity();
    return B;
}

// Attack injection operator: the server-row slice of the aggregation that
// multiplies the upload perturbations.
inline Matrix extended_inject(int clients, int dim, const std::vector<int>& selected,
                              const std::vector<SelectionMask>& masks_next) {
    const int side = (clients + 1) * dim;
    const double s = static_cast<double>(selected.size());
    Matrix C = Matrix::Zero(side, side);
    for (int k : selected)
        C.block(0, (k + 1) * dim, dim, dim) = mask_matrix(masks_next[k], dim) / s;
    return C;
}

// Stacked per-client inputs: bdiag{0, x_1, ..., x_K}, (K+1)D x (K+1).
inline Matrix stacked_inputs(int clients, int dim, const std::vector<Vector>& xs) {
    Matrix X = Matrix::Zero((clients + 1) * dim, clients + 1);
    for (int k = 0; k < clients; ++k) X.block((k + 1) * dim, k + 1, dim, 1) = xs[k];
    return X;
}

// Monte-Carlo accumulator for E[A (x)b B] over block matrices with a P x P
// grid of D x D blocks. Tracks per-entry sums and squared sums of every
// block-pair position that ever carries mass; positions never touched are
// exact zeros of the sampled law.
class KronMoments {
public:
    KronMoments(int blocks, int dim) : P_(blocks), D_(dim), n_(0) {}

    void add(const Matrix& A, const Matrix& B) {
        n_ += 1;
        const int d2 = D_ * D_;
        std::vector<std::pair<int, int>> nzA, nzB;
        for (int i = 0; i < P_; ++i)
            for (int j = 0; j < P_; ++j) {
                if (!A.block(i * D_, j * D_, D_, D_).isZero(0.0)) nzA.emplace_back(i, j);
                if (!B.block(i * D_, j * D_, D_, D_).isZero(0.0)) nzB.emplace_back(i, j);
            }
        Matrix kron(d2, d2);
        for (const auto& [i, j] : nzA)
            for (const auto& [l, m] : nzB) {
                const auto Ab = A.block(i * D_, j * D_, D_, D_);
                const auto Bb = B.block(l * D_, m * D_, D_, D_);
                for (int a = 0; a < D_; ++a)
                    for (int b = 0; b < D_; ++b)
                        kron.block(a * D_, b * D_, D_, D_) = Ab(a, b) * Bb;
                auto& slot = cells_[key(i * P_ + l, j * P_ + m)];
                if (slot.first.size() == 0) {
                    slot.first = Matrix::Zero(d2, d2);
                    slot.second = Matrix::Zero(d2, d2);
                }
                slot.first += kron;
                slot.second += kron.cwiseAbs2();
            }
    }

    long draws() const { return n_; }

    struct CheckResult {
        long entries = 0;
        long failed = 0;
        double worst_sigma = 0.0;  // largest |diff|/se seen
    };

    // Three-standard-error comparison of every entry of `theory` against the
    // accumulated estimates. Entries the sampler never touched must be zero
    // in theory.
    CheckResult check(const Eigen::SparseMatrix<double>& theory, double sigmas = 3.0) const {
        const int d2 = D_ * D_;
        CheckResult res;
        Matrix dense = Matrix(theory);
        for (int rp = 0; rp < P_ * P_; ++rp)
            for (int cp = 0; cp < P_ * P_; ++cp) {
                const auto it = cells_.find(key(rp, cp));
                for (int r = 0; r < d2; ++r)
                    for (int c = 0; c < d2; ++c) {
                        const double th = dense(rp * d2 + r, cp * d2 + c);
                        double mean = 0.0, se = 0.0;
                        if (it != cells_.end()) {
                            const double s1 = it->second.first(r, c);
                            const double s2 = it->second.second(r, c);
                            mean = s1 / n_;
                            const double var =
                                std::max(0.0, (s2 - n_ * mean * mean) / (n_ - 1.0));
                            se = std::sqrt(var / n_);
                        }
                        res.entries += 1;
                        const double diff = std::abs(th - mean);
                        const double tol = sigmas * se + 1e-12;
                        if (diff > tol) res.failed += 1;
                        if (se > 0.0) res.worst_sigma = std::max(res.worst_sigma, diff / se);
                    }
            }
        return res;
    }

private:
    static long key(int rp, int cp) { return static_cast<long>(rp) * (1 << 20) + cp; }
    int P_, D_;
    long n_;
    std::map<long, std::pair<Matrix, Matrix>> cells_;  // sum, sum of squares
};

// Plain dense mean/SE accumulator for small matrices.
struct DenseMoments {
    Matrix sum, sumsq;
    long n = 0;

    void init(long rows, long cols) {
        sum = Matrix::Zero(rows, cols);
        sumsq = Matrix::Zero(rows, cols);
        n = 0;
    }
    void add(const Matrix& x) {
        sum += x;
        sumsq += x.cwiseAbs2();
        n += 1;
    }
    Matrix mean() const { return sum / static_cast<double>(n); }
    Matrix se() const {
        Matrix m = mean();
        Matrix var = (sumsq - static_cast<double>(n) * m.cwiseAbs2()) / (n - 1.0);
        return (var.cwiseMax(0.0) / static_cast<double>(n)).cwiseSqrt();
    }
};

}  // namespace testutil
