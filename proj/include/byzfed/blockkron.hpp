#pragma once

#include <Eigen/Dense>

#include "byzfed/types.hpp"

namespace byzfed {

// Index bookkeeping for block matrices with a P x P grid of D x D blocks and
// the block Kronecker product / block vectorization pair used to propagate
// second-order moments.
//
// Conventions (all 0-based):
//   * pair index        p(i,l) = i*P + l
//   * block Kronecker   [A (x)b B] block at (row pair (i,l), col pair (j,m))
//                       is the ordinary Kronecker product A_{ij} (x) B_{lm}
//   * block vec         bvec(W)[p(i,l)*D^2 + c*D + r] = W_{li}(r, c)
//
// With these choices the identities
//   bvec(B' W A)  = [A (x)b B]' bvec(W)
//   bvec(B W A')  = [A (x)b B]  bvec(W)
//   (AB) (x)b (CD) = (A (x)b C)(B (x)b D)
// hold, which is all the moment analysis relies on.
struct BlockLayout {
    int blocks;  // P
    int dim;     // D

    int pairs() const { return blocks * blocks; }
    long side() const { return static_cast<long>(pairs()) * dim * dim; }
    int pair(int i, int l) const { return i * blocks + l; }
    long entry(int i, int l, int a, int c) const {
        return static_cast<long>(pair(i, l)) * dim * dim + a * dim + c;
    }
};

// Dense reference block Kronecker product. Skips all-zero blocks, which is
// what makes Monte-Carlo accumulation of these products affordable.
inline Matrix block_kron(const Matrix& A, const Matrix& B, int dim) {
    const int pa = static_cast<int>(A.rows()) / dim;
    const int pb = static_cast<int>(B.rows()) / dim;
    const int d2 = dim * dim;
    Matrix out = Matrix::Zero(static_cast<long>(pa) * pb * d2,
                              static_cast<long>(A.cols() / dim) * (B.cols() / dim) * d2);
    const int qa = static_cast<int>(A.cols()) / dim;
    const int qb = static_cast<int>(B.cols()) / dim;
    for (int i = 0; i < pa; ++i) {
        for (int j = 0; j < qa; ++j) {
            const auto Ablk = A.block(i * dim, j * dim, dim, dim);
            if (Ablk.isZero(0.0)) continue;
            for (int l = 0; l < pb; ++l) {
                for (int m = 0; m < qb; ++m) {
                    const auto Bblk = B.block(l * dim, m * dim, dim, dim);
                    if (Bblk.isZero(0.0)) continue;
                    for (int a = 0; a < dim; ++a)
                        for (int b = 0; b < dim; ++b) {
                            const double av = Ablk(a, b);
                            if (av == 0.0) continue;
                            out.block((static_cast<long>(i) * pb + l) * d2 + a * dim,
                                      (static_cast<long>(j) * qb + m) * d2 + b * dim,
                                      dim, dim) += av * Bblk;
                        }
                }
            }
        }
    }
    return out;
}

inline Vector bvec(const Matrix& W, int dim) {
    const int P = static_cast<int>(W.rows()) / dim;
    BlockLayout lay{P, dim};
    Vector out(lay.side());
    for (int i = 0; i < P; ++i)
        for (int l = 0; l < P; ++l)
            for (int c = 0; c < dim; ++c)
                for (int r = 0; r < dim; ++r)
                    out[lay.entry(i, l, c, r)] = W(l * dim + r, i * dim + c);
    return out;
}

inline Matrix bvec_inverse(const Vector& v, int blocks, int dim) {
    BlockLayout lay{blocks, dim};
    Matrix W(blocks * dim, blocks * dim);
    for (int i = 0; i < blocks; ++i)
        for (int l = 0; l < blocks; ++l)
            for (int c = 0; c < dim; ++c)
                for (int r = 0; r < dim; ++r)
                    W(l * dim + r, i * dim + c) = v[lay.entry(i, l, c, r)];
    return W;
}

}  // namespace byzfed
