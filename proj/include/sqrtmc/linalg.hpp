#pragma once

#include "sqrtmc/masked_ops.hpp"
#include "sqrtmc/rng.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sqrtmc {

/// Error raised when a factor or matrix lacks the rank an operation needs.
class RankDeficientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thin SVD A = U diag(s) V^T with s non-negative and non-increasing.
struct ThinSvd {
    Matrix U;
    Vector s;
    Matrix V;

    [[nodiscard]] Matrix reconstruct() const { return U * s.asDiagonal() * V.transpose(); }
};

/// Orthonormal basis (thin Q) from a Householder QR.
inline Matrix thin_q(const Matrix &A) {
    Eigen::HouseholderQR<Matrix> qr(A);
    return qr.householderQ() * Matrix::Identity(A.rows(), A.cols());
}

/// Thin SVD of X Y^T through QR of each factor and an r x r SVD; the n x n
/// product is never formed. Throws RankDeficientError if a factor is rank deficient.
inline ThinSvd factored_svd(const Matrix &X, const Matrix &Y) {
    if (X.cols() != Y.cols())
        throw std::invalid_argument("factored_svd: factor ranks differ");
    const Index r = X.cols();
    if (r > X.rows() || r > Y.rows())
        throw std::invalid_argument("factored_svd: rank exceeds dimension");

    Eigen::HouseholderQR<Matrix> qx(X), qy(Y);
    const Matrix Rx = qx.matrixQR().topRows(r).template triangularView<Eigen::Upper>();
    const Matrix Ry = qy.matrixQR().topRows(r).template triangularView<Eigen::Upper>();
    const double scale = std::max(Rx.cwiseAbs().maxCoeff(), Ry.cwiseAbs().maxCoeff());
    for (Index k = 0; k < r; ++k) {
        if (!(std::abs(Rx(k, k)) > 1e-14 * scale) || !(std::abs(Ry(k, k)) > 1e-14 * scale))
            throw RankDeficientError("factored_svd: factor is rank deficient");
    }

    Eigen::JacobiSVD<Matrix> small(Rx * Ry.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    ThinSvd out;
    out.U = (qx.householderQ() * Matrix::Identity(X.rows(), r)) * small.matrixU();
    out.V = (qy.householderQ() * Matrix::Identity(Y.rows(), r)) * small.matrixV();
    out.s = small.singularValues();
    return out;
}

/// Thin SVD of a dense matrix.
inline ThinSvd dense_svd(const Matrix &A) {
    Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

inline Vector singular_values(const Matrix &A) {
    return Eigen::BDCSVD<Matrix>(A).singularValues();
}

/// Largest singular value from a full (values-only) SVD.
inline double spectral_norm(const Matrix &A) {
    if (A.size() == 0)
        return 0.0;
    return singular_values(A)(0);
}

inline double orthonormality_defect(const Matrix &Q) {
    return (Q.transpose() * Q - Matrix::Identity(Q.cols(), Q.cols())).norm();
}

/// Top-k singular triplets of a sparse matrix (values on an index set) scaled
/// by `scale`, by block subspace iteration with Rayleigh-Ritz extraction.
/// Only sparse-times-dense products are used. Deterministic: the start block
/// comes from a fixed counter-based stream.
inline ThinSvd sparse_top_svd(const SparseResidual &S, Index k, double scale = 1.0, int max_iters = 100,
                              double tol = 1e-14) {
    const Index n_rows = S.n_rows(), n_cols = S.n_cols();
    if (k <= 0 || k > std::min(n_rows, n_cols))
        throw std::invalid_argument("sparse_top_svd: requested rank out of range");
    const Index block = std::min<Index>(std::min(n_rows, n_cols), k + std::max<Index>(10, k));

    CounterRng rng{0x5eed5eedULL};
    Matrix V(n_cols, block);
    for (Index c = 0; c < block; ++c)
        for (Index i = 0; i < n_cols; ++i)
            V(i, c) = rng.normal();
    V = thin_q(V);

    Vector previous = Vector::Zero(k);
    ThinSvd out;
    for (int it = 0; it < max_iters; ++it) {
        const Matrix U = thin_q(sparse_times_dense(S, V));
        const Matrix W = sparse_transpose_times_dense(S, U);  // n_cols x block
        // Rayleigh-Ritz: U^T S = W^T, and W = Vw diag(s) Uw^T gives U^T S = Uw diag(s) Vw^T.
        Eigen::JacobiSVD<Matrix> small(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
        V = thin_q(W);
        const Vector current = small.singularValues().head(k);
        out.U = U * small.matrixV().leftCols(k);
        out.V = small.matrixU().leftCols(k);
        out.s = current * scale;
        const double top = std::max(current(0), 1e-300);
        if (it > 0 && (current - previous).cwiseAbs().maxCoeff() <= tol * top)
            break;
        previous = current;
    }
    return out;
}

}  // namespace sqrtmc
