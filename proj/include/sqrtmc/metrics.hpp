#pragma once

#include "sqrtmc/instance.hpp"
#include "sqrtmc/linalg.hpp"

namespace sqrtmc {

/// ||L_hat - L*|| / ||L*|| in Frobenius, spectral and entrywise max norms.
struct ErrorMetrics {
    double rel_fro = 0.0;
    double rel_spec = 0.0;
    double rel_inf = 0.0;
};

/// Spectral norm of A B^T via a QR of each factor; no rank requirement.
inline double low_rank_spectral_norm(const Matrix &A, const Matrix &B) {
    const Index k = A.cols();
    if (k == 0)
        return 0.0;
    Eigen::HouseholderQR<Matrix> qa(A), qb(B);
    const Index ka = std::min(k, A.rows()), kb = std::min(k, B.rows());
    const Matrix Ra = qa.matrixQR().topRows(ka).template triangularView<Eigen::Upper>();
    const Matrix Rb = qb.matrixQR().topRows(kb).template triangularView<Eigen::Upper>();
    return Eigen::JacobiSVD<Matrix>(Ra * Rb.transpose()).singularValues()(0);
}

namespace detail {

inline ErrorMetrics finish_metrics(const Matrix &diff, double spec_diff, const ProblemInstance &inst,
                                   const Matrix &L_star) {
    ErrorMetrics m;
    m.rel_fro = diff.norm() / L_star.norm();
    m.rel_spec = spec_diff / inst.sigma_max;
    m.rel_inf = diff.cwiseAbs().maxCoeff() / L_star.cwiseAbs().maxCoeff();
    return m;
}

}  // namespace detail

/// Metrics for a factored estimate X Y^T. The spectral norm of the (rank <= 2r)
/// difference is exact through its factored form.
inline ErrorMetrics error_metrics(const Matrix &X, const Matrix &Y, const ProblemInstance &inst) {
    const Index n = inst.n();
    if (X.rows() != n || Y.rows() != n || X.cols() != Y.cols())
        throw std::invalid_argument("error_metrics: factor dimensions do not match the instance");
    const Matrix L_star = inst.L_star();
    const Matrix diff = X * Y.transpose() - L_star;
    Matrix A(n, X.cols() + inst.r()), B(n, X.cols() + inst.r());
    A << X, -inst.X_star;
    B << Y, inst.Y_star;
    return detail::finish_metrics(diff, low_rank_spectral_norm(A, B), inst, L_star);
}

/// Metrics for a dense estimate (desk scale).
inline ErrorMetrics error_metrics(const Matrix &L_hat, const ProblemInstance &inst) {
    if (L_hat.rows() != inst.n() || L_hat.cols() != inst.n())
        throw std::invalid_argument("error_metrics: estimate dimensions do not match the instance");
    const Matrix L_star = inst.L_star();
    const Matrix diff = L_hat - L_star;
    return detail::finish_metrics(diff, spectral_norm(diff), inst, L_star);
}

}  // namespace sqrtmc
