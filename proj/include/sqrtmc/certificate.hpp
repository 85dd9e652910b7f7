#pragma once

#include "sqrtmc/convex_reference.hpp"
#include "sqrtmc/instance.hpp"
#include "sqrtmc/linalg.hpp"
#include "sqrtmc/masked_ops.hpp"
#include "sqrtmc/solver.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

namespace sqrtmc {

/// The residual norm sits below the theta floor, so R is undefined.
class KinkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Orthonormal singular factors of a rank-r matrix.
struct TangentSpace {
    Matrix U;
    Matrix V;
    Vector s;

    [[nodiscard]] double kappa() const { return s(0) / s(s.size() - 1); }
    [[nodiscard]] double sigma_min() const { return s(s.size() - 1); }
};

inline TangentSpace tangent_space(const Matrix &X, const Matrix &Y) {
    ThinSvd svd = factored_svd(X, Y);
    return {std::move(svd.U), std::move(svd.V), std::move(svd.s)};
}

struct TangentSplit {
    Matrix in_T;
    Matrix perp;
};

/// P_T(A) = UU^T A + A VV^T - UU^T A VV^T and P_Tperp(A) = A - P_T(A).
inline TangentSplit tangent_project(const Matrix &A, const TangentSpace &ts) {
    if (A.rows() != ts.U.rows() || A.cols() != ts.V.rows())
        throw std::invalid_argument("tangent_project: dimension mismatch");
    const Matrix UtA = ts.U.transpose() * A;                 // r x n
    const Matrix AV = A * ts.V;                              // n x r
    const Matrix UtAV = UtA * ts.V;                          // r x r
    TangentSplit out;
    out.in_T = ts.U * UtA + AV * ts.V.transpose() - ts.U * (UtAV * ts.V.transpose());
    out.perp = A - out.in_T;
    return out;
}

/// R = -(1 / (lambda theta)) P_Omega(XY^T - M) - UV^T with theta = ||P_Omega(XY^T - M)||_F.
inline Matrix compute_residual_R(const Matrix &X, const Matrix &Y, const ObservationSet &obs, double lambda,
                                 const TangentSpace &ts, double floor, double *theta_out = nullptr) {
    if (!(lambda > 0.0))
        throw std::invalid_argument("compute_residual_R: lambda must be positive");
    const SparseResidual res = masked_residual(X, Y, obs);
    const double theta = masked_frobenius(res);
    if (theta < floor)
        throw KinkError("compute_residual_R: residual norm below the theta floor (exact fit), certificate skipped");
    if (theta_out)
        *theta_out = theta;
    Matrix R = res.to_dense() * (-1.0 / (lambda * theta));
    R.noalias() -= ts.U * ts.V.transpose();
    return R;
}

inline Matrix compute_residual_R(const FactorIterate &it, const ObservationSet &obs, double lambda,
                                 double floor_rel = 1e-12) {
    return compute_residual_R(it.X, it.Y, obs, lambda, tangent_space(it.X, it.Y), theta_floor(obs, floor_rel));
}

/// ||(1/theta) P_Omega(XY^T - M) + lambda (UV^T + R)||_F / max(1, ||P_Omega(XY^T - M)||_F / theta).
inline double residual_identity_defect(const Matrix &X, const Matrix &Y, const ObservationSet &obs, double lambda,
                                       const TangentSpace &ts, const Matrix &R, double theta) {
    const Matrix scaled = masked_residual(X, Y, obs).to_dense() / theta;
    const Matrix defect = scaled + lambda * (ts.U * ts.V.transpose() + R);
    return defect.norm() / std::max(1.0, scaled.norm());
}

struct OptimalityCertificate {
    double pt_r_fro = 0.0;
    double ptperp_r_spec = 0.0;
    double grad_norm = 0.0;
    double c_inj = 0.0;
    /// 70 kappa_hat sigma_min_hat^{-1/2} grad_norm.
    double pt_bound = 0.0;
    bool lemma6_pt_bound_ok = false;
    bool lemma6_ptperp_ok = false;
    double theta = 0.0;
    double lambda = 0.0;
    double kappa_hat = 0.0;
    double sigma_min_hat = 0.0;
    double identity_defect = 0.0;
    /// Same P_T bound with the groundtruth kappa and sigma_min, when supplied.
    std::optional<double> pt_bound_groundtruth;
    std::optional<bool> pt_bound_groundtruth_ok;

    [[nodiscard]] bool ok() const { return lemma6_pt_bound_ok && lemma6_ptperp_ok; }
};

/// Evaluates ||P_Tperp(R)|| < 1/2 and ||P_T(R)||_F <= 70 kappa_hat sigma_min_hat^{-1/2} ||grad g||_F
/// with the spectrum taken from the iterate itself. Throws KinkError at an exact fit.
inline OptimalityCertificate check_certificate(const FactorIterate &it, const ObservationSet &obs, double lambda,
                                               double floor_rel = 1e-12,
                                               const ProblemInstance *groundtruth = nullptr) {
    if (obs.n_rows() > kDenseDimensionLimit || obs.n_cols() > kDenseDimensionLimit)
        throw std::invalid_argument("check_certificate: dense certificate limited to n <= 1000");
    const double floor = theta_floor(obs, floor_rel);
    const TangentSpace ts = tangent_space(it.X, it.Y);
    OptimalityCertificate c;
    const Matrix R = compute_residual_R(it.X, it.Y, obs, lambda, ts, floor, &c.theta);
    const TangentSplit split = tangent_project(R, ts);

    c.lambda = lambda;
    c.pt_r_fro = split.in_T.norm();
    c.ptperp_r_spec = spectral_norm(split.perp);
    c.grad_norm = gradient_g(it, obs, lambda, floor).norm;
    c.kappa_hat = ts.kappa();
    c.sigma_min_hat = ts.sigma_min();
    c.c_inj = 1.0 / std::sqrt(32.0 * c.kappa_hat);
    c.pt_bound = 70.0 * c.kappa_hat / std::sqrt(c.sigma_min_hat) * c.grad_norm;
    c.lemma6_pt_bound_ok = c.pt_r_fro <= c.pt_bound;
    c.lemma6_ptperp_ok = c.ptperp_r_spec < 0.5;
    c.identity_defect = residual_identity_defect(it.X, it.Y, obs, lambda, ts, R, c.theta);
    if (groundtruth) {
        c.pt_bound_groundtruth = 70.0 * groundtruth->kappa / std::sqrt(groundtruth->sigma_min) * c.grad_norm;
        c.pt_bound_groundtruth_ok = c.pt_r_fro <= *c.pt_bound_groundtruth;
    }
    return c;
}

/// Spectral-norm inequality lhs <= bound with its ratio.
struct BoundCheck {
    bool ok = false;
    double lhs = 0.0;
    double bound = 0.0;
    /// lhs / bound; 0 when both sides vanish, +inf when only the bound does.
    double ratio = 0.0;
};

namespace detail {

inline BoundCheck make_bound_check(double lhs, double bound) {
    BoundCheck b;
    b.lhs = lhs;
    b.bound = bound;
    b.ok = lhs <= bound;
    if (bound > 0.0)
        b.ratio = lhs / bound;
    else
        b.ratio = lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return b;
}

inline double noise_level_bound(double lambda, double sigma, Index n, double p_hat) {
    return lambda / 16.0 * static_cast<double>(n) * std::sqrt(p_hat) * sigma;
}

}  // namespace detail

/// ||P_Omega(E)|| <= (lambda / 16) n sqrt(p_hat) sigma.
inline BoundCheck check_noise_bound(const SparseResidual &noise, double lambda, double sigma, Index n,
                                    double p_hat) {
    if (noise.n_rows() > kDenseDimensionLimit || noise.n_cols() > kDenseDimensionLimit)
        throw std::invalid_argument("check_noise_bound: dense check limited to n <= 1000");
    return detail::make_bound_check(spectral_norm(noise.to_dense()), detail::noise_level_bound(lambda, sigma, n, p_hat));
}

/// ||P_Omega(D) - p_hat D|| <= (lambda / 16) n sqrt(p_hat) sigma with D = XY^T - L*.
inline BoundCheck check_debias_bound(const FactorIterate &it, const ProblemInstance &inst, double lambda) {
    if (inst.n() > kDenseDimensionLimit)
        throw std::invalid_argument("check_debias_bound: dense check limited to n <= 1000");
    const Matrix D = it.product() - inst.L_star();
    const double lhs = spectral_norm(debias(D, inst.obs));
    return detail::make_bound_check(
        lhs, detail::noise_level_bound(lambda, inst.params.sigma, inst.n(), inst.obs.p_hat()));
}

}  // namespace sqrtmc
