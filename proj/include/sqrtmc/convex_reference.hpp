#pragma once

#include "sqrtmc/linalg.hpp"
#include "sqrtmc/masked_ops.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqrtmc {

/// Dense reference solvers only run at desk scale.
inline constexpr Index kDenseDimensionLimit = 1000;

/// Result of singular value thresholding with the nuclear norm of the output.
struct SvtResult {
    Matrix Z;
    double nuclear_norm = 0.0;
    Index rank = 0;
};

/// Proximal operator of tau * nuclear norm: U max(S - tau, 0) V^T from a full SVD.
inline SvtResult svt_full(const Matrix &A, double tau) {
    if (!(tau >= 0.0))
        throw std::invalid_argument("svt: tau must be >= 0");
    Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector &s = svd.singularValues();
    Index k = 0;
    while (k < s.size() && s(k) > tau)
        ++k;
    SvtResult out;
    out.rank = k;
    if (k == 0) {
        out.Z = Matrix::Zero(A.rows(), A.cols());
        return out;
    }
    const Vector shrunk = (s.head(k).array() - tau).matrix();
    out.nuclear_norm = shrunk.sum();
    out.Z = svd.matrixU().leftCols(k) * shrunk.asDiagonal() * svd.matrixV().leftCols(k).transpose();
    return out;
}

inline Matrix svt(const Matrix &A, double tau) { return svt_full(A, tau).Z; }

inline double nuclear_norm(const Matrix &A) { return singular_values(A).sum(); }

struct ConvexConfig {
    /// Stop when ||L_k - L_{k-1}||_F <= tol * max(1, ||L_k||_F) between outer rounds.
    double tol = 1e-10;
    int max_outer = 400;
    /// ISTA steps per outer round (square-root solver only).
    int inner_iters = 25;
    double theta_floor_rel = 1e-12;
    /// Vanilla solver: warm-started stages with threshold shrinking by
    /// `continuation_factor` from the level that zeroes the estimate down to
    /// the target; only the last stage solves the target problem.
    bool continuation = true;
    double continuation_factor = 0.1;
    /// Relative-change tolerance of the intermediate stages.
    double stage_tol = 1e-8;
};

struct ConvexSolveReport {
    std::string solver;  // "convex_sqrt" | "vanilla"
    double lambda = 0.0;
    Matrix L_hat;
    /// ||P_Omega(L_hat - M)||_F at exit (floored).
    double theta_hat = 0.0;
    /// Objective after each outer round (every ISTA step of the final stage for vanilla).
    std::vector<double> objective;
    /// ||L - prox(L - grad)||_F / max(1, ||L||_F) at exit.
    double fixed_point_residual = 0.0;
    int outer_rounds = 0;
    long iterations = 0;
    bool converged = false;
    double wall_time_s = 0.0;
};

namespace detail {

/// L - P_Omega(L - M), the gradient step shared by both solvers.
inline Matrix observed_replace(const Matrix &L, const ObservationSet &obs) {
    Matrix out = L;
    const auto &p = obs.pattern();
    const auto &m = obs.values();
    for (std::size_t k = 0; k < m.size(); ++k)
        out(p.rows[k], p.cols[k]) = m[k];
    return out;
}

inline double masked_residual_norm(const Matrix &L, const ObservationSet &obs) {
    const auto &p = obs.pattern();
    const auto &m = obs.values();
    double s = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) {
        const double d = L(p.rows[k], p.cols[k]) - m[k];
        s += d * d;
    }
    return std::sqrt(s);
}

inline void check_dense_problem(const ObservationSet &obs, const char *who) {
    if (obs.n_rows() != obs.n_cols())
        throw std::invalid_argument(std::string(who) + ": square observation sets only");
    if (obs.n_rows() > kDenseDimensionLimit)
        throw std::invalid_argument(std::string(who) + ": dense reference solver limited to n <= 1000");
}

}  // namespace detail

/// g_cvx(L) = ||P_Omega(L - M)||_F + lambda ||L||_*.
inline double objective_convex_sqrt(const Matrix &L, const ObservationSet &obs, double lambda) {
    return detail::masked_residual_norm(L, obs) + lambda * nuclear_norm(L);
}

/// Perspective form (1/2)(||P_Omega(L - M)||_F^2 / theta + theta) + lambda ||L||_*;
/// its minimum over theta is objective_convex_sqrt.
inline double objective_convex_perspective(const Matrix &L, double theta, const ObservationSet &obs,
                                           double lambda) {
    if (!(theta > 0.0))
        throw std::invalid_argument("objective_convex_perspective: theta must be positive");
    const double rho = detail::masked_residual_norm(L, obs);
    return 0.5 * (rho * rho / theta + theta) + lambda * nuclear_norm(L);
}

/// sum over Omega of (L_ij - M_ij)^2 + lambda_v ||L||_*.
inline double objective_vanilla(const Matrix &L, const ObservationSet &obs, double lambda_v) {
    const double r = detail::masked_residual_norm(L, obs);
    return r * r + lambda_v * nuclear_norm(L);
}

/// Square-root program min ||P_Omega(L - M)||_F + lambda ||L||_* through its
/// perspective form: alternate the exact theta = ||P_Omega(L - M)||_F with ISTA
/// steps L <- svt(L - P_Omega(L - M), lambda theta) on the L-subproblem.
inline ConvexSolveReport solve_convex_sqrt(const ObservationSet &obs, double lambda, const ConvexConfig &cfg = {},
                                           const std::optional<Matrix> &warm_start = std::nullopt) {
    detail::check_dense_problem(obs, "solve_convex_sqrt");
    if (!(lambda > 0.0))
        throw std::invalid_argument("solve_convex_sqrt: lambda must be positive");
    const auto start = std::chrono::steady_clock::now();
    const Index n = obs.n_rows();
    const double floor = cfg.theta_floor_rel * std::max(1.0, obs.frobenius_norm());

    ConvexSolveReport rep;
    rep.solver = "convex_sqrt";
    rep.lambda = lambda;
    Matrix L = warm_start ? *warm_start : Matrix::Zero(n, n);
    double nuc = nuclear_norm(L);
    double rho = detail::masked_residual_norm(L, obs);
    rep.objective.push_back(rho + lambda * nuc);

    for (int outer = 0; outer < cfg.max_outer; ++outer) {
        const double theta = std::max(rho, floor);
        const Matrix L_prev = L;
        for (int k = 0; k < cfg.inner_iters; ++k) {
            SvtResult step = svt_full(detail::observed_replace(L, obs), lambda * theta);
            L = std::move(step.Z);
            nuc = step.nuclear_norm;
            ++rep.iterations;
        }
        rho = detail::masked_residual_norm(L, obs);
        rep.objective.push_back(rho + lambda * nuc);
        rep.outer_rounds = outer + 1;
        const double change = (L - L_prev).norm();
        if (change <= cfg.tol * std::max(1.0, L.norm())) {
            rep.converged = true;
            break;
        }
    }

    rep.theta_hat = std::max(rho, floor);
    rep.fixed_point_residual =
        (L - svt(detail::observed_replace(L, obs), lambda * rep.theta_hat)).norm() / std::max(1.0, L.norm());
    rep.L_hat = std::move(L);
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

/// Nuclear norm regularised least squares by ISTA with step 1/2 (the masked
/// quadratic has Lipschitz constant 2): L <- svt(L - P_Omega(L - M), lambda_v / 2).
/// The objective trace covers the final (target) stage.
inline ConvexSolveReport solve_vanilla(const ObservationSet &obs, double lambda_v, const ConvexConfig &cfg = {},
                                       const std::optional<Matrix> &warm_start = std::nullopt) {
    detail::check_dense_problem(obs, "solve_vanilla");
    if (!(lambda_v >= 0.0) || !std::isfinite(lambda_v))
        throw std::invalid_argument("solve_vanilla: lambda_v must be finite and >= 0");
    const auto start = std::chrono::steady_clock::now();
    const Index n = obs.n_rows();
    const double tau_target = 0.5 * lambda_v;

    ConvexSolveReport rep;
    rep.solver = "vanilla";
    rep.lambda = lambda_v;
    Matrix L = warm_start ? *warm_start : Matrix::Zero(n, n);
    const long max_steps = static_cast<long>(cfg.max_outer) * cfg.inner_iters;

    // Above ||P_Omega(M)|| the first step from zero already returns zero.
    std::vector<double> stages;
    if (cfg.continuation && !warm_start && cfg.continuation_factor > 0.0 && cfg.continuation_factor < 1.0) {
        for (double tau = 0.5 * spectral_norm(observed(obs).to_dense()); tau > tau_target;
             tau *= cfg.continuation_factor)
            stages.push_back(tau);
    }
    stages.push_back(tau_target);

    for (std::size_t s = 0; s < stages.size(); ++s) {
        const bool last = s + 1 == stages.size();
        const double tau = stages[s];
        const double tol = last ? cfg.tol : std::max(cfg.tol, cfg.stage_tol);
        if (last) {
            const double r0 = detail::masked_residual_norm(L, obs);
            rep.objective.push_back(r0 * r0 + lambda_v * nuclear_norm(L));
        }
        rep.converged = false;
        while (rep.iterations < max_steps) {
            SvtResult step = svt_full(detail::observed_replace(L, obs), tau);
            const double change = (step.Z - L).norm();
            L = std::move(step.Z);
            ++rep.iterations;
            if (last) {
                const double r = detail::masked_residual_norm(L, obs);
                rep.objective.push_back(r * r + lambda_v * step.nuclear_norm);
            }
            if (change <= tol * std::max(1.0, L.norm())) {
                rep.converged = true;
                break;
            }
        }
    }
    rep.outer_rounds = static_cast<int>(stages.size());
    rep.theta_hat = detail::masked_residual_norm(L, obs);
    rep.fixed_point_residual = (L - svt(detail::observed_replace(L, obs), tau_target)).norm() / std::max(1.0, L.norm());
    rep.L_hat = std::move(L);
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

}  // namespace sqrtmc
