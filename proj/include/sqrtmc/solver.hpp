#pragma once

#include "sqrtmc/instance.hpp"
#include "sqrtmc/linalg.hpp"
#include "sqrtmc/masked_ops.hpp"
#include "sqrtmc/metrics.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqrtmc {

/// State (X_t, Y_t, theta_t) of the factored iteration.
struct FactorIterate {
    Matrix X;
    Matrix Y;
    double theta = 0.0;
    long iter = 0;

    [[nodiscard]] Matrix product() const { return X * Y.transpose(); }
};

enum class InitMode { spectral, oracle };

inline std::string to_string(InitMode m) { return m == InitMode::spectral ? "spectral" : "oracle"; }

inline InitMode parse_init_mode(const std::string &s) {
    if (s == "spectral")
        return InitMode::spectral;
    if (s == "oracle")
        return InitMode::oracle;
    throw std::invalid_argument("unknown init mode '" + s + "' (expected spectral|oracle)");
}

struct SolverConfig {
    /// lambda = lambda_coeff / sqrt(n).
    double lambda_coeff = 4.0;
    /// Reparameterised step eta_tilde = step_coeff / (p_hat * sigma_1_hat); the
    /// X/Y updates use eta = eta_tilde * theta_t.
    double step_coeff = 0.5;
    /// 0 selects 50 * n.
    long max_iters = 0;
    /// Stop when ||grad|| <= grad_tol * lambda * sqrt(sigma_1_hat).
    double grad_tol = 1e-10;
    double theta_floor_rel = 1e-12;
    InitMode init_mode = InitMode::spectral;
    bool line_search = true;
    int max_halvings = 30;
    int trace_every = 1;
    /// Stall: f improved by less than stall_rel * |f| over stall_window iterations.
    long stall_window = 100;
    double stall_rel = 1e-14;

    void validate() const {
        if (!(lambda_coeff > 0.0) || !std::isfinite(lambda_coeff))
            throw std::invalid_argument("lambda_coeff must be positive");
        if (!(step_coeff > 0.0) || !std::isfinite(step_coeff))
            throw std::invalid_argument("step_coeff must be positive");
        if (max_iters < 0)
            throw std::invalid_argument("max_iters must be >= 0");
        if (!(grad_tol >= 0.0))
            throw std::invalid_argument("grad_tol must be >= 0");
        if (!(theta_floor_rel > 0.0))
            throw std::invalid_argument("theta_floor_rel must be positive");
        if (trace_every < 1)
            throw std::invalid_argument("trace_every must be >= 1");
        if (max_halvings < 0 || stall_window < 1)
            throw std::invalid_argument("invalid line-search or stall settings");
    }
};

inline double lambda_for(Index n, double lambda_coeff) {
    return lambda_coeff / std::sqrt(static_cast<double>(n));
}

/// theta floor: theta_floor_rel * max(1, ||P_Omega(M)||_F).
inline double theta_floor(const ObservationSet &obs, double theta_floor_rel) {
    return theta_floor_rel * std::max(1.0, obs.frobenius_norm());
}

/// f(X, Y, theta) = (||P_Omega(XY^T - M)||_F^2 / theta + theta) / 2 + lambda/2 (||X||_F^2 + ||Y||_F^2).
inline double objective_f(const Matrix &X, const Matrix &Y, double theta, const ObservationSet &obs,
                          double lambda) {
    if (!(theta > 0.0))
        throw std::invalid_argument("objective_f: theta must be positive");
    const double rho = masked_frobenius(masked_residual(X, Y, obs));
    return 0.5 * (rho * rho / theta + theta) + 0.5 * lambda * (X.squaredNorm() + Y.squaredNorm());
}

/// g(X, Y) = min over theta of f = ||P_Omega(XY^T - M)||_F + lambda/2 (||X||_F^2 + ||Y||_F^2).
inline double objective_g(const Matrix &X, const Matrix &Y, const ObservationSet &obs, double lambda) {
    const double rho = masked_frobenius(masked_residual(X, Y, obs));
    return rho + 0.5 * lambda * (X.squaredNorm() + Y.squaredNorm());
}

/// Partial gradients of g at (X, Y).
struct GradientG {
    Matrix B1;
    Matrix B2;
    double norm = 0.0;
    /// ||P_Omega(XY^T - M)||_F at the evaluation point.
    double residual_norm = 0.0;
    /// Residual norm fell below the theta floor: g is not differentiable here.
    /// B1/B2 are then evaluated with theta = floor.
    bool kink = false;
};

namespace detail {

inline void partial_gradients(const SparseResidual &res, const Matrix &X, const Matrix &Y, double theta,
                              double lambda, Matrix &B1, Matrix &B2) {
    B1 = sparse_times_dense(res, Y) / theta + lambda * X;
    B2 = sparse_transpose_times_dense(res, X) / theta + lambda * Y;
}

}  // namespace detail

/// B1 = P_Omega(XY^T - M) Y / rho + lambda X and B2 = P_Omega(XY^T - M)^T X / rho + lambda Y,
/// with rho the current residual norm.
inline GradientG gradient_g(const Matrix &X, const Matrix &Y, const ObservationSet &obs, double lambda,
                            double floor) {
    const SparseResidual res = masked_residual(X, Y, obs);
    GradientG g;
    g.residual_norm = masked_frobenius(res);
    g.kink = g.residual_norm < floor;
    const double theta = g.kink ? floor : g.residual_norm;
    detail::partial_gradients(res, X, Y, theta, lambda, g.B1, g.B2);
    g.norm = std::sqrt(g.B1.squaredNorm() + g.B2.squaredNorm());
    return g;
}

inline GradientG gradient_g(const FactorIterate &it, const ObservationSet &obs, double lambda, double floor) {
    return gradient_g(it.X, it.Y, obs, lambda, floor);
}

/// Raised when an update produces non-finite values.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string &what, long iteration)
        : std::runtime_error(what), iteration_{iteration} {}
    [[nodiscard]] long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

/// One simultaneous step on (X, Y) with the stale theta_t, followed by the
/// theta resynchronisation theta_{t+1} = max(||P_Omega(X_{t+1}Y_{t+1}^T - M)||_F, floor).
inline FactorIterate gd_step(const FactorIterate &it, const ObservationSet &obs, double lambda, double eta,
                             double floor) {
    if (!(it.theta > 0.0))
        throw std::invalid_argument("gd_step: theta must be positive");
    const SparseResidual res = masked_residual(it.X, it.Y, obs);
    Matrix B1, B2;
    detail::partial_gradients(res, it.X, it.Y, it.theta, lambda, B1, B2);
    FactorIterate next;
    next.X = it.X - eta * B1;
    next.Y = it.Y - eta * B2;
    next.iter = it.iter + 1;
    if (!next.X.allFinite() || !next.Y.allFinite())
        throw DivergenceError("gd_step: non-finite iterate at iteration " + std::to_string(next.iter), next.iter);
    next.theta = std::max(masked_frobenius(masked_residual(next.X, next.Y, obs)), floor);
    return next;
}

/// X = X*, Y = Y*, theta = ||P_Omega(E)||_F (floored).
inline FactorIterate oracle_init(const ProblemInstance &inst, double floor) {
    if (inst.X_star.size() == 0 || inst.Y_star.size() == 0)
        throw std::invalid_argument("oracle_init: instance carries no groundtruth factors");
    FactorIterate it{inst.X_star, inst.Y_star, 0.0, 0};
    it.theta = std::max(masked_frobenius(masked_residual(it.X, it.Y, inst.obs)), floor);
    return it;
}

/// Top-r SVD U S V^T of P_Omega(M) / p_hat; X = U S^{1/2}, Y = V S^{1/2}.
inline FactorIterate spectral_init(const ObservationSet &obs, Index r, double floor) {
    if (r < 1 || r > std::min(obs.n_rows(), obs.n_cols()))
        throw std::invalid_argument("spectral_init: rank out of range");
    if (obs.empty())
        throw RankDeficientError("spectral_init: no observations");
    const ThinSvd svd = sparse_top_svd(observed(obs), r, 1.0 / obs.p_hat());
    if (!(svd.s(0) > 0.0) || !(svd.s(r - 1) > 1e-12 * svd.s(0)))
        throw RankDeficientError("spectral_init: rank exceeds the numerical rank of the rescaled observations");
    const Vector root = svd.s.cwiseSqrt();
    FactorIterate it{svd.U * root.asDiagonal(), svd.V * root.asDiagonal(), 0.0, 0};
    it.theta = std::max(masked_frobenius(masked_residual(it.X, it.Y, obs)), floor);
    return it;
}

enum class StopReason { grad_tol, max_iters, stall, kink };

inline std::string to_string(StopReason s) {
    switch (s) {
    case StopReason::grad_tol: return "grad_tol";
    case StopReason::max_iters: return "max_iters";
    case StopReason::stall: return "stall";
    case StopReason::kink: return "kink";
    }
    return "max_iters";
}

/// Column-oriented per-iteration log.
struct SolveTrace {
    std::vector<long> t;
    std::vector<double> f;
    std::vector<double> g;
    std::vector<double> grad_norm;
    std::vector<double> theta;
    std::vector<double> step;

    [[nodiscard]] std::size_t size() const noexcept { return t.size(); }
};

struct SolveReport {
    SolverConfig config;
    double lambda = 0.0;
    double eta_tilde = 0.0;
    double theta_floor = 0.0;
    /// sigma_1 of the initial iterate (spectral init estimate).
    double sigma1_hat = 0.0;
    /// grad_tol * lambda * sqrt(sigma1_hat)
    double grad_threshold = 0.0;

    /// Iterate with the smallest logged gradient norm (earliest on ties), or the
    /// exact-fit iterate when the kink condition stopped the run.
    FactorIterate best;
    double best_grad_norm = std::numeric_limits<double>::infinity();
    long t_star = 0;

    long iterations = 0;
    double theta_final = 0.0;
    StopReason stop_reason = StopReason::max_iters;
    SolveTrace trace;
    double wall_time_s = 0.0;
    std::optional<ErrorMetrics> metrics;

    [[nodiscard]] Matrix estimate() const { return best.product(); }
};

/// DivergenceError carrying the partial report.
class SolveDivergedError : public DivergenceError {
public:
    SolveDivergedError(const std::string &what, long iteration, SolveReport partial)
        : DivergenceError(what, iteration), partial_{std::move(partial)} {}
    [[nodiscard]] const SolveReport &partial() const noexcept { return partial_; }

private:
    SolveReport partial_;
};

/// Called on every logged iterate with its gradient norm.
using IterateObserver = std::function<void(const FactorIterate &, double grad_norm)>;

/// Factored gradient descent on f with the adaptive theta update and the
/// smallest-gradient output rule, started from `init`.
inline SolveReport solve(const ObservationSet &obs, const SolverConfig &config, FactorIterate init,
                         const ProblemInstance *groundtruth = nullptr, const IterateObserver &observer = {}) {
    config.validate();
    if (obs.n_rows() != obs.n_cols())
        throw std::invalid_argument("solve: only square observation sets are supported");
    if (obs.empty())
        throw std::invalid_argument("solve: no observations");
    if (init.X.rows() != obs.n_rows() || init.Y.rows() != obs.n_cols() || init.X.cols() != init.Y.cols())
        throw std::invalid_argument("solve: initial factors do not match the observation set");

    const auto start = std::chrono::steady_clock::now();
    const Index n = obs.n_rows();
    SolveReport rep;
    rep.config = config;
    rep.lambda = lambda_for(n, config.lambda_coeff);
    rep.theta_floor = theta_floor(obs, config.theta_floor_rel);
    rep.sigma1_hat = factored_svd(init.X, init.Y).s(0);
    rep.eta_tilde = config.step_coeff / (obs.p_hat() * rep.sigma1_hat);
    rep.grad_threshold = config.grad_tol * rep.lambda * std::sqrt(rep.sigma1_hat);
    const long max_iters = config.max_iters > 0 ? config.max_iters : 50L * static_cast<long>(n);
    const double lambda = rep.lambda;
    const double floor = rep.theta_floor;

    FactorIterate cur = std::move(init);
    cur.iter = 0;
    SparseResidual res = masked_residual(cur.X, cur.Y, obs);
    double rho = masked_frobenius(res);
    cur.theta = std::max(rho, floor);
    double f_cur = 0.5 * (rho * rho / cur.theta + cur.theta) + 0.5 * lambda * (cur.X.squaredNorm() + cur.Y.squaredNorm());

    std::deque<double> f_window;
    double last_step = 0.0;
    Matrix B1, B2;

    auto finish = [&](StopReason reason) {
        rep.stop_reason = reason;
        rep.iterations = cur.iter;
        rep.theta_final = cur.theta;
        if (groundtruth)
            rep.metrics = error_metrics(rep.best.X, rep.best.Y, *groundtruth);
        rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return rep;
    };

    for (;;) {
        const long t = cur.iter;
        const double reg = 0.5 * lambda * (cur.X.squaredNorm() + cur.Y.squaredNorm());
        const double g_cur = rho + reg;

        if (rho < floor) {
            rep.trace.t.push_back(t);
            rep.trace.f.push_back(f_cur);
            rep.trace.g.push_back(g_cur);
            rep.trace.grad_norm.push_back(std::numeric_limits<double>::quiet_NaN());
            rep.trace.theta.push_back(cur.theta);
            rep.trace.step.push_back(last_step);
            rep.best = cur;
            rep.best_grad_norm = std::numeric_limits<double>::quiet_NaN();
            rep.t_star = t;
            return finish(StopReason::kink);
        }

        detail::partial_gradients(res, cur.X, cur.Y, cur.theta, lambda, B1, B2);
        const double grad_norm = std::sqrt(B1.squaredNorm() + B2.squaredNorm());

        const bool logged = (t % config.trace_every) == 0;
        if (logged) {
            rep.trace.t.push_back(t);
            rep.trace.f.push_back(f_cur);
            rep.trace.g.push_back(g_cur);
            rep.trace.grad_norm.push_back(grad_norm);
            rep.trace.theta.push_back(cur.theta);
            rep.trace.step.push_back(last_step);
            if (grad_norm < rep.best_grad_norm) {
                rep.best = cur;
                rep.best_grad_norm = grad_norm;
                rep.t_star = t;
            }
            if (observer)
                observer(cur, grad_norm);
        }

        if (grad_norm <= rep.grad_threshold) {
            if (!logged) {
                rep.best = cur;
                rep.best_grad_norm = grad_norm;
                rep.t_star = t;
            }
            return finish(StopReason::grad_tol);
        }
        if (t >= max_iters)
            return finish(StopReason::max_iters);
        f_window.push_back(f_cur);
        if (static_cast<long>(f_window.size()) > config.stall_window) {
            const double improvement = f_window.front() - f_cur;
            f_window.pop_front();
            if (improvement < config.stall_rel * std::abs(f_cur))
                return finish(StopReason::stall);
        }

        // Step: eta = eta_tilde * theta_t, so the update is X - eta_tilde (S Y + lambda theta_t X).
        double eta = rep.eta_tilde * cur.theta;
        bool accepted = false;
        FactorIterate next;
        SparseResidual next_res;
        double next_rho = 0.0, next_f = 0.0;
        for (int h = 0; h <= config.max_halvings; ++h) {
            next.X = cur.X - eta * B1;
            next.Y = cur.Y - eta * B2;
            const bool finite = next.X.allFinite() && next.Y.allFinite();
            if (finite) {
                next_res = masked_residual(next.X, next.Y, obs);
                next_rho = masked_frobenius(next_res);
                next.theta = std::max(next_rho, floor);
                next_f = 0.5 * (next_rho * next_rho / next.theta + next.theta) +
                         0.5 * lambda * (next.X.squaredNorm() + next.Y.squaredNorm());
            }
            const bool ok = finite && std::isfinite(next_f);
            if (!config.line_search) {
                if (!ok) {
                    rep.iterations = t;
                    rep.stop_reason = StopReason::max_iters;
                    rep.wall_time_s =
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                    throw SolveDivergedError("solve: non-finite iterate at iteration " + std::to_string(t + 1),
                                             t + 1, rep);
                }
                accepted = true;
                break;
            }
            if (ok && next_f <= f_cur) {
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if (!accepted)
            return finish(StopReason::stall);

        next.iter = t + 1;
        last_step = eta;
        cur = std::move(next);
        res = std::move(next_res);
        rho = next_rho;
        f_cur = next_f;
    }
}

/// Initial iterate according to `config.init_mode`; oracle mode needs groundtruth.
inline FactorIterate initial_iterate(const ObservationSet &obs, Index r, const SolverConfig &config,
                                     const ProblemInstance *groundtruth) {
    const double floor = theta_floor(obs, config.theta_floor_rel);
    if (config.init_mode == InitMode::oracle) {
        if (!groundtruth)
            throw std::invalid_argument("oracle init requires groundtruth factors");
        return oracle_init(*groundtruth, floor);
    }
    return spectral_init(obs, r, floor);
}

inline SolveReport solve(const ObservationSet &obs, Index r, const SolverConfig &config,
                         const ProblemInstance *groundtruth = nullptr, const IterateObserver &observer = {}) {
    return solve(obs, config, initial_iterate(obs, r, config, groundtruth), groundtruth, observer);
}

inline SolveReport solve(const ProblemInstance &inst, const SolverConfig &config,
                         const IterateObserver &observer = {}) {
    return solve(inst.obs, inst.r(), config, &inst, observer);
}

/// Orthogonal Procrustes rotation aligning F to F_star.
struct Alignment {
    Matrix H;
    /// Cross-Gram F^T F_star is rank deficient, so H is not unique.
    bool ambiguous = false;
};

/// H = argmin over orthogonal R of ||F R - F_star||_F, from the SVD of F^T F_star.
/// Singular vector signs are fixed so the first nonzero entry of each left
/// singular vector is positive.
inline Alignment align_factors(const Matrix &F, const Matrix &F_star) {
    if (F.rows() != F_star.rows() || F.cols() != F_star.cols())
        throw std::invalid_argument("align_factors: shape mismatch");
    Eigen::JacobiSVD<Matrix> svd(F.transpose() * F_star, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix A = svd.matrixU();
    Matrix B = svd.matrixV();
    for (Index c = 0; c < A.cols(); ++c) {
        for (Index i = 0; i < A.rows(); ++i) {
            if (std::abs(A(i, c)) > 1e-14) {
                if (A(i, c) < 0) {
                    A.col(c) *= -1.0;
                    B.col(c) *= -1.0;
                }
                break;
            }
        }
    }
    Alignment out;
    out.H = A * B.transpose();
    const Vector &s = svd.singularValues();
    out.ambiguous = s.size() > 0 && !(s(s.size() - 1) > 1e-12 * std::max(s(0), 1e-300));
    return out;
}

/// ||X^T X - Y^T Y||_F.
inline double balance_defect(const Matrix &X, const Matrix &Y) {
    return (X.transpose() * X - Y.transpose() * Y).norm();
}

}  // namespace sqrtmc
