#pragma once

#include "sqrtmc/linalg.hpp"
#include "sqrtmc/masked_ops.hpp"
#include "sqrtmc/rng.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqrtmc {

inline constexpr int kGeneratorVersion = 1;

enum class NoiseKind { gaussian, uniform, rademacher };

inline std::string to_string(NoiseKind k) {
    switch (k) {
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::uniform: return "uniform";
    case NoiseKind::rademacher: return "rademacher";
    }
    return "gaussian";
}

inline NoiseKind parse_noise_kind(const std::string &s) {
    if (s == "gaussian")
        return NoiseKind::gaussian;
    if (s == "uniform")
        return NoiseKind::uniform;
    if (s == "rademacher")
        return NoiseKind::rademacher;
    throw std::invalid_argument("unknown noise kind '" + s + "'");
}

/// Everything needed to regenerate an instance bit-for-bit.
struct InstanceParams {
    Index n = 0;
    Index r = 0;
    double p = 1.0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    NoiseKind noise = NoiseKind::gaussian;
    /// Singular values of L*; empty means all ones (orthonormal factors, kappa = 1).
    std::vector<double> singular_values;

    void validate() const {
        if (n < 1)
            throw std::invalid_argument("n must be >= 1");
        if (r < 1 || r > n)
            throw std::invalid_argument("r must satisfy 1 <= r <= n");
        if (!(p > 0.0 && p <= 1.0))
            throw std::invalid_argument("p must lie in (0, 1]");
        if (!(sigma >= 0.0) || !std::isfinite(sigma))
            throw std::invalid_argument("sigma must be finite and >= 0");
        if (!singular_values.empty()) {
            if (static_cast<Index>(singular_values.size()) != r)
                throw std::invalid_argument("singular_values must have exactly r entries");
            for (double s : singular_values)
                if (!(s > 0.0) || !std::isfinite(s))
                    throw std::invalid_argument("singular_values must be positive and finite");
        }
    }
};

/// Synthetic noisy matrix completion problem: L* = X* Y*^T observed on Omega
/// with additive noise.
struct ProblemInstance {
    InstanceParams params;
    Matrix X_star;
    Matrix Y_star;
    ObservationSet obs;
    /// Realised noise E_ij on Omega only (unobserved noise is never drawn).
    SparseResidual noise;
    double sigma_max = 0.0;
    double sigma_min = 0.0;
    double kappa = 0.0;
    double mu = 0.0;

    [[nodiscard]] Index n() const noexcept { return params.n; }
    [[nodiscard]] Index r() const noexcept { return params.r; }
    [[nodiscard]] Matrix L_star() const { return X_star * Y_star.transpose(); }
};

/// n x r matrix with orthonormal columns: QR of an i.i.d. Gaussian matrix with
/// the column signs fixed so that diag(R) > 0 (Haar distributed).
inline Matrix random_orthonormal(Index n, Index r, CounterRng &rng) {
    if (r < 1 || r > n)
        throw std::invalid_argument("random_orthonormal: need 1 <= r <= n");
    Matrix G(n, r);
    for (Index c = 0; c < r; ++c)
        for (Index i = 0; i < n; ++i)
            G(i, c) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ() * Matrix::Identity(n, r);
    const auto &R = qr.matrixQR();
    for (Index c = 0; c < r; ++c)
        if (R(c, c) < 0)
            Q.col(c) *= -1.0;
    return Q;
}

/// Smallest mu with ||U||_{2,inf}^2 <= mu r / n, i.e. (n / r) max_i ||U_i.||^2.
inline double incoherence(const Matrix &U) {
    if (U.cols() == 0 || U.rows() == 0)
        throw std::invalid_argument("incoherence: empty basis");
    if (orthonormality_defect(U) > 1e-8)
        throw std::invalid_argument("incoherence: columns are not orthonormal");
    const double max_row = U.rowwise().squaredNorm().maxCoeff();
    return static_cast<double>(U.rows()) / static_cast<double>(U.cols()) * max_row;
}

/// sigma_1(L) / sigma_r(L) from a full SVD.
inline double condition_number(const Matrix &L, Index r) {
    if (r < 1 || r > std::min(L.rows(), L.cols()))
        throw std::invalid_argument("condition_number: r out of range");
    const Vector s = singular_values(L);
    if (!(s(r - 1) > 1e-12 * s(0)))
        throw RankDeficientError("condition_number: numerical rank is below r");
    return s(0) / s(r - 1);
}

namespace detail {

// Stream ids derived from the master seed.
inline constexpr std::uint64_t kStreamLeft = 1;
inline constexpr std::uint64_t kStreamRight = 2;
inline constexpr std::uint64_t kStreamMask = 3;
inline constexpr std::uint64_t kStreamNoise = 4;

inline double draw_noise(CounterRng &rng, NoiseKind kind, double sigma) {
    switch (kind) {
    case NoiseKind::gaussian: return sigma * rng.normal();
    case NoiseKind::uniform: return sigma * std::sqrt(3.0) * (2.0 * rng.uniform() - 1.0);
    case NoiseKind::rademacher: return rng.bernoulli(0.5) ? sigma : -sigma;
    }
    return 0.0;
}

}  // namespace detail

/// Orthonormal (or spiked-spectrum) groundtruth, Bernoulli(p) mask, noise on
/// Omega. Pure in `params`: same params give bit-identical instances.
inline ProblemInstance generate_instance(const InstanceParams &params) {
    params.validate();
    const CounterRng root{params.seed};
    CounterRng left = root.split(detail::kStreamLeft);
    CounterRng right = root.split(detail::kStreamRight);
    CounterRng mask = root.split(detail::kStreamMask);
    CounterRng noise = root.split(detail::kStreamNoise);

    const Index n = params.n, r = params.r;
    ProblemInstance inst;
    inst.params = params;
    inst.X_star = random_orthonormal(n, r, left);
    inst.Y_star = random_orthonormal(n, r, right);
    if (!params.singular_values.empty()) {
        for (Index c = 0; c < r; ++c) {
            const double root_s = std::sqrt(params.singular_values[static_cast<std::size_t>(c)]);
            inst.X_star.col(c) *= root_s;
            inst.Y_star.col(c) *= root_s;
        }
    }

    const Matrix Xt = inst.X_star.transpose();
    const Matrix Yt = inst.Y_star.transpose();
    std::vector<Triplet> triplets;
    std::vector<double> noise_values;
    triplets.reserve(static_cast<std::size_t>(static_cast<double>(n) * static_cast<double>(n) * params.p * 1.05) + 16);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            if (!mask.bernoulli(params.p))
                continue;
            const double e = params.sigma > 0.0 ? detail::draw_noise(noise, params.noise, params.sigma) : 0.0;
            triplets.push_back({i, j, Xt.col(i).dot(Yt.col(j)) + e});
            noise_values.push_back(e);
        }
    }
    // Generation order is already row-major canonical, so noise_values aligns
    // with the sorted entries.
    inst.obs = ObservationSet::from_triplets(std::move(triplets), n, n);
    inst.noise = SparseResidual{inst.obs.pattern_ptr(), std::move(noise_values)};

    const ThinSvd svd = factored_svd(inst.X_star, inst.Y_star);
    inst.sigma_max = svd.s(0);
    inst.sigma_min = svd.s(r - 1);
    inst.kappa = inst.sigma_max / inst.sigma_min;
    inst.mu = std::max(incoherence(svd.U), incoherence(svd.V));
    return inst;
}

/// Order-sensitive hash of the observed indices and the exact value bits.
inline std::uint64_t obs_checksum(const ObservationSet &obs) {
    std::uint64_t h = hash_combine(static_cast<std::uint64_t>(obs.n_rows()), static_cast<std::uint64_t>(obs.n_cols()));
    const auto &pat = obs.pattern();
    const auto &vals = obs.values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
        h = hash_combine(h, static_cast<std::uint64_t>(pat.rows[k]));
        h = hash_combine(h, static_cast<std::uint64_t>(pat.cols[k]));
        h = hash_combine(h, std::bit_cast<std::uint64_t>(vals[k]));
    }
    return h;
}

}  // namespace sqrtmc
