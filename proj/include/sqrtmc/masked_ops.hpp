#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqrtmc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct Triplet {
    Index i;
    Index j;
    double value;
};

/// Index structure of an observation set: row-major sorted (i, j) pairs plus a
/// per-row offset table. Shared (immutable) between an ObservationSet and every
/// SparseResidual derived from it.
struct SparsityPattern {
    Index n_rows = 0;
    Index n_cols = 0;
    std::vector<Index> rows;
    std::vector<Index> cols;
    std::vector<Index> row_offsets;  // size n_rows + 1

    [[nodiscard]] Index nnz() const noexcept { return static_cast<Index>(rows.size()); }
};

/// Observed entries M_ij on the index set Omega.
class ObservationSet {
public:
    ObservationSet() : pattern_{std::make_shared<SparsityPattern>()} {}

    /// Validates, sorts into canonical (row-major) order and builds the offset table.
    /// Throws std::invalid_argument on out-of-range or duplicate indices.
    static ObservationSet from_triplets(std::vector<Triplet> triplets, Index n_rows, Index n_cols) {
        if (n_rows <= 0 || n_cols <= 0)
            throw std::invalid_argument("observation set dimensions must be positive");
        for (const auto &t : triplets) {
            if (t.i < 0 || t.i >= n_rows || t.j < 0 || t.j >= n_cols) {
                std::ostringstream os;
                os << "observation index (" << t.i << "," << t.j << ") out of range for " << n_rows << "x"
                   << n_cols;
                throw std::invalid_argument(os.str());
            }
            if (!std::isfinite(t.value)) {
                std::ostringstream os;
                os << "non-finite observed value at (" << t.i << "," << t.j << ")";
                throw std::invalid_argument(os.str());
            }
        }
        std::sort(triplets.begin(), triplets.end(), [](const Triplet &a, const Triplet &b) {
            return a.i != b.i ? a.i < b.i : a.j < b.j;
        });
        for (std::size_t k = 1; k < triplets.size(); ++k) {
            if (triplets[k].i == triplets[k - 1].i && triplets[k].j == triplets[k - 1].j) {
                std::ostringstream os;
                os << "duplicate observation index (" << triplets[k].i << "," << triplets[k].j << ")";
                throw std::invalid_argument(os.str());
            }
        }

        auto pattern = std::make_shared<SparsityPattern>();
        pattern->n_rows = n_rows;
        pattern->n_cols = n_cols;
        pattern->rows.reserve(triplets.size());
        pattern->cols.reserve(triplets.size());
        pattern->row_offsets.assign(static_cast<std::size_t>(n_rows) + 1, 0);
        std::vector<double> values;
        values.reserve(triplets.size());
        for (const auto &t : triplets) {
            pattern->rows.push_back(t.i);
            pattern->cols.push_back(t.j);
            values.push_back(t.value);
            ++pattern->row_offsets[static_cast<std::size_t>(t.i) + 1];
        }
        for (std::size_t r = 0; r < static_cast<std::size_t>(n_rows); ++r)
            pattern->row_offsets[r + 1] += pattern->row_offsets[r];

        return ObservationSet{std::move(pattern), std::move(values)};
    }

    [[nodiscard]] Index n_rows() const noexcept { return pattern_->n_rows; }
    [[nodiscard]] Index n_cols() const noexcept { return pattern_->n_cols; }
    [[nodiscard]] Index size() const noexcept { return pattern_->nnz(); }
    [[nodiscard]] bool empty() const noexcept { return size() == 0; }

    /// Empirical sampling rate |Omega| / (n_rows * n_cols).
    [[nodiscard]] double p_hat() const noexcept {
        if (n_rows() == 0 || n_cols() == 0)
            return 0.0;
        return static_cast<double>(size()) / (static_cast<double>(n_rows()) * static_cast<double>(n_cols()));
    }

    [[nodiscard]] const SparsityPattern &pattern() const noexcept { return *pattern_; }
    [[nodiscard]] const std::shared_ptr<const SparsityPattern> &pattern_ptr() const noexcept { return pattern_; }
    [[nodiscard]] const std::vector<double> &values() const noexcept { return values_; }

    [[nodiscard]] Triplet entry(Index k) const {
        const auto u = static_cast<std::size_t>(k);
        return {pattern_->rows[u], pattern_->cols[u], values_[u]};
    }

    [[nodiscard]] std::vector<Triplet> triplets() const {
        std::vector<Triplet> out;
        out.reserve(values_.size());
        for (Index k = 0; k < size(); ++k)
            out.push_back(entry(k));
        return out;
    }

    /// ||P_Omega(M)||_F.
    [[nodiscard]] double frobenius_norm() const noexcept {
        double s = 0.0;
        for (double v : values_)
            s += v * v;
        return std::sqrt(s);
    }

private:
    ObservationSet(std::shared_ptr<const SparsityPattern> pattern, std::vector<double> values)
        : pattern_{std::move(pattern)}, values_{std::move(values)} {}

    std::shared_ptr<const SparsityPattern> pattern_;
    std::vector<double> values_;
};

/// Values living on the index set of an ObservationSet, e.g. P_Omega(XY^T - M)
/// or the observed noise P_Omega(E).
class SparseResidual {
public:
    SparseResidual() : pattern_{std::make_shared<SparsityPattern>()} {}

    SparseResidual(std::shared_ptr<const SparsityPattern> pattern, std::vector<double> values)
        : pattern_{std::move(pattern)}, values_{std::move(values)} {
        if (!pattern_ || static_cast<Index>(values_.size()) != pattern_->nnz())
            throw std::invalid_argument("sparse residual: value count does not match index set");
    }

    [[nodiscard]] Index n_rows() const noexcept { return pattern_->n_rows; }
    [[nodiscard]] Index n_cols() const noexcept { return pattern_->n_cols; }
    [[nodiscard]] Index size() const noexcept { return pattern_->nnz(); }
    [[nodiscard]] const SparsityPattern &pattern() const noexcept { return *pattern_; }
    [[nodiscard]] const std::shared_ptr<const SparsityPattern> &pattern_ptr() const noexcept { return pattern_; }
    [[nodiscard]] const std::vector<double> &values() const noexcept { return values_; }

    /// True when both share the exact index structure object of `obs`.
    [[nodiscard]] bool shares_pattern(const ObservationSet &obs) const noexcept {
        return pattern_ == obs.pattern_ptr();
    }

    [[nodiscard]] Matrix to_dense() const {
        Matrix out = Matrix::Zero(n_rows(), n_cols());
        const auto &p = *pattern_;
        for (std::size_t k = 0; k < values_.size(); ++k)
            out(p.rows[k], p.cols[k]) = values_[k];
        return out;
    }

private:
    std::shared_ptr<const SparsityPattern> pattern_;
    std::vector<double> values_;
};

namespace detail {

inline void require(bool cond, const char *what) {
    if (!cond)
        throw std::invalid_argument(what);
}

}  // namespace detail

/// P_Omega(XY^T - M) evaluated entry by entry; never forms the dense product.
inline SparseResidual masked_residual(const Matrix &X, const Matrix &Y, const ObservationSet &obs) {
    detail::require(X.rows() == obs.n_rows() && Y.rows() == obs.n_cols(),
                    "masked_residual: factor row counts do not match the observation set");
    detail::require(X.cols() == Y.cols(), "masked_residual: factor ranks differ");
    const Matrix Xt = X.transpose();
    const Matrix Yt = Y.transpose();
    const auto &p = obs.pattern();
    const auto &m = obs.values();
    std::vector<double> values(m.size());
    for (std::size_t k = 0; k < m.size(); ++k)
        values[k] = Xt.col(p.rows[k]).dot(Yt.col(p.cols[k])) - m[k];
    return SparseResidual{obs.pattern_ptr(), std::move(values)};
}

/// P_Omega(A) for a dense A, stored on the index set of `obs`.
inline SparseResidual mask(const Matrix &A, const ObservationSet &obs) {
    detail::require(A.rows() == obs.n_rows() && A.cols() == obs.n_cols(), "mask: dimension mismatch");
    const auto &p = obs.pattern();
    std::vector<double> values(static_cast<std::size_t>(p.nnz()));
    for (std::size_t k = 0; k < values.size(); ++k)
        values[k] = A(p.rows[k], p.cols[k]);
    return SparseResidual{obs.pattern_ptr(), std::move(values)};
}

/// The observed values M on Omega, as a residual-shaped object.
inline SparseResidual observed(const ObservationSet &obs) {
    return SparseResidual{obs.pattern_ptr(), obs.values()};
}

inline double masked_frobenius(const SparseResidual &res) noexcept {
    double s = 0.0;
    for (double v : res.values())
        s += v * v;
    return std::sqrt(s);
}

/// S * Y where S is the residual viewed as a dense n_rows x n_cols matrix.
inline Matrix sparse_times_dense(const SparseResidual &res, const Matrix &Y) {
    detail::require(Y.rows() == res.n_cols(), "sparse_times_dense: dimension mismatch");
    const Matrix Yt = Y.transpose();
    Matrix outT = Matrix::Zero(Y.cols(), res.n_rows());
    const auto &p = res.pattern();
    const auto &v = res.values();
    for (Index i = 0; i < p.n_rows; ++i) {
        auto acc = outT.col(i);
        for (Index k = p.row_offsets[static_cast<std::size_t>(i)]; k < p.row_offsets[static_cast<std::size_t>(i) + 1]; ++k)
            acc.noalias() += v[static_cast<std::size_t>(k)] * Yt.col(p.cols[static_cast<std::size_t>(k)]);
    }
    return outT.transpose();
}

/// S^T * X.
inline Matrix sparse_transpose_times_dense(const SparseResidual &res, const Matrix &X) {
    detail::require(X.rows() == res.n_rows(), "sparse_transpose_times_dense: dimension mismatch");
    const Matrix Xt = X.transpose();
    Matrix outT = Matrix::Zero(X.cols(), res.n_cols());
    const auto &p = res.pattern();
    const auto &v = res.values();
    for (std::size_t k = 0; k < v.size(); ++k)
        outT.col(p.cols[k]).noalias() += v[k] * Xt.col(p.rows[k]);
    return outT.transpose();
}

/// P_Omega^debias(A) = P_Omega(A) - p_hat * A, dense. Desk-scale helper.
inline Matrix debias(const Matrix &A, const ObservationSet &obs) {
    detail::require(A.rows() == obs.n_rows() && A.cols() == obs.n_cols(), "debias: dimension mismatch");
    Matrix out = -obs.p_hat() * A;
    const auto &p = obs.pattern();
    for (std::size_t k = 0; k < p.rows.size(); ++k)
        out(p.rows[k], p.cols[k]) += A(p.rows[k], p.cols[k]);
    return out;
}

/// Dense P_Omega(A).
inline Matrix project_dense(const Matrix &A, const ObservationSet &obs) {
    detail::require(A.rows() == obs.n_rows() && A.cols() == obs.n_cols(), "project_dense: dimension mismatch");
    Matrix out = Matrix::Zero(A.rows(), A.cols());
    const auto &p = obs.pattern();
    for (std::size_t k = 0; k < p.rows.size(); ++k)
        out(p.rows[k], p.cols[k]) = A(p.rows[k], p.cols[k]);
    return out;
}

// Triplet CSV: header `i,j,value`, zero-based indices, one entry per line.

inline void write_triplets_csv(std::ostream &os, const ObservationSet &obs) {
    os << "i,j,value\n";
    const auto old_precision = os.precision(17);
    for (Index k = 0; k < obs.size(); ++k) {
        const auto t = obs.entry(k);
        os << t.i << ',' << t.j << ',' << t.value << '\n';
    }
    os.precision(old_precision);
}

inline ObservationSet read_triplets_csv(std::istream &is, Index n_rows, Index n_cols) {
    std::string line;
    if (!std::getline(is, line))
        throw std::invalid_argument("triplet csv: missing header");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != "i,j,value")
        throw std::invalid_argument("triplet csv: expected header 'i,j,value', got '" + line + "'");
    std::vector<Triplet> triplets;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        std::istringstream ls(line);
        long long i = 0, j = 0;
        double value = 0.0;
        char c1 = 0, c2 = 0;
        if (!(ls >> i >> c1 >> j >> c2 >> value) || c1 != ',' || c2 != ',')
            throw std::invalid_argument("triplet csv: malformed line " + std::to_string(line_no));
        triplets.push_back({static_cast<Index>(i), static_cast<Index>(j), value});
    }
    return ObservationSet::from_triplets(std::move(triplets), n_rows, n_cols);
}

}  // namespace sqrtmc
