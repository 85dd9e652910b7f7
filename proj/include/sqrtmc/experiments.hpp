#pragma once

#include "sqrtmc/convex_reference.hpp"
#include "sqrtmc/instance.hpp"
#include "sqrtmc/metrics.hpp"
#include "sqrtmc/rng.hpp"
#include "sqrtmc/solver.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sqrtmc {

enum class SweepMode { sigma_sweep, n_sweep, p_sweep, proximity };

inline std::string to_string(SweepMode m) {
    switch (m) {
    case SweepMode::sigma_sweep: return "sigma_sweep";
    case SweepMode::n_sweep: return "n_sweep";
    case SweepMode::p_sweep: return "p_sweep";
    case SweepMode::proximity: return "proximity";
    }
    return "sigma_sweep";
}

inline SweepMode parse_sweep_mode(const std::string &s) {
    if (s == "sigma_sweep")
        return SweepMode::sigma_sweep;
    if (s == "n_sweep")
        return SweepMode::n_sweep;
    if (s == "p_sweep")
        return SweepMode::p_sweep;
    if (s == "proximity")
        return SweepMode::proximity;
    throw std::invalid_argument("unknown sweep mode '" + s + "'");
}

/// `count` points from lo to hi, equally spaced in log scale.
inline std::vector<double> logspace(double lo, double hi, int count) {
    if (!(lo > 0.0 && hi > 0.0) || count < 1)
        throw std::invalid_argument("logspace: need positive endpoints and count >= 1");
    std::vector<double> out(static_cast<std::size_t>(count));
    if (count == 1) {
        out[0] = lo;
        return out;
    }
    const double a = std::log10(lo), b = std::log10(hi);
    for (int k = 0; k < count; ++k)
        out[static_cast<std::size_t>(k)] = std::pow(10.0, a + (b - a) * k / (count - 1));
    out.front() = lo;
    out.back() = hi;
    return out;
}

struct SweepSpec {
    std::string name = "custom";
    SweepMode mode = SweepMode::sigma_sweep;
    /// Fixed parameters; the swept one is overridden per grid point.
    Index n = 500;
    Index r = 5;
    double p = 0.5;
    double sigma = 1e-4;
    NoiseKind noise = NoiseKind::gaussian;
    std::vector<double> grid;
    int trials = 5;
    std::uint64_t base_seed = 20240601;
    SolverConfig solver;
    ConvexConfig convex;
    /// Off: wall_time_s is written as 0 so identical specs give identical bytes.
    bool record_timing = true;

    [[nodiscard]] std::string swept_param() const {
        switch (mode) {
        case SweepMode::sigma_sweep:
        case SweepMode::proximity: return "sigma";
        case SweepMode::n_sweep: return "n";
        case SweepMode::p_sweep: return "p";
        }
        return "sigma";
    }

    [[nodiscard]] std::size_t row_count() const { return grid.size() * static_cast<std::size_t>(trials); }

    /// Instance parameters of row (point, trial).
    [[nodiscard]] InstanceParams params_at(std::size_t point, int trial) const;

    void validate() const;
};

/// Per-row seed: hash of (base seed, grid index, trial).
inline std::uint64_t row_seed(std::uint64_t base, std::size_t point, int trial) {
    return hash_combine(hash_combine(base, static_cast<std::uint64_t>(point)), static_cast<std::uint64_t>(trial));
}

inline InstanceParams SweepSpec::params_at(std::size_t point, int trial) const {
    InstanceParams prm;
    prm.n = n;
    prm.r = r;
    prm.p = p;
    prm.sigma = sigma;
    prm.noise = noise;
    prm.seed = row_seed(base_seed, point, trial);
    const double v = grid.at(point);
    switch (mode) {
    case SweepMode::sigma_sweep:
    case SweepMode::proximity: prm.sigma = v; break;
    case SweepMode::n_sweep: prm.n = static_cast<Index>(std::llround(v)); break;
    case SweepMode::p_sweep: prm.p = v; break;
    }
    return prm;
}

inline void SweepSpec::validate() const {
    if (grid.empty())
        throw std::invalid_argument("sweep: grid is empty");
    if (trials < 1)
        throw std::invalid_argument("sweep: trials must be >= 1");
    for (std::size_t k = 1; k < grid.size(); ++k)
        if (!(grid[k] > grid[k - 1]))
            throw std::invalid_argument("sweep: grid must be strictly increasing");
    if (mode == SweepMode::n_sweep)
        for (double v : grid)
            if (v < 1.0 || std::abs(v - std::round(v)) > 0.0)
                throw std::invalid_argument("sweep: n grid values must be positive integers");
    for (std::size_t k = 0; k < grid.size(); ++k)
        params_at(k, 0).validate();
    if (mode == SweepMode::proximity)
        for (std::size_t k = 0; k < grid.size(); ++k)
            if (params_at(k, 0).n > kDenseDimensionLimit)
                throw std::invalid_argument("sweep: proximity mode needs n <= 1000");
    solver.validate();
    std::set<std::uint64_t> seeds;
    for (std::size_t k = 0; k < grid.size(); ++k)
        for (int t = 0; t < trials; ++t)
            if (!seeds.insert(row_seed(base_seed, k, t)).second)
                throw std::invalid_argument("sweep: per-row seed collision");
}

/// Desk-scale presets and their paper-scale counterparts (suffix "-paper").
inline std::vector<std::string> preset_names() {
    return {"fig1a", "fig1b", "fig1c", "fig2-proximity",
            "fig1a-paper", "fig1b-paper", "fig1c-paper", "fig2-proximity-paper"};
}

inline SweepSpec preset(const std::string &name) {
    SweepSpec s;
    s.name = name;
    s.r = 5;
    s.solver.lambda_coeff = 4.0;
    if (name == "fig1a" || name == "fig1a-paper") {
        s.mode = SweepMode::sigma_sweep;
        s.n = 500;
        s.p = 0.5;
        s.grid = logspace(1e-4, 1e-1, 7);
        s.trials = name == "fig1a" ? 5 : 20;
    } else if (name == "fig1b") {
        s.mode = SweepMode::n_sweep;
        s.sigma = 1e-4;
        s.p = 0.5;
        s.grid = {100, 200, 400, 800};
        s.trials = 5;
    } else if (name == "fig1b-paper") {
        s.mode = SweepMode::n_sweep;
        s.sigma = 1e-4;
        s.p = 0.5;
        s.grid = {500, 1000, 1500, 2000, 2500, 3000};
        s.trials = 20;
    } else if (name == "fig1c" || name == "fig1c-paper") {
        s.mode = SweepMode::p_sweep;
        s.n = name == "fig1c" ? 400 : 2000;
        s.sigma = 1e-4;
        s.grid = logspace(0.1, 0.8, 5);
        s.trials = name == "fig1c" ? 5 : 20;
    } else if (name == "fig2-proximity" || name == "fig2-proximity-paper") {
        s.mode = SweepMode::proximity;
        s.n = 200;
        s.p = 0.5;
        s.grid = name == "fig2-proximity" ? std::vector<double>{1e-5, 1e-4, 1e-3} : logspace(1e-5, 1e-3, 5);
        s.trials = name == "fig2-proximity" ? 1 : 20;
    } else {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    return s;
}

struct SweepRow {
    std::size_t point = 0;
    double swept_value = 0.0;
    int trial = 0;
    std::uint64_t seed = 0;
    double rel_fro = std::numeric_limits<double>::quiet_NaN();
    double rel_spec = std::numeric_limits<double>::quiet_NaN();
    double rel_inf = std::numeric_limits<double>::quiet_NaN();
    double grad_norm = std::numeric_limits<double>::quiet_NaN();
    long iterations = 0;
    double wall_time_s = 0.0;
    /// "ok", "diverged", "convex_unconverged" or "failed".
    std::string status = "ok";
    std::optional<double> proximity_fro;

    [[nodiscard]] bool ok() const { return status == "ok"; }
};

struct PointMean {
    double swept_value = 0.0;
    double rel_fro = 0.0;
    double rel_spec = 0.0;
    double rel_inf = 0.0;
    std::size_t rows_used = 0;
};

struct SweepResult {
    SweepSpec spec;
    std::vector<SweepRow> rows;
    std::vector<PointMean> means;
};

/// Per-point means over rows with status "ok"; points without any are dropped.
inline std::vector<PointMean> aggregate(const std::vector<SweepRow> &rows) {
    std::vector<PointMean> out;
    for (const SweepRow &row : rows) {
        if (out.empty() || out.back().swept_value != row.swept_value)
            out.push_back({row.swept_value, 0.0, 0.0, 0.0, 0});
        if (!row.ok())
            continue;
        PointMean &m = out.back();
        m.rel_fro += row.rel_fro;
        m.rel_spec += row.rel_spec;
        m.rel_inf += row.rel_inf;
        ++m.rows_used;
    }
    std::vector<PointMean> kept;
    for (PointMean m : out) {
        if (m.rows_used == 0)
            continue;
        const double k = static_cast<double>(m.rows_used);
        m.rel_fro /= k;
        m.rel_spec /= k;
        m.rel_inf /= k;
        kept.push_back(m);
    }
    return kept;
}

/// Sees every successful row with its solve report; may run on worker threads.
using SweepRowHook = std::function<void(const SweepRow &, const SolveReport &)>;

/// One grid point x trial: generate, solve, score.
inline SweepRow run_sweep_row(const SweepSpec &spec, std::size_t point, int trial, const SweepRowHook &hook = {}) {
    SweepRow row;
    row.point = point;
    row.swept_value = spec.grid[point];
    row.trial = trial;
    row.seed = row_seed(spec.base_seed, point, trial);
    const auto start = std::chrono::steady_clock::now();
    try {
        const ProblemInstance inst = generate_instance(spec.params_at(point, trial));
        const SolveReport rep = solve(inst, spec.solver);
        const ErrorMetrics m = rep.metrics ? *rep.metrics : error_metrics(rep.best.X, rep.best.Y, inst);
        row.rel_fro = m.rel_fro;
        row.rel_spec = m.rel_spec;
        row.rel_inf = m.rel_inf;
        row.grad_norm = rep.best_grad_norm;
        row.iterations = rep.iterations;
        if (spec.mode == SweepMode::proximity) {
            const ConvexSolveReport cvx = solve_convex_sqrt(inst.obs, rep.lambda, spec.convex);
            row.proximity_fro = (rep.best.product() - cvx.L_hat).norm();
            if (!cvx.converged)
                row.status = "convex_unconverged";
        }
        if (hook)
            hook(row, rep);
    } catch (const DivergenceError &) {
        row.status = "diverged";
    } catch (const std::exception &) {
        row.status = "failed";
    }
    if (spec.record_timing)
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

/// Worker count from SQRTMC_WORKERS, else 1.
inline int workers_from_env() {
    if (const char *env = std::getenv("SQRTMC_WORKERS")) {
        char *end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1)
            return static_cast<int>(v);
    }
    return 1;
}

/// Runs every (point, trial) row, up to `workers` at a time. Rows come back
/// ordered by (grid index, trial) whatever the completion order.
inline SweepResult run_sweep(const SweepSpec &spec, int workers = 1, const SweepRowHook &hook = {}) {
    spec.validate();
    if (workers < 1)
        throw std::invalid_argument("sweep: workers must be >= 1");
    SweepResult out;
    out.spec = spec;
    out.rows.resize(spec.row_count());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k = next++; k < out.rows.size(); k = next++) {
            const std::size_t point = k / static_cast<std::size_t>(spec.trials);
            const int trial = static_cast<int>(k % static_cast<std::size_t>(spec.trials));
            out.rows[k] = run_sweep_row(spec, point, trial, hook);
        }
    };
    const int count = std::min<int>(workers, static_cast<int>(out.rows.size()));
    if (count <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(count));
        for (int w = 0; w < count; ++w)
            pool.emplace_back(work);
        for (auto &t : pool)
            t.join();
    }
    out.means = aggregate(out.rows);
    return out;
}

inline std::string csv_header(bool proximity) {
    std::string h = "mode,swept_param,swept_value,trial,seed,rel_fro,rel_spec,rel_inf,grad_norm,iterations,wall_time_s,status";
    if (proximity)
        h += ",proximity_fro";
    return h;
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_sweep_csv(std::ostream &os, const SweepResult &res) {
    const bool prox = res.spec.mode == SweepMode::proximity;
    os << csv_header(prox) << '\n';
    const std::string mode = to_string(res.spec.mode), param = res.spec.swept_param();
    for (const SweepRow &row : res.rows) {
        os << mode << ',' << param << ',' << detail::fmt_double(row.swept_value) << ',' << row.trial << ','
           << row.seed << ',' << detail::fmt_double(row.rel_fro) << ',' << detail::fmt_double(row.rel_spec) << ','
           << detail::fmt_double(row.rel_inf) << ',' << detail::fmt_double(row.grad_norm) << ',' << row.iterations
           << ',' << detail::fmt_double(row.wall_time_s) << ',' << row.status;
        if (prox)
            os << ',' << (row.proximity_fro ? detail::fmt_double(*row.proximity_fro) : std::string("nan"));
        os << '\n';
    }
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t rows_used = 0;
};

/// Ordinary least squares of log(y) on log(x).
inline SlopeFit fit_loglog_slope(const std::vector<double> &xs, const std::vector<double> &ys) {
    if (xs.size() != ys.size())
        throw std::invalid_argument("fit_loglog_slope: xs and ys differ in length");
    if (xs.size() < 3)
        throw std::invalid_argument("fit_loglog_slope: need at least 3 points");
    const std::size_t m = xs.size();
    std::vector<double> lx(m), ly(m);
    for (std::size_t k = 0; k < m; ++k) {
        if (!(xs[k] > 0.0) || !(ys[k] > 0.0))
            throw std::invalid_argument("fit_loglog_slope: non-positive value in row " + std::to_string(k));
        lx[k] = std::log(xs[k]);
        ly[k] = std::log(ys[k]);
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        mx += lx[k];
        my += ly[k];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        sxx += (lx[k] - mx) * (lx[k] - mx);
        sxy += (lx[k] - mx) * (ly[k] - my);
        syy += (ly[k] - my) * (ly[k] - my);
    }
    if (!(sxx > 0.0))
        throw std::invalid_argument("fit_loglog_slope: xs are all equal");
    SlopeFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    fit.rows_used = m;
    return fit;
}

/// Regressor for a sweep: sqrt(n) for n_sweep, the swept value otherwise.
inline double slope_regressor(SweepMode mode, double swept_value) {
    return mode == SweepMode::n_sweep ? std::sqrt(swept_value) : swept_value;
}

/// Slope of mean rel_fro against the regressor over points with swept value in
/// [lo, hi]; rows_used counts the contributing "ok" rows.
inline SlopeFit sweep_slope(const SweepResult &res, double lo = -std::numeric_limits<double>::infinity(),
                            double hi = std::numeric_limits<double>::infinity()) {
    std::vector<double> xs, ys;
    std::size_t rows = 0;
    for (const PointMean &m : res.means) {
        if (m.swept_value < lo || m.swept_value > hi)
            continue;
        xs.push_back(slope_regressor(res.spec.mode, m.swept_value));
        ys.push_back(m.rel_fro);
        rows += m.rows_used;
    }
    SlopeFit fit = fit_loglog_slope(xs, ys);
    fit.rows_used = rows;
    return fit;
}

}  // namespace sqrtmc
