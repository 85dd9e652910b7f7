// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance [criterion ...]     (no arguments: all criteria)
// Exit status is 0 iff every requested criterion passed.

#include "sqrtmc/certificate.hpp"
#include "sqrtmc/cli.hpp"
#include "sqrtmc/convex_reference.hpp"
#include "sqrtmc/experiments.hpp"
#include "sqrtmc/instance.hpp"
#include "sqrtmc/io.hpp"
#include "sqrtmc/masked_ops.hpp"
#include "sqrtmc/solver.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace sqrtmc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void info(const std::string &msg) { std::cout << "INFO " << msg << std::endl; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Every nonconvex solve made here is checked for a non-increasing f trace.

struct DescentRecord {
    std::string label;
    std::size_t points = 0;
    long violations = 0;
};

std::mutex descent_mutex;
std::vector<DescentRecord> descent_log;

void record_descent(const std::string &label, const SolveReport &rep) {
    DescentRecord d{label, rep.trace.f.size(), 0};
    for (std::size_t k = 1; k < rep.trace.f.size(); ++k)
        if (!(rep.trace.f[k] <= rep.trace.f[k - 1]))
            ++d.violations;
    std::lock_guard<std::mutex> lock(descent_mutex);
    descent_log.push_back(std::move(d));
}

SolveReport tracked_solve(const std::string &label, const ProblemInstance &inst, const SolverConfig &cfg,
                          const IterateObserver &observer = {}) {
    SolveReport rep = solve(inst, cfg, observer);
    record_descent(label, rep);
    return rep;
}

int worker_count() {
    const int env = workers_from_env();
    return env > 1 ? env : std::max(1u, std::thread::hardware_concurrency());
}

const SweepResult &preset_sweep(const std::string &name) {
    static std::map<std::string, SweepResult> cache;
    auto it = cache.find(name);
    if (it != cache.end())
        return it->second;
    const auto t0 = std::chrono::steady_clock::now();
    SweepResult res = run_sweep(preset(name), worker_count(), [name](const SweepRow &row, const SolveReport &rep) {
        record_descent(name + " point " + std::to_string(row.point) + " trial " + std::to_string(row.trial), rep);
    });
    info(name + " sweep: " + std::to_string(res.rows.size()) + " rows in " + fmt("%.1f", seconds_since(t0)) + " s");
    for (const PointMean &m : res.means)
        info(name + " " + res.spec.swept_param() + "=" + fmt("%.4g", m.swept_value) +
             " mean rel_fro=" + fmt("%.4g", m.rel_fro) + " (" + std::to_string(m.rows_used) + " rows)");
    return cache.emplace(name, std::move(res)).first->second;
}

std::string failed_rows(const SweepResult &res) {
    std::size_t bad = 0;
    for (const SweepRow &row : res.rows)
        bad += row.ok() ? 0 : 1;
    return bad == 0 ? "" : " (" + std::to_string(bad) + " failed rows excluded)";
}

Outcome slope_criterion(const std::string &name, double lo, double hi, double min_r2,
                        const std::string &regime_label, double regime_lo, double regime_hi) {
    const SweepResult &res = preset_sweep(name);
    SlopeFit fit;
    try {
        fit = sweep_slope(res);
    } catch (const std::invalid_argument &e) {
        return {false, std::string("slope fit failed: ") + e.what()};
    }
    try {
        const SlopeFit sub = sweep_slope(res, regime_lo, regime_hi);
        info(name + " slope over " + regime_label + ": " + fmt("%.3f", sub.slope) + " (r2 " + fmt("%.4f", sub.r_squared) +
             ", " + std::to_string(sub.rows_used) + " rows)");
    } catch (const std::invalid_argument &) {
    }
    const bool slope_ok = fit.slope >= lo && fit.slope <= hi;
    const bool r2_ok = fit.r_squared >= min_r2;
    std::string detail = "slope=" + fmt("%.3f", fit.slope) + " in [" + fmt("%g", lo) + ", " + fmt("%g", hi) + "]";
    if (min_r2 > 0.0)
        detail += ", r2=" + fmt("%.4f", fit.r_squared) + " >= " + fmt("%g", min_r2);
    detail += ", " + std::to_string(fit.rows_used) + " rows" + failed_rows(res);
    return {slope_ok && r2_ok, detail};
}

// Criteria

Outcome noiseless_recovery() {
    InstanceParams prm;
    prm.n = 200;
    prm.r = 5;
    prm.p = 0.5;
    prm.sigma = 0.0;
    prm.seed = 20240601;
    const auto t0 = std::chrono::steady_clock::now();
    const ProblemInstance inst = generate_instance(prm);
    SolverConfig cfg;
    cfg.init_mode = InitMode::spectral;
    cfg.lambda_coeff = 4.0;
    const SolveReport rep = tracked_solve("noiseless", inst, cfg);
    const double secs = seconds_since(t0);
    const double rel = rep.metrics->rel_fro;
    return {rel <= 1e-6 && secs < 60.0, "rel_fro=" + fmt("%.3e", rel) + " <= 1e-6, " + fmt("%.1f", secs) +
                                            " s < 60 s, stop=" + to_string(rep.stop_reason)};
}

Outcome sigma_scaling() {
    return slope_criterion("fig1a", 0.9, 1.1, 0.98, "sigma <= 1e-3", 0.0, 1e-3 * (1 + 1e-9));
}

Outcome sqrt_n_scaling() { return slope_criterion("fig1b", 0.8, 1.2, 0.0, "n >= 200", 200.0, 1e9); }

Outcome p_scaling() { return slope_criterion("fig1c", -0.65, -0.35, 0.0, "p >= 0.28", 0.28, 1.0); }

Outcome proximity() {
    const SweepResult &res = preset_sweep("fig2-proximity");
    bool ok = true;
    double worst = 0.0;
    std::ostringstream pts;
    for (const SweepRow &row : res.rows) {
        const ProblemInstance inst = generate_instance(res.spec.params_at(row.point, row.trial));
        const double err = row.rel_fro * inst.L_star().norm();
        if (!row.ok() || !row.proximity_fro) {
            ok = false;
            pts << " sigma=" << row.swept_value << ":" << row.status;
            continue;
        }
        const double ratio = *row.proximity_fro / err;
        worst = std::max(worst, ratio);
        ok = ok && ratio <= 1e-2;
        pts << " sigma=" << fmt("%g", row.swept_value) << ":" << fmt("%.2e", ratio);
    }
    return {ok, "max ||L_ncvx - L_cvx||_F / ||L_ncvx - L*||_F = " + fmt("%.3e", worst) + " <= 1e-2;" + pts.str()};
}

struct CertifiedRun {
    ProblemInstance inst;
    SolveReport rep;
    /// ptperp check at each checkpoint, in iteration order.
    std::vector<std::pair<long, bool>> checkpoints;
};

bool is_checkpoint(long t) { return t > 0 && ((t & (t - 1)) == 0 || t % 50 == 0); }

/// Nonconvex solves at the proximity points, with the certificate evaluated
/// along the way.
const std::vector<CertifiedRun> &proximity_solves() {
    static std::vector<CertifiedRun> runs = [] {
        std::vector<CertifiedRun> out;
        const SweepSpec spec = preset("fig2-proximity");
        for (std::size_t k = 0; k < spec.grid.size(); ++k)
            for (int t = 0; t < spec.trials; ++t) {
                CertifiedRun run{generate_instance(spec.params_at(k, t)), {}, {}};
                const double lambda = lambda_for(run.inst.n(), spec.solver.lambda_coeff);
                const ObservationSet &obs = run.inst.obs;
                auto observer = [&](const FactorIterate &it, double) {
                    if (!is_checkpoint(it.iter))
                        return;
                    try {
                        run.checkpoints.emplace_back(it.iter, check_certificate(it, obs, lambda).lemma6_ptperp_ok);
                    } catch (const KinkError &) {
                    }
                };
                run.rep = tracked_solve("fig2-proximity point " + std::to_string(k) + " trial " + std::to_string(t),
                                        run.inst, spec.solver, observer);
                out.push_back(std::move(run));
            }
        return out;
    }();
    return runs;
}

Outcome certificate() {
    bool ok = true;
    std::size_t certified = 0;
    double worst_perp = 0.0, worst_pt_ratio = 0.0, worst_identity = 0.0;
    long flips = 0;
    std::ostringstream notes;
    for (const CertifiedRun &run : proximity_solves()) {
        for (std::size_t k = 1; k < run.checkpoints.size(); ++k)
            if (run.checkpoints[k - 1].second && !run.checkpoints[k].second) {
                ++flips;
                notes << " flip at t=" << run.checkpoints[k].first << " (sigma=" << run.inst.params.sigma << ")";
            }
        const StopReason why = run.rep.stop_reason;
        if (why != StopReason::grad_tol && why != StopReason::stall) {
            notes << " sigma=" << run.inst.params.sigma << " not converged (" << to_string(why) << ")";
            continue;
        }
        OptimalityCertificate c;
        try {
            c = check_certificate(run.rep.best, run.inst.obs, run.rep.lambda);
        } catch (const KinkError &) {
            notes << " sigma=" << run.inst.params.sigma << " kink";
            ok = false;
            continue;
        }
        ++certified;
        notes << " sigma=" << fmt("%g", run.inst.params.sigma) << ": perp " << fmt("%.4f", c.ptperp_r_spec)
              << ", t*=" << run.rep.t_star << " (" << to_string(why) << ")";
        ok = ok && c.ok() && c.identity_defect <= 1e-10;
        worst_perp = std::max(worst_perp, c.ptperp_r_spec);
        worst_pt_ratio = std::max(worst_pt_ratio, c.pt_bound > 0 ? c.pt_r_fro / c.pt_bound : INFINITY);
        worst_identity = std::max(worst_identity, c.identity_defect);
    }
    ok = ok && certified > 0 && flips == 0;
    return {ok, std::to_string(certified) + " converged points; max ||P_Tperp R||=" + fmt("%.4f", worst_perp) +
                    " < 0.5; max ||P_T R||_F/bound=" + fmt("%.3e", worst_pt_ratio) +
                    " <= 1; identity defect " + fmt("%.1e", worst_identity) + "; ptperp true->false flips " +
                    std::to_string(flips) + notes.str()};
}

Outcome theta_concentration() {
    const SweepSpec spec = preset("fig1a");
    const std::size_t mid = spec.grid.size() / 2;
    const ProblemInstance inst = generate_instance(spec.params_at(mid, 0));
    SolverConfig cfg = spec.solver;
    cfg.init_mode = InitMode::oracle;
    cfg.trace_every = 1;
    const SolveReport rep = tracked_solve("theta oracle run", inst, cfg);
    const double scale = static_cast<double>(inst.n()) * std::sqrt(inst.obs.p_hat()) * inst.params.sigma;
    double lo = INFINITY, hi = 0.0;
    for (double th : rep.trace.theta) {
        lo = std::min(lo, th / scale);
        hi = std::max(hi, th / scale);
    }
    const bool ok = !rep.trace.theta.empty() && lo >= 0.5 && hi <= 2.0;
    return {ok, "theta_t / (n sqrt(p_hat) sigma) in [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) +
                    "] within [0.5, 2] over " + std::to_string(rep.trace.theta.size()) + " logged iterates, sigma=" +
                    fmt("%.4g", inst.params.sigma)};
}

struct CompareRun {
    double sqrt_rel = 0.0;
    double vanilla_rel = 0.0;
};

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), {"sqrtmc", "-q"});
    std::vector<const char *> argv;
    for (const auto &a : args)
        argv.push_back(a.c_str());
    std::ostringstream sink;
    return cli::run_cli(static_cast<int>(argv.size()), argv.data(), sink, std::cerr);
}

CompareRun cli_compare(const std::string &inst_path, const std::string &out, double sigma_known) {
    if (cli({"compare", "--instance", inst_path, "--sigma-known", json(sigma_known).dump(), "--out", out}) != 0)
        throw std::runtime_error("compare command failed");
    const json j = read_json_file(out);
    return {j.at("sqrt_mc").at("metrics").at("rel_fro").get<double>(),
            j.at("vanilla").at("metrics").at("rel_fro").get<double>()};
}

ProblemInstance tuning_instance() {
    InstanceParams prm;
    prm.n = 500;
    prm.r = 5;
    prm.p = 0.5;
    prm.sigma = 1e-3;
    prm.seed = 7;
    return generate_instance(prm);
}

Outcome tuning_free() {
    const fs::path dir = fs::temp_directory_path() / "sqrtmc_acceptance_compare";
    fs::create_directories(dir);
    const InstanceParams prm = tuning_instance().params;
    const std::string inst_path = (dir / "inst.json").string();
    if (cli({"gen", "--n", std::to_string(prm.n), "--r", std::to_string(prm.r), "--p", json(prm.p).dump(),
             "--sigma", json(prm.sigma).dump(), "--seed", std::to_string(prm.seed), "--out", inst_path}) != 0)
        throw std::runtime_error("gen command failed");
    const CompareRun known = cli_compare(inst_path, (dir / "known.json").string(), prm.sigma);
    const CompareRun wrong = cli_compare(inst_path, (dir / "x100.json").string(), 100.0 * prm.sigma);
    fs::remove_all(dir);
    const double degradation = wrong.vanilla_rel / known.vanilla_rel;
    const bool same = known.sqrt_rel == wrong.sqrt_rel;
    return {degradation >= 5.0 && same,
            "vanilla rel_fro " + fmt("%.4g", known.vanilla_rel) + " -> " + fmt("%.4g", wrong.vanilla_rel) +
                " (x" + fmt("%.2f", degradation) + " >= 5); sqrt-MC rel_fro " + fmt("%.17g", known.sqrt_rel) +
                (same ? " identical" : " vs " + fmt("%.17g", wrong.sqrt_rel) + " DIFFERENT")};
}

Outcome oracle_equivalence() {
    using namespace sqrtmc::testing;
    CounterRng rng{424242};
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
        const Index rows = 1 + static_cast<Index>(rng() % 10), cols = 1 + static_cast<Index>(rng() % 10);
        const Index rank = 1 + static_cast<Index>(rng() % 4);
        const Index count = 1 + static_cast<Index>(rng() % static_cast<std::uint64_t>(rows * cols));
        const ObservationSet obs = random_obs(rows, cols, count, rng);
        const Matrix X = gaussian(rows, rank, rng), Y = gaussian(cols, rank, rng);
        const Matrix A = gaussian(rows, cols, rng);
        const Matrix W = indicator(obs), M = dense_observed(obs);
        const Matrix R = W.cwiseProduct(X * Y.transpose()) - M;
        const Matrix Z = gaussian(cols, rank, rng), V = gaussian(rows, rank, rng);
        const SparseResidual res = masked_residual(X, Y, obs);
        const double p_hat = static_cast<double>(count) / static_cast<double>(rows * cols);
        const double diffs[] = {
            max_abs_diff(res.to_dense(), R),
            std::abs(masked_frobenius(res) - R.norm()),
            max_abs_diff(mask(A, obs).to_dense(), W.cwiseProduct(A)),
            max_abs_diff(observed(obs).to_dense(), M),
            max_abs_diff(sparse_times_dense(res, Z), R * Z),
            max_abs_diff(sparse_transpose_times_dense(res, V), R.transpose() * V),
            max_abs_diff(debias(A, obs), W.cwiseProduct(A) - p_hat * A),
            max_abs_diff(project_dense(A, obs), W.cwiseProduct(A)),
        };
        for (double d : diffs)
            worst = std::max(worst, d);
    }

    double worst_fd = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
        InstanceParams prm;
        prm.n = 8 + trial % 5;
        prm.r = 1 + trial % 3;
        prm.p = 0.6;
        prm.sigma = 0.1;
        prm.seed = 9000 + static_cast<std::uint64_t>(trial);
        const ProblemInstance inst = generate_instance(prm);
        const Matrix X = gaussian(prm.n, prm.r, rng), Y = gaussian(prm.n, prm.r, rng);
        const Matrix dX = gaussian(prm.n, prm.r, rng), dY = gaussian(prm.n, prm.r, rng);
        const double lambda = 0.3, h = 1e-6;
        const GradientG g = gradient_g(X, Y, inst.obs, lambda, theta_floor(inst.obs, 1e-12));
        const double analytic = g.B1.cwiseProduct(dX).sum() + g.B2.cwiseProduct(dY).sum();
        const double numeric = (objective_g(X + h * dX, Y + h * dY, inst.obs, lambda) -
                                objective_g(X - h * dX, Y - h * dY, inst.obs, lambda)) /
                               (2.0 * h);
        worst_fd = std::max(worst_fd, std::abs(numeric - analytic) / std::abs(analytic));
    }
    return {worst <= 1e-12 && worst_fd <= 1e-5, "kernels vs dense oracles max |diff|=" + fmt("%.2e", worst) +
                                                     " <= 1e-12 on 25 instances; gradient vs central differences "
                                                     "max rel=" + fmt("%.2e", worst_fd) + " <= 1e-5"};
}

Outcome descent() {
    // Reproduce every nonconvex solve of the suite; cached runs are reused.
    noiseless_recovery();
    for (const char *name : {"fig1a", "fig1b", "fig1c", "fig2-proximity"})
        preset_sweep(name);
    proximity_solves();
    theta_concentration();
    tracked_solve("tuning-free sqrt-MC run", tuning_instance(), SolverConfig{});

    std::lock_guard<std::mutex> lock(descent_mutex);
    std::size_t points = 0;
    long violations = 0;
    std::string first;
    for (const DescentRecord &d : descent_log) {
        points += d.points;
        violations += d.violations;
        if (d.violations > 0 && first.empty())
            first = "; first offender: " + d.label;
    }
    return {violations == 0 && !descent_log.empty(),
            std::to_string(descent_log.size()) + " runs, " + std::to_string(points) + " logged f values, " +
                std::to_string(violations) + " increases" + first};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>> &criteria() {
    static const std::vector<std::pair<std::string, std::function<Outcome()>>> list{
        {"noiseless_recovery", noiseless_recovery},
        {"sigma_scaling", sigma_scaling},
        {"sqrt_n_scaling", sqrt_n_scaling},
        {"p_scaling", p_scaling},
        {"proximity", proximity},
        {"certificate", certificate},
        {"theta_concentration", theta_concentration},
        {"descent", descent},
        {"oracle_equivalence", oracle_equivalence},
        {"tuning_free", tuning_free},
    };
    return list;
}

}  // namespace

int main(int argc, char **argv) {
    std::vector<std::string> wanted(argv + 1, argv + argc);
    if (wanted.empty())
        for (const auto &c : criteria())
            wanted.push_back(c.first);
    bool all_pass = true;
    for (const std::string &name : wanted) {
        auto it = std::find_if(criteria().begin(), criteria().end(), [&](const auto &c) { return c.first == name; });
        if (it == criteria().end()) {
            std::cout << "FAIL " << name << ": unknown criterion" << std::endl;
            all_pass = false;
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = it->second();
        } catch (const std::exception &e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt("%.1f", seconds_since(t0))
                  << " s]" << std::endl;
        all_pass = all_pass && o.pass;
    }
    return all_pass ? 0 : 1;
}
