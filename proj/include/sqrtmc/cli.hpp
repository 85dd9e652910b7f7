#pragma once

#include "sqrtmc/certificate.hpp"
#include "sqrtmc/convex_reference.hpp"
#include "sqrtmc/experiments.hpp"
#include "sqrtmc/instance.hpp"
#include "sqrtmc/io.hpp"
#include "sqrtmc/metrics.hpp"
#include "sqrtmc/solver.hpp"

#include "CLI11.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace sqrtmc::cli {

enum ExitCode : int {
    kOk = 0,
    kRuntimeError = 1,
    kUsageError = 2,
    kDiverged = 3,
    kCertificateSkipped = 4,
};

/// Integer flag value: plain digits, or scientific notation that denotes an
/// exact integer (e.g. 5e2).
inline std::uint64_t parse_integer(const std::string &s) {
    std::uint64_t v = 0;
    const char *first = s.data(), *last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec == std::errc{} && ptr == last)
        return v;
    double d = 0.0;
    std::size_t used = 0;
    try {
        d = std::stod(s, &used);
    } catch (const std::exception &) {
        throw CLI::ValidationError("'" + s + "' is not an integer");
    }
    if (used != s.size() || !(d >= 0.0) || d > 9007199254740992.0 || std::floor(d) != d)
        throw CLI::ValidationError("'" + s + "' is not a non-negative integer");
    return static_cast<std::uint64_t>(d);
}

template <class T>
CLI::Option *add_integer(CLI::App *app, const std::string &name, T &target, const std::string &desc) {
    return app->add_option_function<std::string>(
                  name, [&target](const std::string &s) { target = static_cast<T>(parse_integer(s)); }, desc)
        ->default_str(std::to_string(target))
        ->type_name("INT");
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

/// Regenerates an instance from its descriptor and checks the stored checksum.
inline ProblemInstance load_instance(const std::string &path) {
    const json j = read_json_file(path);
    ProblemInstance inst = generate_instance(instance_from_json(j));
    if (j.contains("obs_checksum")) {
        const std::string want = j.at("obs_checksum").get<std::string>();
        if (want != hex64(obs_checksum(inst.obs)))
            throw std::runtime_error("instance '" + path + "': regenerated observations do not match obs_checksum");
    }
    return inst;
}

struct GenArgs {
    Index n = 0;
    Index r = 0;
    double p = 0.5;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    std::string noise = "gaussian";
    std::string out;
};

struct SolveArgs {
    std::string instance;
    double lambda_coeff = 4.0;
    std::string init = "spectral";
    long max_iters = 0;
    double grad_tol = 1e-10;
    bool line_search = true;
    long trace_every = 1;
    std::string out;
};

struct CertifyArgs {
    std::string instance;
    std::string report;
    std::string out;
};

struct CompareArgs {
    std::string instance;
    double sigma_known = -1.0;
    double lambda_coeff = 4.0;
    std::string out;
};

struct SweepArgs {
    std::string spec;
    long workers = 0;
    std::string out;
    std::string slope_out;
};

inline int cmd_gen(const GenArgs &a, std::ostream &out) {
    InstanceParams p;
    p.n = a.n;
    p.r = a.r;
    p.p = a.p;
    p.sigma = a.sigma;
    p.seed = a.seed;
    p.noise = parse_noise_kind(a.noise);
    p.validate();
    const ProblemInstance inst = generate_instance(p);
    json j = instance_to_json(p);
    j["obs_checksum"] = hex64(obs_checksum(inst.obs));
    j["n_observed"] = inst.obs.size();
    write_json_file(a.out, j);
    out << "wrote " << a.out << " (" << inst.obs.size() << " observed entries, checksum "
        << j["obs_checksum"].get<std::string>() << ")\n";
    return kOk;
}

/// Flags runs outside the small-noise regime: sigma sqrt(n / p_hat) / sigma_min
/// at or above 1, or a relative error of at least 1/2.
inline json regime_to_json(const ProblemInstance &inst, const SolveReport &rep) {
    const double ratio = inst.params.sigma * std::sqrt(static_cast<double>(inst.n()) / inst.obs.p_hat()) /
                         inst.sigma_min;
    const bool large_error = rep.metrics && !(rep.metrics->rel_fro < 0.5);
    return {{"noise_ratio", ratio}, {"outside_theory_regime", ratio >= 1.0 || large_error}};
}

inline int cmd_solve(const SolveArgs &a, std::ostream &out) {
    SolverConfig cfg;
    cfg.lambda_coeff = a.lambda_coeff;
    cfg.init_mode = parse_init_mode(a.init);
    cfg.max_iters = a.max_iters;
    cfg.grad_tol = a.grad_tol;
    cfg.line_search = a.line_search;
    cfg.trace_every = static_cast<int>(a.trace_every);
    cfg.validate();
    const ProblemInstance inst = load_instance(a.instance);
    try {
        const SolveReport rep = solve(inst, cfg);
        json j = report_to_json(rep);
        j["regime"] = regime_to_json(inst, rep);
        write_json_file(a.out, j);
        out << "stop=" << to_string(rep.stop_reason) << " iterations=" << rep.iterations
            << " grad_norm=" << rep.best_grad_norm;
        if (rep.metrics)
            out << " rel_fro=" << rep.metrics->rel_fro;
        if (j["regime"]["outside_theory_regime"].get<bool>())
            out << " (outside the small-noise regime)";
        out << "\n";
        return kOk;
    } catch (const SolveDivergedError &e) {
        json j = report_to_json(e.partial());
        j["status"] = "diverged";
        j["diverged_at"] = e.iteration();
        write_json_file(a.out, j);
        throw;
    }
}

inline int cmd_certify(const CertifyArgs &a, std::ostream &out) {
    const ProblemInstance inst = load_instance(a.instance);
    const json report = read_json_file(a.report);
    const FactorIterate it = iterate_from_report(report);
    if (it.X.rows() != inst.n() || it.Y.rows() != inst.n())
        throw std::invalid_argument("certify: report factors do not match the instance dimension");
    const double lambda = report.at("lambda").get<double>();
    const double floor_rel = report.at("config").value("theta_floor_rel", 1e-12);
    try {
        const OptimalityCertificate c = check_certificate(it, inst.obs, lambda, floor_rel, &inst);
        json j = certificate_to_json(c);
        j["status"] = "ok";
        j["noise_bound"] = bound_to_json(check_noise_bound(inst.noise, lambda, inst.params.sigma, inst.n(),
                                                           inst.obs.p_hat()));
        j["debias_bound"] = bound_to_json(check_debias_bound(it, inst, lambda));
        write_json_file(a.out, j);
        out << "ptperp_r_spec=" << c.ptperp_r_spec << " (< 0.5: " << (c.lemma6_ptperp_ok ? "yes" : "no")
            << ") pt_r_fro=" << c.pt_r_fro << " bound=" << c.pt_bound
            << " (ok: " << (c.lemma6_pt_bound_ok ? "yes" : "no") << ")\n";
        return kOk;
    } catch (const KinkError &e) {
        write_json_file(a.out, json{{"status", "skipped"}, {"reason", "kink"}, {"lambda", lambda}});
        out << "certificate skipped: " << e.what() << "\n";
        return kCertificateSkipped;
    }
}

inline int cmd_compare(const CompareArgs &a, std::ostream &out) {
    SolverConfig cfg;
    cfg.lambda_coeff = a.lambda_coeff;
    cfg.validate();
    const ProblemInstance inst = load_instance(a.instance);
    const double sigma_known = a.sigma_known >= 0.0 ? a.sigma_known : inst.params.sigma;
    if (!std::isfinite(sigma_known))
        throw std::invalid_argument("--sigma-known must be finite");

    const SolveReport rep = solve(inst, cfg);
    const double lambda_v =
        2.0 * sigma_known * std::sqrt(static_cast<double>(inst.n()) * inst.obs.p_hat());
    const ConvexSolveReport van = solve_vanilla(inst.obs, lambda_v);
    const ErrorMetrics vm = error_metrics(van.L_hat, inst);

    json j;
    j["sigma_true"] = inst.params.sigma;
    j["sigma_known"] = sigma_known;
    j["sqrt_mc"] = {{"lambda", rep.lambda},
                    {"lambda_coeff", cfg.lambda_coeff},
                    {"stop_reason", to_string(rep.stop_reason)},
                    {"iterations", rep.iterations},
                    {"grad_norm", detail::num(rep.best_grad_norm)},
                    {"metrics", metrics_to_json(*rep.metrics)}};
    j["vanilla"] = {{"lambda_v", lambda_v},
                    {"degenerate", lambda_v == 0.0},
                    {"converged", van.converged},
                    {"iterations", van.iterations},
                    {"fixed_point_residual", detail::num(van.fixed_point_residual)},
                    {"metrics", metrics_to_json(vm)}};
    write_json_file(a.out, j);
    out << "sqrt_mc rel_fro=" << rep.metrics->rel_fro << "  vanilla rel_fro=" << vm.rel_fro
        << " (lambda_v=" << lambda_v << (lambda_v == 0.0 ? ", unregularized" : "") << ")\n";
    return kOk;
}

inline SweepSpec load_sweep_spec(const std::string &spec) {
    for (const std::string &name : preset_names())
        if (spec == name)
            return preset(name);
    return sweep_spec_from_json(read_json_file(spec));
}

inline std::string default_slope_path(const std::string &csv) {
    const auto dot = csv.rfind('.');
    const auto slash = csv.find_last_of('/');
    const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
    return (has_ext ? csv.substr(0, dot) : csv) + ".slope.json";
}

inline int cmd_sweep(const SweepArgs &a, std::ostream &out) {
    const SweepSpec spec = load_sweep_spec(a.spec);
    const int workers = a.workers > 0 ? static_cast<int>(a.workers) : workers_from_env();
    const SweepResult res = run_sweep(spec, workers);
    std::ostringstream csv;
    write_sweep_csv(csv, res);
    write_text_file(a.out, csv.str());

    const std::string slope_path = a.slope_out.empty() ? default_slope_path(a.out) : a.slope_out;
    json slope;
    try {
        slope = slope_to_json(spec.mode, sweep_slope(res));
    } catch (const std::invalid_argument &e) {
        slope = {{"mode", to_string(spec.mode)}, {"error", e.what()}};
    }
    write_json_file(slope_path, slope);
    for (const PointMean &m : res.means)
        out << spec.swept_param() << "=" << m.swept_value << " mean rel_fro=" << m.rel_fro << " (" << m.rows_used
            << " rows)\n";
    if (slope.contains("slope"))
        out << "slope=" << slope["slope"].get<double>() << " r2=" << slope["r_squared"].get<double>() << "\n";
    return kOk;
}

/// Full command-line entry point; returns the process exit code.
inline int run_cli(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
    CLI::App app{"Square-root matrix completion: generate instances, solve, certify, compare and sweep."};
    app.name("sqrtmc");
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress the one-line summary on stdout");

    GenArgs gen;
    auto *g = app.add_subcommand("gen", "Write an instance descriptor (parameters and checksum, never matrices)");
    add_integer(g, "--n", gen.n, "Matrix dimension")->required();
    add_integer(g, "--r", gen.r, "Rank of the groundtruth")->required();
    g->add_option("--p", gen.p, "Observation probability");
    g->add_option("--sigma", gen.sigma, "Noise standard deviation");
    add_integer(g, "--seed", gen.seed, "Master seed");
    g->add_option("--noise", gen.noise, "Noise distribution")->check(CLI::IsMember({"gaussian", "uniform", "rademacher"}));
    g->add_option("--out", gen.out, "Output descriptor path")->required();

    SolveArgs sol;
    auto *s = app.add_subcommand("solve", "Run factored gradient descent and write a solve report");
    s->add_option("--instance", sol.instance, "Instance descriptor")->required();
    s->add_option("--lambda-coeff", sol.lambda_coeff, "C in lambda = C / sqrt(n)");
    s->add_option("--init", sol.init, "Initialisation")->check(CLI::IsMember({"spectral", "oracle"}));
    add_integer(s, "--max-iters", sol.max_iters, "Iteration cap (0 selects 50 n)");
    s->add_option("--grad-tol", sol.grad_tol, "Relative gradient tolerance");
    s->add_option("--line-search", sol.line_search, "Backtracking on f (true/false)");
    add_integer(s, "--trace-every", sol.trace_every, "Log every k-th iterate");
    s->add_option("--out", sol.out, "Output report path")->required();

    CertifyArgs cer;
    auto *c = app.add_subcommand("certify", "Check the optimality certificate of a solve report");
    c->add_option("--instance", cer.instance, "Instance descriptor")->required();
    c->add_option("--report", cer.report, "Solve report")->required();
    c->add_option("--out", cer.out, "Output certificate path")->required();

    CompareArgs cmp;
    auto *m = app.add_subcommand("compare", "Square-root MC against nuclear-norm least squares tuned with sigma");
    m->add_option("--instance", cmp.instance, "Instance descriptor")->required();
    m->add_option("--sigma-known", cmp.sigma_known,
                  "Noise level given to the vanilla estimator (negative: the instance sigma)");
    m->add_option("--lambda-coeff", cmp.lambda_coeff, "C in lambda = C / sqrt(n) for square-root MC");
    m->add_option("--out", cmp.out, "Output comparison path")->required();

    SweepArgs swp;
    auto *w = app.add_subcommand("sweep", "Run a parameter sweep and write CSV rows plus a slope summary");
    w->add_option("--spec", swp.spec, "Preset name (fig1a, fig1b, fig1c, fig2-proximity, *-paper) or sweep JSON")
        ->required();
    add_integer(w, "--workers", swp.workers, "Concurrent rows (0: SQRTMC_WORKERS, else 1)");
    w->add_option("--out", swp.out, "Output CSV path")->required();
    w->add_option("--slope-out", swp.slope_out, "Slope JSON path (default: <out>.slope.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        app.exit(e, out, err);
        return kOk;
    } catch (const CLI::CallForAllHelp &e) {
        app.exit(e, out, err);
        return kOk;
    } catch (const CLI::ParseError &e) {
        app.exit(e, out, err);
        return kUsageError;
    }

    std::ostringstream sink;
    std::ostream &log = quiet ? static_cast<std::ostream &>(sink) : out;
    try {
        if (*g)
            return cmd_gen(gen, log);
        if (*s)
            return cmd_solve(sol, log);
        if (*c)
            return cmd_certify(cer, log);
        if (*m)
            return cmd_compare(cmp, log);
        return cmd_sweep(swp, log);
    } catch (const DivergenceError &e) {
        err << "error: " << e.what() << "\n";
        return kDiverged;
    } catch (const std::invalid_argument &e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const json::exception &e) {
        err << "error: malformed input: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}

}  // namespace sqrtmc::cli
