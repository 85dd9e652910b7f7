#pragma once

#include "sqrtmc/certificate.hpp"
#include "sqrtmc/convex_reference.hpp"
#include "sqrtmc/experiments.hpp"
#include "sqrtmc/instance.hpp"
#include "sqrtmc/solver.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqrtmc {

using json = nlohmann::json;

namespace detail {

/// Non-finite doubles become null.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double get_num(const json &j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json matrix_to_json(const Matrix &A) {
    json rows = json::array();
    for (Index i = 0; i < A.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < A.cols(); ++j)
            row.push_back(A(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const json &j) {
    if (!j.is_array() || j.empty())
        throw std::invalid_argument("matrix: expected a non-empty array of rows");
    const auto rows = static_cast<Index>(j.size());
    const auto cols = static_cast<Index>(j.at(0).size());
    Matrix A(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const json &row = j.at(static_cast<std::size_t>(i));
        if (static_cast<Index>(row.size()) != cols)
            throw std::invalid_argument("matrix: ragged rows");
        for (Index c = 0; c < cols; ++c)
            A(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return A;
}

template <class T> json vec(const std::vector<T> &v) {
    json a = json::array();
    for (const T &x : v) {
        if constexpr (std::is_floating_point_v<T>)
            a.push_back(num(x));
        else
            a.push_back(x);
    }
    return a;
}

}  // namespace detail

// Instance descriptor

inline json instance_to_json(const InstanceParams &p) {
    json j{{"n", p.n},         {"r", p.r},       {"p", p.p}, {"sigma", p.sigma}, {"seed", p.seed},
           {"generator_version", kGeneratorVersion}, {"noise", to_string(p.noise)}};
    if (!p.singular_values.empty())
        j["singular_values"] = p.singular_values;
    return j;
}

inline InstanceParams instance_from_json(const json &j) {
    const int version = j.at("generator_version").get<int>();
    if (version != kGeneratorVersion)
        throw std::invalid_argument("instance descriptor: generator_version " + std::to_string(version) +
                                    " is not supported (expected " + std::to_string(kGeneratorVersion) + ")");
    InstanceParams p;
    p.n = j.at("n").get<Index>();
    p.r = j.at("r").get<Index>();
    p.p = j.at("p").get<double>();
    p.sigma = j.at("sigma").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("noise"))
        p.noise = parse_noise_kind(j.at("noise").get<std::string>());
    if (j.contains("singular_values"))
        p.singular_values = j.at("singular_values").get<std::vector<double>>();
    p.validate();
    return p;
}

// Solver reports

inline json config_to_json(const SolverConfig &c) {
    return {{"lambda_coeff", c.lambda_coeff}, {"step_coeff", c.step_coeff},   {"max_iters", c.max_iters},
            {"grad_tol", c.grad_tol},         {"theta_floor_rel", c.theta_floor_rel},
            {"init", to_string(c.init_mode)}, {"line_search", c.line_search}, {"max_halvings", c.max_halvings},
            {"trace_every", c.trace_every},   {"stall_window", c.stall_window}, {"stall_rel", c.stall_rel}};
}

inline SolverConfig config_from_json(const json &j) {
    SolverConfig c;
    c.lambda_coeff = j.value("lambda_coeff", c.lambda_coeff);
    c.step_coeff = j.value("step_coeff", c.step_coeff);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.grad_tol = j.value("grad_tol", c.grad_tol);
    c.theta_floor_rel = j.value("theta_floor_rel", c.theta_floor_rel);
    if (j.contains("init"))
        c.init_mode = parse_init_mode(j.at("init").get<std::string>());
    c.line_search = j.value("line_search", c.line_search);
    c.max_halvings = j.value("max_halvings", c.max_halvings);
    c.trace_every = j.value("trace_every", c.trace_every);
    c.stall_window = j.value("stall_window", c.stall_window);
    c.stall_rel = j.value("stall_rel", c.stall_rel);
    c.validate();
    return c;
}

inline json metrics_to_json(const ErrorMetrics &m) {
    return {{"rel_fro", detail::num(m.rel_fro)}, {"rel_spec", detail::num(m.rel_spec)},
            {"rel_inf", detail::num(m.rel_inf)}};
}

inline json report_to_json(const SolveReport &r) {
    json j;
    j["solver"] = "sqrt_mc";
    j["config"] = config_to_json(r.config);
    j["lambda"] = r.lambda;
    j["eta_tilde"] = r.eta_tilde;
    j["theta_floor"] = r.theta_floor;
    j["sigma1_hat"] = r.sigma1_hat;
    j["grad_threshold"] = r.grad_threshold;
    j["stop_reason"] = to_string(r.stop_reason);
    j["t_star"] = r.t_star;
    j["grad_norm"] = detail::num(r.best_grad_norm);
    j["iterations"] = r.iterations;
    j["theta_final"] = r.theta_final;
    j["wall_time_s"] = r.wall_time_s;
    j["trace"] = {{"t", detail::vec(r.trace.t)},         {"f", detail::vec(r.trace.f)},
                  {"g", detail::vec(r.trace.g)},         {"grad_norm", detail::vec(r.trace.grad_norm)},
                  {"theta", detail::vec(r.trace.theta)}, {"step", detail::vec(r.trace.step)}};
    j["metrics"] = r.metrics ? metrics_to_json(*r.metrics) : json(nullptr);
    j["factors"] = {{"X", detail::matrix_to_json(r.best.X)},
                    {"Y", detail::matrix_to_json(r.best.Y)},
                    {"theta", r.best.theta},
                    {"iter", r.best.iter}};
    return j;
}

/// The output iterate stored in a solve report.
inline FactorIterate iterate_from_report(const json &j) {
    if (j.value("solver", std::string{}) != "sqrt_mc")
        throw std::invalid_argument("report: not a square-root MC solve report");
    const json &f = j.at("factors");
    FactorIterate it;
    it.X = detail::matrix_from_json(f.at("X"));
    it.Y = detail::matrix_from_json(f.at("Y"));
    it.theta = f.at("theta").get<double>();
    it.iter = f.at("iter").get<long>();
    if (it.X.cols() != it.Y.cols())
        throw std::invalid_argument("report: factor ranks differ");
    return it;
}

inline json convex_report_to_json(const ConvexSolveReport &r, const std::optional<ErrorMetrics> &m = std::nullopt) {
    return {{"solver", r.solver},
            {"lambda", r.lambda},
            {"theta_hat", r.theta_hat},
            {"objective", detail::vec(r.objective)},
            {"fixed_point_residual", detail::num(r.fixed_point_residual)},
            {"outer_rounds", r.outer_rounds},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"wall_time_s", r.wall_time_s},
            {"metrics", m ? metrics_to_json(*m) : json(nullptr)}};
}

inline json certificate_to_json(const OptimalityCertificate &c) {
    json j{{"pt_r_fro", c.pt_r_fro},
           {"ptperp_r_spec", c.ptperp_r_spec},
           {"grad_norm", detail::num(c.grad_norm)},
           {"c_inj", c.c_inj},
           {"pt_bound", detail::num(c.pt_bound)},
           {"lemma6_pt_bound_ok", c.lemma6_pt_bound_ok},
           {"lemma6_ptperp_ok", c.lemma6_ptperp_ok},
           {"ptperp_margin", 0.5 - c.ptperp_r_spec},
           {"theta", c.theta},
           {"lambda", c.lambda},
           {"kappa_hat", c.kappa_hat},
           {"sigma_min_hat", c.sigma_min_hat},
           {"identity_defect", c.identity_defect}};
    if (c.pt_bound_groundtruth) {
        j["pt_bound_groundtruth"] = detail::num(*c.pt_bound_groundtruth);
        j["pt_bound_groundtruth_ok"] = *c.pt_bound_groundtruth_ok;
    }
    return j;
}

inline json bound_to_json(const BoundCheck &b) {
    return {{"ok", b.ok}, {"lhs", b.lhs}, {"bound", b.bound}, {"ratio", detail::num(b.ratio)}};
}

// Sweeps

inline json slope_to_json(SweepMode mode, const SlopeFit &f) {
    return {{"mode", to_string(mode)},
            {"slope", f.slope},
            {"intercept", f.intercept},
            {"r_squared", f.r_squared},
            {"rows_used", f.rows_used}};
}

/// A sweep spec is either {"preset": name, ...overrides} or a full description.
inline SweepSpec sweep_spec_from_json(const json &j) {
    SweepSpec s;
    if (j.contains("preset"))
        s = preset(j.at("preset").get<std::string>());
    s.name = j.value("name", s.name);
    if (j.contains("mode"))
        s.mode = parse_sweep_mode(j.at("mode").get<std::string>());
    s.n = j.value("n", s.n);
    s.r = j.value("r", s.r);
    s.p = j.value("p", s.p);
    s.sigma = j.value("sigma", s.sigma);
    if (j.contains("noise"))
        s.noise = parse_noise_kind(j.at("noise").get<std::string>());
    if (j.contains("grid"))
        s.grid = j.at("grid").get<std::vector<double>>();
    s.trials = j.value("trials", s.trials);
    s.base_seed = j.value("base_seed", s.base_seed);
    s.record_timing = j.value("record_timing", s.record_timing);
    if (j.contains("solver"))
        s.solver = config_from_json(j.at("solver"));
    if (j.contains("lambda_coeff"))
        s.solver.lambda_coeff = j.at("lambda_coeff").get<double>();
    if (j.contains("convex_tol"))
        s.convex.tol = j.at("convex_tol").get<double>();
    s.validate();
    return s;
}

inline json sweep_spec_to_json(const SweepSpec &s) {
    return {{"name", s.name},   {"mode", to_string(s.mode)},   {"n", s.n},
            {"r", s.r},         {"p", s.p},                    {"sigma", s.sigma},
            {"noise", to_string(s.noise)}, {"grid", s.grid},   {"trials", s.trials},
            {"base_seed", s.base_seed},    {"record_timing", s.record_timing},
            {"solver", config_to_json(s.solver)},              {"convex_tol", s.convex.tol}};
}

// Files

inline json read_json_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open '" + path + "' for reading");
    try {
        return json::parse(in);
    } catch (const json::parse_error &e) {
        throw std::runtime_error("'" + path + "' is not valid JSON: " + e.what());
    }
}

inline void write_text_file(const std::string &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
    if (!out)
        throw std::runtime_error("failed writing '" + path + "'");
}

inline void write_json_file(const std::string &path, const json &j) { write_text_file(path, j.dump(2) + "\n"); }

}  // namespace sqrtmc
