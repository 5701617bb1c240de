#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spiketest/asymptotics.hpp"
#include "spiketest/errors.hpp"
#include "spiketest/factor_inference.hpp"
#include "spiketest/montecarlo.hpp"
#include "spiketest/rng.hpp"
#include "spiketest/simulation.hpp"
#include "spiketest/spectral_measure.hpp"

namespace spiketest {

using json = nlohmann::json;

namespace jsonio {

inline const json& field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected an object");
    const auto it = j.find(key);
    if (it == j.end()) throw ValidationError(where + ": missing required field '" + key + "'");
    return *it;
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    const json& v = field(j, key, where);
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ValidationError(where + ": field '" + key + "' has the wrong type");
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    return get<T>(j, key, where);
}

inline json load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

} // namespace jsonio

inline json to_json(const DiscreteMeasure& h) {
    json atoms = json::array();
    for (const Atom& a : h.atoms()) atoms.push_back({{"t", a.t}, {"w", a.w}});
    return {{"atoms", atoms}};
}

inline DiscreteMeasure measure_from_json(const json& j) {
    const json& atoms = jsonio::field(j, "atoms", "H");
    if (!atoms.is_array()) throw ValidationError("H: 'atoms' must be an array");
    std::vector<Atom> out;
    for (const json& a : atoms)
        out.push_back({jsonio::get<double>(a, "t", "H.atoms[]"), jsonio::get<double>(a, "w", "H.atoms[]")});
    return DiscreteMeasure(std::move(out));
}

inline EntryDistribution distribution_from_json(const json& j) {
    std::string kind;
    double a = 0.0;
    if (j.is_string()) {
        kind = j.get<std::string>();
    } else if (j.is_object()) {
        kind = jsonio::get<std::string>(j, "kind", "dist");
        if (kind == "two_point") {
            if (j.contains("a"))
                a = jsonio::get<double>(j, "a", "dist");
            else
                return EntryDistribution::two_point_for_nu4(jsonio::get<double>(j, "nu4", "dist"));
        }
    } else {
        throw ValidationError("dist: expected a string or an object");
    }
    if (kind == "gaussian") return EntryDistribution::gaussian();
    if (kind == "rademacher") return EntryDistribution::rademacher();
    if (kind == "uniform") return EntryDistribution::uniform();
    if (kind == "two_point") return EntryDistribution::two_point(a);
    throw ValidationError("dist: unknown kind '" + kind + "'");
}

inline json to_json(const EntryDistribution& d) {
    if (d.kind == EntryKind::two_point) return {{"kind", "two_point"}, {"a", d.a}};
    return d.name();
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where) {
    if (!j.is_array()) throw ValidationError(where + ": expected an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    Eigen::MatrixXd m(rows, rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != rows)
            throw ValidationError(where + ": expected a square matrix");
        for (Eigen::Index k = 0; k < rows; ++k) {
            if (!row[static_cast<std::size_t>(k)].is_number())
                throw ValidationError(where + ": entries must be numbers");
            m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
        }
    }
    return m;
}

inline json to_json(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        out.push_back(row);
    }
    return out;
}

// {"H": {"atoms": [...]}, "alphas": [...], "U": [[...]] (optional), "nu4", "n", "p",
//  "y" (optional, default p/n), "diag_second_moment" (optional, default gamma_2)}
inline SpikedModel model_from_json(const json& j) {
    const std::string where = "model";
    DiscreteMeasure h = measure_from_json(jsonio::field(j, "H", where));
    const auto alphas = jsonio::get<std::vector<double>>(j, "alphas", where);
    const double nu4 = jsonio::get<double>(j, "nu4", where);
    const int n = jsonio::get<int>(j, "n", where);
    const int p = jsonio::get<int>(j, "p", where);
    if (n < 1 || p < 1) throw ValidationError("model: n and p must be positive");
    const double y = jsonio::get_or<double>(j, "y", static_cast<double>(p) / n, where);
    BulkSpec bulk = BulkSpec::diagonal(std::move(h));
    bulk.diag_second_moment = jsonio::get_or<double>(j, "diag_second_moment", bulk.diag_second_moment, where);
    Eigen::MatrixXd u;
    if (j.contains("U")) u = matrix_from_json(j["U"], "model.U");
    return SpikedModel::from_spikes(alphas, u, std::move(bulk), y, nu4, n, p);
}

inline json to_json(const AsymptoticSummary& s) {
    json spikes = json::array();
    for (const auto& k : s.spikes)
        spikes.push_back({{"psi", k.psi},
                          {"sigma2_alpha", k.sigma2_alpha},
                          {"s2_alpha", k.s2_alpha},
                          {"mu_M", k.mu_M},
                          {"sigma2_M", k.sigma2_M},
                          {"var1", k.var1},
                          {"mean_corr", k.mean_corr},
                          {"var2", k.var2},
                          {"rho", k.rho},
                          {"cov_trace", k.cov_trace},
                          {"ratio_center", k.ratio_center},
                          {"ratio_var1", k.ratio_var1},
                          {"ratio_var2", k.ratio_var2}});
    return {{"spikes", spikes},
            {"trace", {{"var1", s.trace.var1}, {"var2", s.trace.var2}}},
            {"cross_cov", to_json(s.cross_cov)}};
}

inline json to_json(const TestOutcome& o) {
    return {{"procedure", to_string(o.procedure)},
            {"statistic", o.statistic},
            {"critical_value", o.critical_value},
            {"reject", o.reject},
            {"estimated_alphas", o.estimated_alphas},
            {"estimated_ts", o.estimated_ts},
            {"minimizer_t", o.minimizer_t}};
}

inline Procedure procedure_from_string(const std::string& s) {
    if (s == "corrected") return Procedure::corrected;
    if (s == "uncorrected") return Procedure::uncorrected;
    throw ValidationError("procedure: expected 'corrected' or 'uncorrected', got '" + s + "'");
}

inline ProcedureSet procedure_set_from_string(const std::string& s) {
    if (s == "both") return ProcedureSet::both;
    return procedure_from_string(s) == Procedure::corrected ? ProcedureSet::corrected
                                                            : ProcedureSet::uncorrected;
}

inline const char* to_string(ProcedureSet s) {
    switch (s) {
    case ProcedureSet::corrected: return "corrected";
    case ProcedureSet::uncorrected: return "uncorrected";
    case ProcedureSet::both: return "both";
    }
    return "corrected";
}

// {"m0", "c", "n", "p" (optional when the data says), "alpha_level" (0.05), "t_max" (1e4)}
inline FactorTestConfig test_config_from_json(const json& j, std::optional<int> p_hint = std::nullopt) {
    const std::string where = "test config";
    FactorTestConfig cfg;
    cfg.m0 = jsonio::get<int>(j, "m0", where);
    cfg.c = jsonio::get<double>(j, "c", where);
    cfg.n = jsonio::get<int>(j, "n", where);
    if (j.contains("p"))
        cfg.p = jsonio::get<int>(j, "p", where);
    else if (p_hint)
        cfg.p = *p_hint;
    else
        jsonio::field(j, "p", where);
    cfg.alpha_level = jsonio::get_or<double>(j, "alpha_level", 0.05, where);
    cfg.t_max = jsonio::get_or<double>(j, "t_max", 1e4, where);
    cfg.validate();
    return cfg;
}

// Scenario fields fall back to `defaults` (e.g. a table-level "reps"/"seed").
inline Scenario scenario_from_json(const json& j, const json& defaults = json::object()) {
    const std::string where = "scenario";
    auto pick = [&](const char* key) -> const json* {
        if (j.contains(key)) return &j[key];
        if (defaults.is_object() && defaults.contains(key)) return &defaults[key];
        return nullptr;
    };
    Scenario s;
    s.p = jsonio::get<int>(j, "p", where);
    s.n = jsonio::get<int>(j, "n", where);
    s.c = jsonio::get<double>(j, "c", where);
    s.ts = jsonio::get<std::vector<double>>(j, "t", where);
    try {
        if (const json* v = pick("sigma2")) s.sigma2 = v->get<double>();
        if (const json* v = pick("dist")) s.dist = distribution_from_json(*v);
        if (const json* v = pick("m0")) s.m0 = v->get<int>();
        if (const json* v = pick("alpha_level")) s.alpha_level = v->get<double>();
        if (const json* v = pick("reps")) s.reps = v->get<int>();
        if (const json* v = pick("seed")) s.master_seed = v->get<std::uint64_t>();
        if (const json* v = pick("procedure")) s.procedure = procedure_set_from_string(v->get<std::string>());
    } catch (const json::exception&) {
        throw ValidationError("scenario: optional field has the wrong type");
    }
    s.validate();
    return s;
}

inline json to_json(const Scenario& s) {
    return {{"p", s.p},           {"n", s.n},
            {"c", s.c},           {"t", s.ts},
            {"sigma2", s.sigma2}, {"dist", to_json(s.dist)},
            {"m0", s.tested_index()}, {"alpha_level", s.alpha_level},
            {"reps", s.reps},     {"seed", s.master_seed},
            {"procedure", to_string(s.procedure)}};
}

inline json to_json(const ScenarioReport& r) {
    json procs = json::array();
    for (const auto& p : r.procedures)
        procs.push_back({{"procedure", to_string(p.procedure)},
                         {"rejection_rate", p.rejection_rate},
                         {"mc_standard_error", p.mc_standard_error},
                         {"mean_statistic", p.mean_statistic},
                         {"mean_critical_value", p.mean_critical_value},
                         {"reps", p.reps},
                         {"failures", p.failures}});
    return {{"scenario", to_json(r.scenario)},
            {"procedures", procs},
            {"mean_estimated_alphas", r.mean_estimated_alphas},
            {"mean_estimated_ts", r.mean_estimated_ts}};
}

inline json to_json(const MomentReport& r) {
    json mean_z = json::array();
    for (const auto& e : r.mean_z) mean_z.push_back({{"value", e.value}, {"se", e.se}});
    return {{"reps", r.reps},
            {"mean_z", mean_z},
            {"mean_trace", {{"value", r.mean_trace.value}, {"se", r.mean_trace.se}}},
            {"cov", to_json(r.cov)},
            {"cov_se", to_json(r.cov_se)},
            {"corr_lambda1_trace", {{"value", r.corr_lambda1_trace.value}, {"se", r.corr_lambda1_trace.se}}}};
}

} // namespace spiketest
