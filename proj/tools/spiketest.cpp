// spiketest command line front end.
//
// Exit codes: 0 success / accept, 1 reject (test only), 2 invalid input,
// 3 spike not distant, 4 empty critical-value range, 5 other numerical failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spiketest/spiketest.hpp"

namespace st = spiketest;

namespace {

enum ExitCode : int {
    kAccept = 0,
    kReject = 1,
    kInvalid = 2,
    kNotDistant = 3,
    kEmptyRange = 4,
    kNumerical = 5,
};

// Raw data: one observation per line, p comma-separated values.
Eigen::MatrixXd read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw st::ValidationError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw st::ValidationError(path + ": non-numeric cell '" + cell + "'");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw st::ValidationError(path + ": ragged rows");
        rows.push_back(std::move(row));
    }
    if (rows.size() < 2) throw st::ValidationError(path + ": need at least two observations");
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(rows.front().size());
    Eigen::MatrixXd x(p, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < p; ++i) x(i, j) = rows[j][i];
    return x;
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw st::Error("cannot open " + path + " for writing");
    out << text;
}

int cmd_asymptotics(const std::string& config) {
    const st::json cfg = st::jsonio::load_file(config);
    const st::SpikedModel model = st::model_from_json(cfg.contains("model") ? cfg["model"] : cfg);
    std::cout << st::to_json(st::summarize(model)).dump(2) << '\n';
    return kAccept;
}

int cmd_test(const std::string& config, const std::string& data, const std::string& matrix,
             const std::string& procedure) {
    const st::json cfg = st::jsonio::load_file(config);
    std::vector<double> eigs;
    std::optional<int> p_hint;
    int n_from_data = 0;
    if (!matrix.empty()) {
        const Eigen::MatrixXd x = read_matrix_csv(matrix);
        eigs = st::sample_eigenvalues(x);
        p_hint = static_cast<int>(x.rows());
        n_from_data = static_cast<int>(x.cols());
    } else {
        const st::SpectrumFile f = st::read_spectrum_csv(data);
        eigs = f.eigs;
        p_hint = f.p > 0 ? f.p : static_cast<int>(eigs.size());
        n_from_data = f.n;
    }
    st::json merged = cfg;
    if (!merged.contains("n") && n_from_data > 0) merged["n"] = n_from_data;
    const st::FactorTestConfig tc = st::test_config_from_json(merged, p_hint);
    const std::string proc_name =
        procedure.empty() ? st::jsonio::get_or<std::string>(cfg, "procedure", "corrected", "test config")
                          : procedure;
    const st::TestOutcome out = st::run_test(eigs, tc, st::procedure_from_string(proc_name));
    std::cout << (out.reject ? "REJECT" : "ACCEPT") << " H0: alpha_" << tc.m0 << "/sigma^2 >= " << tc.c
              << " (T = " << out.statistic << ", q* = " << out.critical_value << ")\n";
    std::cout << st::to_json(out).dump() << '\n';
    return out.reject ? kReject : kAccept;
}

int cmd_simulate(const std::string& config, const std::string& output, std::optional<std::uint64_t> seed) {
    const st::json cfg = st::jsonio::load_file(config);
    const std::string where = "simulate config";
    const st::EntryDistribution dist =
        cfg.contains("dist") ? st::distribution_from_json(cfg["dist"]) : st::EntryDistribution::gaussian();
    const std::uint64_t s = seed ? *seed : st::jsonio::get_or<std::uint64_t>(cfg, "seed", 1, where);
    st::SpectrumSample sample;
    if (cfg.contains("model")) {
        const st::SpikedModel model = st::model_from_json(cfg["model"]);
        sample = st::sample_spectrum(model, model.n(), dist, s);
    } else {
        st::FactorSpec spec;
        spec.p = st::jsonio::get<int>(cfg, "p", where);
        spec.ts = st::jsonio::get<std::vector<double>>(cfg, "t", where);
        spec.sigma2 = st::jsonio::get_or<double>(cfg, "sigma2", 2.0, where);
        sample = st::sample_spectrum(spec, st::jsonio::get<int>(cfg, "n", where), dist, s);
    }
    std::ostringstream os;
    st::write_spectrum_csv(os, sample);
    write_or_print(output, os.str());
    return kAccept;
}

int cmd_mc_table(const std::string& config, const std::string& output, std::optional<int> reps,
                 std::optional<std::uint64_t> seed, unsigned workers, const std::string& report) {
    const st::json cfg = st::jsonio::load_file(config);
    st::json defaults = st::json::object();
    for (const char* key : {"reps", "seed", "sigma2", "dist", "alpha_level", "procedure"})
        if (cfg.contains(key)) defaults[key] = cfg[key];
    if (reps) defaults["reps"] = *reps;
    if (seed) defaults["seed"] = *seed;

    const st::json& list = st::jsonio::field(cfg, "scenarios", "mc-table config");
    if (!list.is_array()) throw st::ValidationError("mc-table config: 'scenarios' must be an array");
    std::vector<st::Scenario> scenarios;
    for (st::json sc : list) {
        if (reps) sc["reps"] = *reps;
        if (seed) sc["seed"] = *seed;
        scenarios.push_back(st::scenario_from_json(sc, defaults));
    }
    const auto reports = st::table_runner(scenarios, output, workers);
    if (!report.empty()) {
        st::json all = st::json::array();
        for (const auto& r : reports) all.push_back(st::to_json(r));
        write_or_print(report, all.dump(2) + "\n");
    }
    return kAccept;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spiked covariance asymptotics and factor-strength tests"};
    app.require_subcommand(1);

    std::string config, data, matrix, output, procedure, report;
    std::optional<int> reps;
    std::optional<std::uint64_t> seed;
    unsigned workers = st::default_workers();

    auto* asym = app.add_subcommand("asymptotics", "Print limit parameters of a spiked model as JSON");
    asym->add_option("-c,--config", config, "Model JSON")->required()->check(CLI::ExistingFile);

    auto* test = app.add_subcommand("test", "Test the strength of the m0-th spike");
    test->add_option("-c,--config", config, "Test JSON")->required()->check(CLI::ExistingFile);
    auto* data_opt = test->add_option("-d,--data", data, "Eigenvalue CSV, one per line")->check(CLI::ExistingFile);
    auto* mat_opt = test->add_option("-m,--matrix", matrix, "Raw data CSV, one observation per row")
                        ->check(CLI::ExistingFile);
    data_opt->excludes(mat_opt);
    test->add_option("--procedure", procedure, "corrected or uncorrected");

    auto* sim = app.add_subcommand("simulate", "Draw one sample spectrum");
    sim->add_option("-c,--config", config, "Simulation JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("-o,--output", output, "Output CSV (default stdout)");
    sim->add_option("--seed", seed, "Seed override");

    auto* mc = app.add_subcommand("mc-table", "Run size/power scenarios and write a CSV table");
    mc->add_option("-c,--config", config, "Scenario list JSON")->required()->check(CLI::ExistingFile);
    mc->add_option("-o,--output", output, "Output CSV")->required();
    mc->add_option("--reps", reps, "Replications per scenario")->check(CLI::PositiveNumber);
    mc->add_option("--seed", seed, "Master seed override");
    mc->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    mc->add_option("--report", report, "Also write the full JSON report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kInvalid;
    }

    try {
        if (*asym) return cmd_asymptotics(config);
        if (*test) {
            if (data.empty() && matrix.empty()) throw st::ValidationError("test: one of --data or --matrix is required");
            return cmd_test(config, data, matrix, procedure);
        }
        if (*sim) return cmd_simulate(config, output, seed);
        if (*mc) return cmd_mc_table(config, output, reps, seed, workers, report);
    } catch (const st::NotDistantSpike& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNotDistant;
    } catch (const st::EmptyRange& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kEmptyRange;
    } catch (const st::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    } catch (const st::BelowThreshold& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInvalid;
    } catch (const st::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumerical;
    }
    return kInvalid;
}
