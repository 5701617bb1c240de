#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "spiketest/asymptotics.hpp"
#include "spiketest/errors.hpp"
#include "spiketest/factor_inference.hpp"
#include "spiketest/rng.hpp"
#include "spiketest/simulation.hpp"

namespace spiketest {

enum class ProcedureSet { corrected, uncorrected, both };

struct Scenario {
    int p = 0;
    int n = 0;
    double c = 0.0;
    std::vector<double> ts;
    double sigma2 = 2.0;
    EntryDistribution dist = EntryDistribution::gaussian();
    int m0 = 0;  // 0 means ts.size()
    double alpha_level = 0.05;
    int reps = 1000;
    std::uint64_t master_seed = 1;
    ProcedureSet procedure = ProcedureSet::corrected;

    int tested_index() const { return m0 > 0 ? m0 : static_cast<int>(ts.size()); }

    std::vector<Procedure> procedures() const {
        switch (procedure) {
        case ProcedureSet::corrected: return {Procedure::corrected};
        case ProcedureSet::uncorrected: return {Procedure::uncorrected};
        case ProcedureSet::both: return {Procedure::corrected, Procedure::uncorrected};
        }
        return {};
    }

    FactorSpec factor_spec() const { return {ts, sigma2, p}; }

    FactorTestConfig test_config() const {
        FactorTestConfig cfg;
        cfg.m0 = tested_index();
        cfg.c = c;
        cfg.alpha_level = alpha_level;
        cfg.p = p;
        cfg.n = n;
        return cfg;
    }

    void validate() const {
        if (reps < 1) throw ValidationError("Scenario: reps must be positive");
        if (ts.empty()) throw ValidationError("Scenario: at least one SNR required");
        factor_spec().validate();
        test_config().validate();
    }
};

struct ProcedureReport {
    Procedure procedure = Procedure::corrected;
    int reps = 0;      // replications in the denominator
    int failures = 0;  // estimator failures, excluded
    int rejections = 0;
    double rejection_rate = 0.0;
    double mc_standard_error = 0.0;
    double mean_statistic = 0.0;
    double mean_critical_value = 0.0;
};

struct ScenarioReport {
    Scenario scenario;
    std::vector<ProcedureReport> procedures;
    std::vector<double> mean_estimated_alphas;
    std::vector<double> mean_estimated_ts;
};

inline unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

// Runs body(i) for i in [0, count) on `workers` threads. Results must be written
// to per-index slots; the first exception is rethrown.
inline void parallel_for(int count, unsigned workers, const std::function<void(int)>& body) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max(count, 1))));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = static_cast<int>(w); i < count; i += static_cast<int>(workers)) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!error) error = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

namespace detail {

struct ReplicationResult {
    struct PerProcedure {
        bool ok = false;
        bool reject = false;
        double statistic = 0.0;
        double critical_value = 0.0;
    };
    std::vector<PerProcedure> per;
    std::vector<double> alphas;
    std::vector<double> ts;
};

} // namespace detail

// Simulate, test and tally. Per-replication results are reduced in index order,
// so the report does not depend on the worker count.
inline ScenarioReport run_scenario(const Scenario& s, unsigned workers = default_workers()) {
    s.validate();
    const FactorSpec spec = s.factor_spec();
    const FactorTestConfig cfg = s.test_config();
    const std::vector<Procedure> procs = s.procedures();
    std::vector<detail::ReplicationResult> results(static_cast<std::size_t>(s.reps));

    parallel_for(s.reps, workers, [&](int rep) {
        const std::uint64_t seed = replication_seed(s.master_seed, static_cast<std::uint64_t>(rep));
        const SpectrumSample sample = sample_spectrum(spec, s.n, s.dist, seed);
        auto& r = results[static_cast<std::size_t>(rep)];
        r.per.resize(procs.size());
        for (std::size_t k = 0; k < procs.size(); ++k) {
            try {
                const TestOutcome out = run_test(sample.eigs, cfg, procs[k]);
                r.per[k] = {true, out.reject, out.statistic, out.critical_value};
                if (k == 0) r.alphas = out.estimated_alphas, r.ts = out.estimated_ts;
            } catch (const InsufficientSeparation&) {
            } catch (const EmptyRange&) {
            } catch (const DegenerateEigenvalue&) {
            } catch (const NegativeNoiseEstimate&) {
            } catch (const ZeroBulk&) {
            }
        }
    });

    ScenarioReport report;
    report.scenario = s;
    const int m0 = cfg.m0;
    report.mean_estimated_alphas.assign(static_cast<std::size_t>(m0), 0.0);
    report.mean_estimated_ts.assign(static_cast<std::size_t>(m0), 0.0);
    int estimated = 0;
    for (const auto& r : results) {
        if (r.alphas.empty()) continue;
        ++estimated;
        for (int k = 0; k < m0; ++k) {
            report.mean_estimated_alphas[k] += r.alphas[k];
            report.mean_estimated_ts[k] += r.ts[k];
        }
    }
    for (int k = 0; k < m0 && estimated > 0; ++k) {
        report.mean_estimated_alphas[k] /= estimated;
        report.mean_estimated_ts[k] /= estimated;
    }

    for (std::size_t k = 0; k < procs.size(); ++k) {
        ProcedureReport pr;
        pr.procedure = procs[k];
        double stat = 0.0, crit = 0.0;
        for (const auto& r : results) {
            const auto& e = r.per[k];
            if (!e.ok) {
                ++pr.failures;
                continue;
            }
            ++pr.reps;
            pr.rejections += e.reject ? 1 : 0;
            stat += e.statistic;
            crit += e.critical_value;
        }
        if (pr.reps > 0) {
            pr.rejection_rate = static_cast<double>(pr.rejections) / pr.reps;
            pr.mc_standard_error = std::sqrt(pr.rejection_rate * (1.0 - pr.rejection_rate) / pr.reps);
            pr.mean_statistic = stat / pr.reps;
            pr.mean_critical_value = crit / pr.reps;
        }
        report.procedures.push_back(pr);
    }
    return report;
}

struct Estimate {
    double value = 0.0;
    double se = 0.0;
};

// Empirical moments of z_k = sqrt(n)(lambda_k/psi_k - 1), k = 1..m, and
// tau = tr S_n - tr Sigma_p.
struct MomentReport {
    int reps = 0;
    std::vector<Estimate> mean_z;
    Estimate mean_trace;
    Eigen::MatrixXd cov;     // (m+1) x (m+1), last index is tau
    Eigen::MatrixXd cov_se;  // jackknife standard errors
    Estimate corr_lambda1_trace;
};

namespace detail {

// Delete-one jackknife of cov(a, b) and corr(a, b) in O(N).
struct CovJackknife {
    Estimate cov;
    Estimate corr;
};

inline CovJackknife jackknife_cov(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double n = static_cast<double>(a.size());
    const Eigen::ArrayXd da = a.array() - a.mean();
    const Eigen::ArrayXd db = b.array() - b.mean();
    const double sab = (da * db).sum(), saa = da.square().sum(), sbb = db.square().sum();
    const double k = n / (n - 1.0);
    const Eigen::ArrayXd loo_ab = (sab - k * da * db) / (n - 2.0);
    const Eigen::ArrayXd loo_aa = (saa - k * da.square()) / (n - 2.0);
    const Eigen::ArrayXd loo_bb = (sbb - k * db.square()) / (n - 2.0);
    const Eigen::ArrayXd loo_r = loo_ab / (loo_aa * loo_bb).sqrt();
    auto se = [n](const Eigen::ArrayXd& v) {
        return std::sqrt((n - 1.0) / n * (v - v.mean()).square().sum());
    };
    CovJackknife out;
    out.cov = {sab / (n - 1.0), se(loo_ab)};
    out.corr = {sab / std::sqrt(saa * sbb), se(loo_r)};
    return out;
}

} // namespace detail

inline MomentReport moment_oracle(const SpikedModel& model, int n, EntryDistribution dist, int reps,
                                  std::uint64_t seed, unsigned workers = default_workers()) {
    if (reps < 3) throw ValidationError("moment_oracle: need at least 3 replications");
    const int m = model.m();
    std::vector<double> psi(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) psi[k] = model.psi(k).psi;
    const double trace_sigma = model.trace_sigma();
    const double rn = std::sqrt(static_cast<double>(n));

    Eigen::MatrixXd data(reps, m + 1);
    parallel_for(reps, workers, [&](int rep) {
        const SpectrumSample s =
            sample_spectrum(model, n, dist, replication_seed(seed, static_cast<std::uint64_t>(rep)));
        for (int k = 0; k < m; ++k) data(rep, k) = rn * (s.eigs[k] / psi[k] - 1.0);
        data(rep, m) = s.trace - trace_sigma;
    });

    MomentReport out;
    out.reps = reps;
    const double nr = reps;
    for (int k = 0; k <= m; ++k) {
        const Eigen::VectorXd col = data.col(k);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().sum() / (nr - 1.0));
        const Estimate e{mean, sd / std::sqrt(nr)};
        if (k < m)
            out.mean_z.push_back(e);
        else
            out.mean_trace = e;
    }
    out.cov.resize(m + 1, m + 1);
    out.cov_se.resize(m + 1, m + 1);
    for (int a = 0; a <= m; ++a)
        for (int b = a; b <= m; ++b) {
            const auto jk = detail::jackknife_cov(data.col(a), data.col(b));
            out.cov(a, b) = out.cov(b, a) = jk.cov.value;
            out.cov_se(a, b) = out.cov_se(b, a) = jk.cov.se;
            if (a == 0 && b == m) out.corr_lambda1_trace = jk.corr;
        }
    return out;
}

inline std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

inline std::string format_rate(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

inline void write_table_csv(std::ostream& os, const std::vector<ScenarioReport>& reports) {
    std::size_t k_max = 0;
    for (const auto& r : reports) k_max = std::max(k_max, r.scenario.ts.size());
    os << "p,n,c";
    for (std::size_t k = 0; k < k_max; ++k) os << ",t" << (k + 1);
    os << ",procedure,rate,se,reps,seed,failures\n";
    for (const auto& r : reports)
        for (const auto& pr : r.procedures) {
            const Scenario& s = r.scenario;
            os << s.p << ',' << s.n << ',' << format_number(s.c);
            for (std::size_t k = 0; k < k_max; ++k) {
                os << ',';
                if (k < s.ts.size()) os << format_number(s.ts[k]);
            }
            os << ',' << to_string(pr.procedure) << ',' << format_rate(pr.rejection_rate) << ','
               << format_rate(pr.mc_standard_error) << ',' << pr.reps << ',' << s.master_seed << ','
               << pr.failures << '\n';
        }
}

inline std::vector<ScenarioReport> table_runner(const std::vector<Scenario>& scenarios,
                                                const std::string& out_path,
                                                unsigned workers = default_workers()) {
    std::vector<ScenarioReport> reports;
    reports.reserve(scenarios.size());
    for (const auto& s : scenarios) reports.push_back(run_scenario(s, workers));
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw Error("table_runner: cannot open " + out_path + " for writing");
    write_table_csv(out, reports);
    if (!out) throw Error("table_runner: write to " + out_path + " failed");
    return reports;
}

} // namespace spiketest
