#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spiketest/asymptotics.hpp"
#include "spiketest/errors.hpp"
#include "spiketest/rng.hpp"

namespace spiketest {

// x_t = A F_t + E_t with Cov(x) = diag(t_1 sigma^2, ..., t_m sigma^2, sigma^2, ...).
struct FactorSpec {
    std::vector<double> ts;
    double sigma2 = 1.0;
    int p = 0;

    void validate() const {
        if (p < 2) throw ValidationError("FactorSpec: p must be >= 2");
        if (static_cast<int>(ts.size()) >= p) throw ValidationError("FactorSpec: need fewer spikes than p");
        if (!(sigma2 > 0.0)) throw ValidationError("FactorSpec: sigma2 must be positive");
        for (std::size_t k = 0; k < ts.size(); ++k) {
            if (!(ts[k] > 0.0)) throw ValidationError("FactorSpec: SNRs must be positive");
            if (k > 0 && ts[k] > ts[k - 1]) throw ValidationError("FactorSpec: SNRs must be descending");
        }
    }
    double trace_sigma() const {
        double acc = (p - static_cast<int>(ts.size())) * sigma2;
        for (double t : ts) acc += t * sigma2;
        return acc;
    }
};

struct SpectrumSample {
    std::vector<double> eigs;  // descending, length p
    double trace = 0.0;
    int p = 0;
    int n = 0;
    std::uint64_t seed = 0;
};

inline constexpr double kEigenFloor = -1e-10;

// Eigenvalues of (1/n) X X^T in descending order, padded with zeros to p.
// Uses the n x n companion (1/n) X^T X when p > n.
inline std::vector<double> sample_eigenvalues(const Eigen::MatrixXd& x) {
    const Eigen::Index p = x.rows(), n = x.cols();
    Eigen::MatrixXd gram(std::min(p, n), std::min(p, n));
    if (p <= n)
        gram.noalias() = x * x.transpose();
    else
        gram.noalias() = x.transpose() * x;
    gram /= static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NoConvergence("sample_eigenvalues: eigensolver failed");
    std::vector<double> out(static_cast<std::size_t>(p), 0.0);
    const Eigen::Index r = gram.rows();
    for (Eigen::Index i = 0; i < r; ++i) {
        double v = es.eigenvalues()(r - 1 - i);
        if (v < 0.0) {
            if (v < kEigenFloor * std::max(1.0, es.eigenvalues()(r - 1)))
                throw NoConvergence("sample_eigenvalues: eigenvalue below the round-off floor");
            v = 0.0;
        }
        out[static_cast<std::size_t>(i)] = v;
    }
    return out;
}

inline Eigen::MatrixXd draw_entries(int p, int n, EntrySampler& sampler, Engine& eng) {
    Eigen::MatrixXd y(p, n);
    // fixed column-major fill order keeps draws reproducible
    for (Eigen::Index j = 0; j < y.cols(); ++j)
        for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, j) = sampler(eng);
    return y;
}

// Data matrix X = Sigma^{1/2} Y (p x n) for the factor model.
inline Eigen::MatrixXd sample_data(const FactorSpec& spec, int n, EntryDistribution dist,
                                   std::uint64_t seed) {
    spec.validate();
    if (n < 2) throw ValidationError("sample_data: n must be >= 2");
    Engine eng = substream(seed, 0);
    EntrySampler sampler(dist);
    Eigen::MatrixXd x = draw_entries(spec.p, n, sampler, eng);
    Eigen::VectorXd scale = Eigen::VectorXd::Constant(spec.p, std::sqrt(spec.sigma2));
    for (std::size_t k = 0; k < spec.ts.size(); ++k)
        scale(static_cast<Eigen::Index>(k)) = std::sqrt(spec.ts[k] * spec.sigma2);
    x = scale.asDiagonal() * x;
    return x;
}

// Data matrix for the general spiked model: Sigma^{1/2} = U diag(sqrt(alpha)) U^T
// on the first m coordinates, diag(sqrt(v_i)) on the rest with v_i drawn i.i.d.
// from the atoms of H by weight.
inline Eigen::MatrixXd sample_data(const SpikedModel& model, int n, EntryDistribution dist,
                                   std::uint64_t seed) {
    if (n < 2) throw ValidationError("sample_data: n must be >= 2");
    const int p = model.p(), m = model.m();
    Engine eng = substream(seed, 0);

    const auto atoms = model.measure().atoms();
    std::vector<double> cdf;
    double acc = 0.0;
    for (const Atom& a : atoms) cdf.push_back(acc += a.w);
    std::uniform_real_distribution<double> unit(0.0, acc);
    Eigen::VectorXd bulk_scale(p - m);
    for (Eigen::Index i = 0; i < bulk_scale.size(); ++i) {
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), unit(eng));
        const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), atoms.size() - 1);
        bulk_scale(i) = std::sqrt(atoms[idx].t);
    }

    EntrySampler sampler(dist);
    Eigen::MatrixXd x = draw_entries(p, n, sampler, eng);
    const Eigen::VectorXd root = model.alphas().array().sqrt();
    const Eigen::MatrixXd spike_half = model.eigvecs() * root.asDiagonal() * model.eigvecs().transpose();
    x.topRows(m) = (spike_half * x.topRows(m)).eval();
    x.bottomRows(p - m) = bulk_scale.asDiagonal() * x.bottomRows(p - m);
    return x;
}

inline SpectrumSample spectrum_of(const Eigen::MatrixXd& x, std::uint64_t seed) {
    SpectrumSample out;
    out.p = static_cast<int>(x.rows());
    out.n = static_cast<int>(x.cols());
    out.seed = seed;
    out.trace = x.squaredNorm() / out.n;
    out.eigs = sample_eigenvalues(x);
    return out;
}

inline SpectrumSample sample_spectrum(const FactorSpec& spec, int n, EntryDistribution dist,
                                      std::uint64_t seed) {
    return spectrum_of(sample_data(spec, n, dist, seed), seed);
}

inline SpectrumSample sample_spectrum(const SpikedModel& model, int n, EntryDistribution dist,
                                      std::uint64_t seed) {
    return spectrum_of(sample_data(model, n, dist, seed), seed);
}

inline constexpr double kCompanionTolerance = 1e-9;

// Nonzero spectra of (1/n) X X^T and (1/n) X^T X computed independently agree.
inline bool companion_equivalence_check(const Eigen::MatrixXd& x) {
    const double n = static_cast<double>(x.cols());
    auto eig_desc = [](const Eigen::MatrixXd& g) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
        Eigen::VectorXd v = es.eigenvalues().reverse();
        return v;
    };
    const Eigen::VectorXd a = eig_desc(x * x.transpose() / n);
    const Eigen::VectorXd b = eig_desc(x.transpose() * x / n);
    const Eigen::Index r = std::min(a.size(), b.size());
    const double scale = std::max({1.0, a.size() ? std::abs(a(0)) : 0.0, b.size() ? std::abs(b(0)) : 0.0});
    for (Eigen::Index i = 0; i < r; ++i)
        if (std::abs(a(i) - b(i)) > kCompanionTolerance * scale) return false;
    // whatever is left over in the larger spectrum is the null part
    const Eigen::VectorXd& big = a.size() > b.size() ? a : b;
    for (Eigen::Index i = r; i < big.size(); ++i)
        if (std::abs(big(i)) > kCompanionTolerance * scale) return false;
    return true;
}

inline void write_spectrum_csv(std::ostream& os, const SpectrumSample& s) {
    os << "# p=" << s.p << ",n=" << s.n << ",seed=" << s.seed << ",trace=" << std::setprecision(17)
       << s.trace << '\n';
    for (double v : s.eigs) os << std::setprecision(17) << v << '\n';
}

struct SpectrumFile {
    std::vector<double> eigs;
    int p = 0;  // 0 when the header does not say
    int n = 0;
};

// One value per line; blank lines ignored; '#' lines may carry "p=..,n=..".
inline SpectrumFile read_spectrum_csv(std::istream& is) {
    SpectrumFile out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        if (line[first] == '#') {
            std::string body = line.substr(first + 1);
            std::replace(body.begin(), body.end(), ',', ' ');
            std::istringstream ss(body);
            std::string kv;
            while (ss >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
                try {
                    if (key == "p") out.p = std::stoi(val);
                    if (key == "n") out.n = std::stoi(val);
                } catch (const std::exception&) {
                    throw ValidationError("spectrum csv: bad header value '" + kv + "'");
                }
            }
            continue;
        }
        std::string cell = line.substr(first);
        if (const auto comma = cell.find(','); comma != std::string::npos) cell.resize(comma);
        try {
            std::size_t used = 0;
            const double v = std::stod(cell, &used);
            if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("");
            out.eigs.push_back(v);
        } catch (const std::exception&) {
            throw ValidationError("spectrum csv: line " + std::to_string(lineno) + " is not a number");
        }
    }
    return out;
}

inline SpectrumFile read_spectrum_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    return read_spectrum_csv(in);
}

} // namespace spiketest
