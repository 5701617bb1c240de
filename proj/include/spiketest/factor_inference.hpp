#pragma once

// Testing the strength of the m0-th factor in x_t = A F_t + E_t:
//
//     H0: alpha_{m0} / sigma^2 >= c   against   H1: alpha_{m0} / sigma^2 < c,
//
// via T = lambda_{m0} / mean(lambda_{m0+1}, ..., lambda_p). Everything is
// parameterized by the SNRs t_k = alpha_k / sigma^2, so sigma^2 never has to
// be known.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "spiketest/errors.hpp"
#include "spiketest/normal_quantile.hpp"
#include "spiketest/spectral_measure.hpp"

namespace spiketest {

enum class Procedure { corrected, uncorrected };

inline const char* to_string(Procedure p) {
    return p == Procedure::corrected ? "corrected" : "uncorrected";
}

struct FactorTestConfig {
    int m0 = 1;
    double c = 0.0;
    double alpha_level = 0.05;
    int p = 0;
    int n = 0;
    double t_max = 1e4;  // upper end of the q* search when m0 = 1

    double y() const { return static_cast<double>(p) / n; }

    void validate() const {
        if (p < 2 || n < 2) throw ValidationError("FactorTestConfig: p and n must be >= 2");
        if (m0 < 1) throw ValidationError("FactorTestConfig: m0 must be positive");
        if (m0 >= p) throw ValidationError("FactorTestConfig: m0 must be < p");
        if (!(alpha_level > 0.0 && alpha_level < 1.0))
            throw ValidationError("FactorTestConfig: alpha_level must be in (0, 1)");
        if (!(c > 1.0 + std::sqrt(y())))
            throw ValidationError("FactorTestConfig: c must exceed 1 + sqrt(p/n) = " +
                                  std::to_string(1.0 + std::sqrt(y())));
        if (!(t_max > c)) throw ValidationError("FactorTestConfig: t_max must exceed c");
    }
};

struct TestOutcome {
    Procedure procedure = Procedure::corrected;
    double statistic = 0.0;
    double critical_value = 0.0;
    bool reject = false;
    std::vector<double> estimated_alphas;
    std::vector<double> estimated_ts;
    double minimizer_t = 0.0;
};

inline double test_statistic(std::span<const double> eigs, int m0) {
    const auto p = static_cast<int>(eigs.size());
    if (m0 < 1 || p < m0 + 1) throw ValidationError("test_statistic: need 1 <= m0 < p");
    const double tail = std::accumulate(eigs.begin() + m0, eigs.end(), 0.0);
    const double mean = tail / (p - m0);
    if (!(mean > 0.0)) throw ZeroBulk("test_statistic: trailing eigenvalue mean is not positive");
    return eigs[m0 - 1] / mean;
}

namespace detail {

inline void require_distant(std::span<const double> ts, double y, const char* where) {
    const double edge = 1.0 + std::sqrt(y);
    for (double t : ts)
        if (!(t > edge))
            throw BelowThreshold(std::string(where) + ": t = " + std::to_string(t) +
                                 " is not above 1 + sqrt(y) = " + std::to_string(edge));
}

// 1 - (1/(p - m0)) sum_j y / (1 - 1/t_j), i.e. sigma_tilde^2 / sigma^2 without the
// 1/n mean corrections.
inline double noise_ratio(std::span<const double> ts, double y, int p) {
    const auto m0 = static_cast<int>(ts.size());
    double acc = 0.0;
    for (double t : ts) acc += y / (1.0 - 1.0 / t);
    return 1.0 - acc / (p - m0);
}

inline double psi_over_sigma2(double t, double y) { return t + y / (1.0 - 1.0 / t); }

} // namespace detail

struct CorollaryParams {
    double psi = 0.0;
    double sigma_tilde2 = 0.0;
    double mu_M = 0.0;
    double sigma2_M = 0.0;
};

// Factor-model values at spike k (1-based) with alpha_j = t_j sigma^2 and
// tr Sigma_p = sum_j alpha_j + (p - m) sigma^2, m = t_list.size().
inline CorollaryParams corollary_params(std::span<const double> t_list, double sigma2, double y,
                                        int p, int n, int k) {
    const auto m = static_cast<int>(t_list.size());
    if (k < 1 || k > m) throw ValidationError("corollary_params: need 1 <= k <= m");
    if (!(sigma2 > 0.0)) throw ValidationError("corollary_params: sigma2 must be positive");
    if (p <= m) throw ValidationError("corollary_params: p must exceed m");
    detail::require_distant(t_list, y, "corollary_params");

    auto psi_j = [&](double a) { return a + y * a * sigma2 / (a - sigma2); };
    auto d1_j = [&](double a) { return 1.0 - y * sigma2 * sigma2 / ((a - sigma2) * (a - sigma2)); };
    auto mu_j = [&](double a) {
        const double d = a - sigma2;
        const double g = 1.0 - y * sigma2 * sigma2 / (d * d);
        return -y * sigma2 * sigma2 / (d * d * d * g * g);
    };

    double trace = (p - m) * sigma2;
    for (double t : t_list) trace += t * sigma2;
    double removed = 0.0;
    for (int j = 0; j < k; ++j) {
        const double a = t_list[j] * sigma2;
        removed += psi_j(a) + a * a * d1_j(a) * mu_j(a) / n;
    }

    const double a = t_list[k - 1] * sigma2;
    const CompanionDerivatives s = underline_s_at_spike(DiscreteMeasure::point_mass(sigma2), y, a);
    CorollaryParams out;
    out.psi = psi_j(a);
    out.sigma_tilde2 = (trace - removed) / (p - k);
    out.mu_M = mu_j(a);
    out.sigma2_M = (2.0 * s.d1 * s.d3 - 3.0 * s.d2 * s.d2) / (6.0 * s.d1 * s.d1);
    return out;
}

enum class SigmaStarForm {
    explicit_t,  // the closed t-parameterized form used by the critical value
    full,        // every term of the refined variance, sigma^2 = 1, m = m0
};

// Refined variance of T_{m0} at SNRs t_list = (t_1, ..., t_{m0}); only the
// first m0 entries are used.
inline double sigma_star2(std::span<const double> t_list, double y, int p, int n, int m0,
                          SigmaStarForm form = SigmaStarForm::explicit_t) {
    if (m0 < 1 || static_cast<int>(t_list.size()) < m0)
        throw ValidationError("sigma_star2: t_list shorter than m0");
    if (p <= m0) throw ValidationError("sigma_star2: p must exceed m0");
    const auto ts = t_list.first(static_cast<std::size_t>(m0));
    detail::require_distant(ts, y, "sigma_star2");
    const double pk = p - m0;

    if (form == SigmaStarForm::explicit_t) {
        const double t = ts[m0 - 1];
        const double f = 1.0 / detail::noise_ratio(ts, y, p);
        const double pb = detail::psi_over_sigma2(t, y);
        const double tm1 = t - 1.0;
        const double tm1_3 = tm1 * tm1 * tm1;
        const double tm1_6 = tm1_3 * tm1_3;
        const double w = 1.0 - y / (tm1 * tm1);
        const double bracket = 4.0 * y * t / (3.0 * tm1_3) -
                               4.0 * y * t / (3.0 * tm1_3 * w * w * w) +
                               2.0 * y * y * t * t / (3.0 * tm1_6 * w * w * w * w) +
                               2.0 * y * t * t / (tm1 * tm1 * tm1 * tm1) +
                               4.0 * y * y * t * t / (3.0 * tm1_6 * w);
        return 2.0 * t * t * w * f * f -
               4.0 * y * t * t / (pk * tm1 * tm1) * pb * f * f * f +
               2.0 * y * n / (pk * pk) * pb * pb * f * f * f * f +
               t * t * w * w / n * f * f * bracket;
    }

    const CorollaryParams cp = corollary_params(ts, 1.0, y, p, n, m0);
    const double a = ts[m0 - 1];
    const double a2 = a * a;
    const double d1 = 1.0 - y / ((a - 1.0) * (a - 1.0));
    const double st2 = cp.sigma_tilde2;
    const double st4 = st2 * st2, st6 = st4 * st2, st8 = st4 * st4;
    const double psi1 = cp.psi + a2 * d1 * cp.mu_M / n;
    const double psi2 = cp.psi + 2.0 * a2 * d1 * cp.mu_M / n;
    const double m_term = a2 * a2 * d1 * d1 * cp.sigma2_M;
    double sum_a2 = 0.0, sum_k = 0.0;
    for (double t : ts) {
        const double dj = 1.0 - y / ((t - 1.0) * (t - 1.0));
        sum_a2 += t * t;
        sum_k += 2.0 * t * t * dj - 4.0 * t * t;
    }
    return 2.0 * a2 * d1 / st4 + 4.0 * a2 * d1 * psi2 / (pk * st6) + m_term / (n * st4) -
           4.0 * a2 * psi1 / (pk * st6) +
           n / (pk * pk) * (2.0 * y + 2.0 / n * sum_a2) * psi2 * psi2 / st8 +
           2.0 * cp.psi * m_term / (n * pk * st6) + cp.psi * cp.psi * sum_k / (pk * pk * st8);
}

// Critical value q_{n,alpha}(t_{m0}, ..., t_1); t_list = (t_1, ..., t_{m0}).
inline double q_alpha(std::span<const double> t_list, double y, int p, int n, double alpha_level,
                      Procedure procedure = Procedure::corrected) {
    const auto m0 = static_cast<int>(t_list.size());
    if (m0 < 1) throw ValidationError("q_alpha: empty t_list");
    detail::require_distant(t_list, y, "q_alpha");
    const double z = normal_quantile(alpha_level);
    const double t = t_list[m0 - 1];
    const double center = detail::psi_over_sigma2(t, y);
    if (procedure == Procedure::uncorrected) {
        const double v = 2.0 * t * t - 2.0 * y * t * t / ((t - 1.0) * (t - 1.0));
        return center + z * std::sqrt(v) / std::sqrt(static_cast<double>(n));
    }
    const double d = detail::noise_ratio(t_list, y, p);
    const double v = sigma_star2(t_list, y, p, n, m0);
    if (!(d > 0.0) || !(v > 0.0))
        throw ValidationError("q_alpha: p - m0 too small for the bias correction to be defined");
    return center / d + z * std::sqrt(v) / std::sqrt(static_cast<double>(n));
}

struct QStar {
    double value = 0.0;
    double argmin = 0.0;
};

inline constexpr int kQStarGrid = 512;
inline constexpr double kQStarTolerance = 1e-8;

// inf of q_alpha over c <= t_{m0} < t_{m0-1}; t_upper = (t_1, ..., t_{m0-1}).
// With no upper spikes the range is [c, t_max).
inline QStar q_star(std::span<const double> t_upper, double c, double y, int p, int n,
                    double alpha_level, Procedure procedure = Procedure::corrected,
                    double t_max = 1e4) {
    const double hi = t_upper.empty() ? t_max : t_upper.back();
    if (!(c < hi))
        throw EmptyRange("q_star: c = " + std::to_string(c) + " is not below " + std::to_string(hi));
    std::vector<double> ts(t_upper.begin(), t_upper.end());
    ts.push_back(c);
    auto q = [&](double t) {
        ts.back() = t;
        return q_alpha(ts, y, p, n, alpha_level, procedure);
    };

    const double h = (hi - c) / kQStarGrid;
    QStar best{q(c), c};
    int best_i = 0;
    for (int i = 1; i < kQStarGrid; ++i) {
        const double t = c + i * h;
        const double v = q(t);
        if (v < best.value) best = {v, t}, best_i = i;
    }

    // golden-section refinement around the best grid point
    double a = c + std::max(best_i - 1, 0) * h;
    double b = std::min(c + (best_i + 1) * h, hi);
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = q(x1), f2 = q(x2);
    while (b - a > kQStarTolerance) {
        if (f1 < f2) {
            b = x2, x2 = x1, f2 = f1;
            x1 = b - g * (b - a), f1 = q(x1);
        } else {
            a = x1, x1 = x2, f1 = f2;
            x2 = a + g * (b - a), f2 = q(x2);
        }
    }
    if (f1 < best.value) best = {f1, x1};
    if (f2 < best.value) best = {f2, x2};
    return best;
}

inline constexpr double kEigenGapTolerance = 1e-12;

// Plug-in spike estimates alpha_hat_k = -1/s_hat(lambda_k), k = 1..m0, with
// s_hat(lambda_k) = -(1 - y)/lambda_k + (1/n) sum_{i>m0} 1/(lambda_i - lambda_k).
inline std::vector<double> estimate_spikes(std::span<const double> eigs, int n, int p, int m0) {
    if (static_cast<int>(eigs.size()) != p) throw ValidationError("estimate_spikes: need p eigenvalues");
    if (m0 < 1 || m0 >= p) throw ValidationError("estimate_spikes: need 1 <= m0 < p");
    const double y = static_cast<double>(p) / n;
    std::vector<double> out;
    out.reserve(m0);
    for (int k = 0; k < m0; ++k) {
        const double lk = eigs[k];
        if (!(lk > 0.0)) throw DegenerateEigenvalue("estimate_spikes: spike eigenvalue is not positive");
        double acc = 0.0;
        for (int i = m0; i < p; ++i) {
            const double d = eigs[i] - lk;
            if (std::abs(d) < kEigenGapTolerance)
                throw DegenerateEigenvalue("estimate_spikes: lambda_" + std::to_string(k + 1) +
                                           " coincides with a bulk eigenvalue");
            acc += 1.0 / d;
        }
        const double s = -(1.0 - y) / lk + acc / n;
        if (!(s < 0.0))
            throw DegenerateEigenvalue("estimate_spikes: companion transform at lambda_" +
                                       std::to_string(k + 1) + " is not negative");
        out.push_back(-1.0 / s);
    }
    return out;
}

inline std::vector<double> estimate_ts(std::span<const double> eigs,
                                       std::span<const double> alpha_hats, int m0, int p) {
    if (static_cast<int>(alpha_hats.size()) != m0) throw ValidationError("estimate_ts: need m0 estimates");
    if (m0 >= p) throw ValidationError("estimate_ts: need m0 < p");
    const double trace = std::accumulate(eigs.begin(), eigs.end(), 0.0);
    const double spikes = std::accumulate(alpha_hats.begin(), alpha_hats.end(), 0.0);
    const double noise = (trace - spikes) / (p - m0);
    if (!(noise > 0.0)) throw NegativeNoiseEstimate("estimate_ts: noise estimate is not positive");
    std::vector<double> out;
    out.reserve(m0);
    for (double a : alpha_hats) out.push_back(a / noise);
    return out;
}

inline void validate_spectrum(std::span<const double> eigs, int p) {
    if (static_cast<int>(eigs.size()) != p)
        throw ValidationError("spectrum has " + std::to_string(eigs.size()) + " values, expected p = " +
                              std::to_string(p));
    for (std::size_t i = 0; i < eigs.size(); ++i) {
        if (!std::isfinite(eigs[i]) || eigs[i] < 0.0)
            throw ValidationError("spectrum: eigenvalues must be finite and nonnegative");
        if (i > 0 && eigs[i] > eigs[i - 1])
            throw ValidationError("spectrum: eigenvalues must be sorted descending");
    }
}

inline TestOutcome run_test(std::span<const double> eigs, const FactorTestConfig& config,
                            Procedure procedure = Procedure::corrected) {
    config.validate();
    validate_spectrum(eigs, config.p);
    const int m0 = config.m0;
    const double y = config.y();

    TestOutcome out;
    out.procedure = procedure;
    out.statistic = test_statistic(eigs, m0);
    out.estimated_alphas = estimate_spikes(eigs, config.n, config.p, m0);
    out.estimated_ts = estimate_ts(eigs, out.estimated_alphas, m0, config.p);

    const double edge = 1.0 + std::sqrt(y);
    for (int j = 0; j + 1 < m0; ++j)
        if (!(out.estimated_ts[j] > edge))
            throw InsufficientSeparation("run_test: t_hat_" + std::to_string(j + 1) + " = " +
                                         std::to_string(out.estimated_ts[j]) +
                                         " is not above 1 + sqrt(p/n)");

    const std::span<const double> upper(out.estimated_ts.data(), static_cast<std::size_t>(m0 - 1));
    const QStar qs = q_star(upper, config.c, y, config.p, config.n, config.alpha_level, procedure,
                            config.t_max);
    out.critical_value = qs.value;
    out.minimizer_t = qs.argmin;
    out.reject = out.statistic < out.critical_value;
    return out;
}

} // namespace spiketest
