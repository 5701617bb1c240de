#pragma once

// First- and second-order limit parameters for the joint law of the m
// largest sample eigenvalues and the trace of a sample covariance matrix
// under the generalized spiked population model
//
//     Sigma_p = [ Lambda  0 ]
//               [ 0       V ],   Lambda = U diag(alpha) U^T,  ESD(V) -> H.
//
// Fluctuations are reported on the normalized scale sqrt(n)(lambda_k/psi_k - 1).

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spiketest/errors.hpp"
#include "spiketest/spectral_measure.hpp"

namespace spiketest {

class SpikedModel {
public:
    static constexpr double kReconstructionTolerance = 1e-10;

    // Spikes given as eigenpairs. `eigvecs` columns are u_k; pass an empty
    // matrix for U = I.
    static SpikedModel from_spikes(std::vector<double> alphas, Eigen::MatrixXd eigvecs,
                                   BulkSpec bulk, double y, double nu4, int n, int p) {
        const auto m = static_cast<Eigen::Index>(alphas.size());
        if (m == 0) throw ValidationError("SpikedModel: at least one spike required");
        if (eigvecs.size() == 0) eigvecs = Eigen::MatrixXd::Identity(m, m);
        if (eigvecs.rows() != m || eigvecs.cols() != m)
            throw ValidationError("SpikedModel: eigvecs must be m x m");
        Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(alphas.data(), m);
        Eigen::MatrixXd lambda = eigvecs * a.asDiagonal() * eigvecs.transpose();
        lambda = 0.5 * (lambda + lambda.transpose()).eval();
        return SpikedModel(std::move(lambda), std::move(a), std::move(eigvecs), std::move(bulk), y,
                           nu4, n, p);
    }

    // Spikes given as the m x m block Lambda; eigenpairs are recovered by a
    // symmetric eigendecomposition and sorted descending.
    static SpikedModel from_block(Eigen::MatrixXd lambda, BulkSpec bulk, double y, double nu4,
                                  int n, int p) {
        if (lambda.rows() != lambda.cols() || lambda.rows() == 0)
            throw ValidationError("SpikedModel: Lambda must be square and non-empty");
        if ((lambda - lambda.transpose()).cwiseAbs().maxCoeff() > kReconstructionTolerance)
            throw ValidationError("SpikedModel: Lambda must be symmetric");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda);
        const Eigen::Index m = lambda.rows();
        Eigen::VectorXd a(m);
        Eigen::MatrixXd u(m, m);
        for (Eigen::Index k = 0; k < m; ++k) {
            a(k) = es.eigenvalues()(m - 1 - k);
            u.col(k) = es.eigenvectors().col(m - 1 - k);
        }
        return SpikedModel(std::move(lambda), std::move(a), std::move(u), std::move(bulk), y, nu4,
                           n, p);
    }

    int m() const { return static_cast<int>(alphas_.size()); }
    const Eigen::MatrixXd& lambda_block() const { return lambda_; }
    const Eigen::VectorXd& alphas() const { return alphas_; }
    const Eigen::MatrixXd& eigvecs() const { return u_; }
    const BulkSpec& bulk() const { return bulk_; }
    const DiscreteMeasure& measure() const { return bulk_.measure; }
    double y() const { return y_; }
    double nu4() const { return nu4_; }
    double beta() const { return nu4_ - 3.0; }
    int n() const { return n_; }
    int p() const { return p_; }
    int p_bulk() const { return p_ - m(); }

    double alpha(int k) const { return alphas_(k); }
    PsiValues psi(int k) const { return psi_family(bulk_.measure, y_, alphas_(k)); }

    // tr(Sigma_p) with the bulk replaced by p' gamma_1.
    double trace_sigma() const { return alphas_.sum() + p_bulk() * moment(bulk_.measure, 1); }

private:
    SpikedModel(Eigen::MatrixXd lambda, Eigen::VectorXd alphas, Eigen::MatrixXd u, BulkSpec bulk,
                double y, double nu4, int n, int p)
        : lambda_(std::move(lambda)), alphas_(std::move(alphas)), u_(std::move(u)),
          bulk_(std::move(bulk)), y_(y), nu4_(nu4), n_(n), p_(p) {
        validate();
    }

    void validate() const {
        const Eigen::Index m = alphas_.size();
        if (!(y_ > 0.0)) throw ValidationError("SpikedModel: y must be positive");
        if (!(nu4_ >= 1.0)) throw ValidationError("SpikedModel: nu4 must be >= 1");
        if (n_ < 1 || p_ < 1) throw ValidationError("SpikedModel: n and p must be positive");
        if (p_ <= m) throw ValidationError("SpikedModel: p must exceed the number of spikes");
        if (!(bulk_.diag_second_moment >= 0.0))
            throw ValidationError("SpikedModel: diag_second_moment must be >= 0");
        for (Eigen::Index k = 1; k < m; ++k)
            if (!(alphas_(k - 1) > alphas_(k)))
                throw ValidationError("SpikedModel: spikes must be strictly descending");
        const Eigen::MatrixXd gram = u_.transpose() * u_;
        if ((gram - Eigen::MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff() > kReconstructionTolerance)
            throw ValidationError("SpikedModel: eigenvectors are not orthonormal");
        const Eigen::MatrixXd rebuilt = u_ * alphas_.asDiagonal() * u_.transpose();
        if ((lambda_ - rebuilt).cwiseAbs().maxCoeff() > kReconstructionTolerance)
            throw ValidationError("SpikedModel: Lambda != U diag(alpha) U^T");
        if (!(alphas_(m - 1) > bulk_.measure.max_atom()))
            throw ValidationError("SpikedModel: smallest spike must exceed every bulk atom");
        for (Eigen::Index k = 0; k < m; ++k)
            if (!(psi_family(bulk_.measure, y_, alphas_(k)).d1 > 0.0))
                throw NotDistantSpike("SpikedModel: spike alpha_" + std::to_string(k + 1) + " = " +
                                      std::to_string(alphas_(k)) + " is not distant");
    }

    Eigen::MatrixXd lambda_;
    Eigen::VectorXd alphas_;
    Eigen::MatrixXd u_;
    BulkSpec bulk_;
    double y_;
    double nu4_;
    int n_;
    int p_;
};

// Variance of the diagonal entries of the limiting Gaussian matrix G(psi_k).
inline double sigma2_alpha(const SpikedModel& model, int k) {
    const double a = model.alpha(k);
    const PsiValues f = model.psi(k);
    if (!(f.d1 > 0.0)) throw NotDistantSpike("sigma2_alpha: spike is not distant");
    const double r = a * a / (f.psi * f.psi);
    return 2.0 * r * f.d1 + model.beta() * r * f.d1 * f.d1;
}

// Variance of the off-diagonal entries of G(psi_k): alpha^2 psi'/psi^2, i.e.
// 1/(psi^2 s'(psi)). This is also the alpha_{k2} -> alpha_{k1} limit of the
// off-diagonal cross covariance.
inline double s2_alpha(const SpikedModel& model, int k) {
    const double a = model.alpha(k);
    const PsiValues f = model.psi(k);
    if (!(f.d1 > 0.0)) throw NotDistantSpike("s2_alpha: spike is not distant");
    return a * a * f.d1 / (f.psi * f.psi);
}

enum class EntryClass { off_diagonal, diagonal };

inline constexpr double kDegenerateSpikeTolerance = 1e-10;

// cov([G(psi_k1)]_ij, [G(psi_k2)]_ij) for k1 != k2.
inline double g_cross_cov(const SpikedModel& model, int k1, int k2, EntryClass entry) {
    if (k1 == k2) throw ValidationError("g_cross_cov: requires k1 != k2");
    const double a1 = model.alpha(k1), a2 = model.alpha(k2);
    const PsiValues f1 = model.psi(k1), f2 = model.psi(k2);
    if (!(f1.d1 > 0.0) || !(f2.d1 > 0.0)) throw NotDistantSpike("g_cross_cov: spike is not distant");
    if (std::abs(f1.psi - f2.psi) < kDegenerateSpikeTolerance)
        throw DegenerateSpikes("g_cross_cov: psi_k1 and psi_k2 coincide");
    const double pref = a1 * a2 * f1.d1 * f2.d1 / (f1.psi * f2.psi);
    const double slope = (a1 - a2) / (f1.psi - f2.psi);
    return entry == EntryClass::off_diagonal ? pref * slope
                                             : pref * (2.0 * slope + model.beta());
}

namespace detail {

// sum_i u_i^4 and sum_{i != j} u_i^2 u_j^2 for column k of U.
inline std::pair<double, double> quartic_sums(const SpikedModel& model, int k) {
    const Eigen::VectorXd u2 = model.eigvecs().col(k).array().square();
    const double diag = u2.squaredNorm();
    const double total = u2.sum() * u2.sum();
    return {diag, total - diag};
}

// (nu4 - 1) sum_i Lambda_ii u_ik^2 + 2 sum_{i != j} Lambda_ij u_ik u_jk.
// Lambda_ij and Lambda_ji multiply the same entry of the symmetric limit, hence
// the factor 2 on the off-diagonal part.
inline double lambda_u_coupling(const SpikedModel& model, int k) {
    const Eigen::MatrixXd& lam = model.lambda_block();
    const Eigen::VectorXd u = model.eigvecs().col(k);
    double diag = 0.0;
    for (Eigen::Index i = 0; i < lam.rows(); ++i) diag += lam(i, i) * u(i) * u(i);
    const double quad = u.dot(lam * u);
    return (model.nu4() - 1.0) * diag + 2.0 * (quad - diag);
}

// n Var(tr S_11) in the limit: (nu4 - 1) sum_i Lambda_ii^2 + 2 sum_{i != j} Lambda_ij^2.
inline double spike_block_trace_var(const SpikedModel& model) {
    const Eigen::MatrixXd& lam = model.lambda_block();
    const double diag = lam.diagonal().squaredNorm();
    const double off = lam.squaredNorm() - diag;
    return (model.nu4() - 1.0) * diag + 2.0 * off;
}

} // namespace detail

// Var(sqrt(n)(lambda_k/psi_k - 1)) to first order: Var(u_k^T G(psi_k) u_k).
inline double lambda_var_first_order(const SpikedModel& model, int k) {
    const auto [diag, off] = detail::quartic_sums(model, k);
    return diag * sigma2_alpha(model, k) + 2.0 * off * s2_alpha(model, k);
}

// Limiting covariance matrix of (M_1, ..., M_m), M_k = u_k^T G(psi_k) u_k.
inline Eigen::MatrixXd cross_spike_covariance(const SpikedModel& model) {
    const int m = model.m();
    const Eigen::MatrixXd& u = model.eigvecs();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
    for (int a = 0; a < m; ++a) {
        cov(a, a) = lambda_var_first_order(model, a);
        for (int b = a + 1; b < m; ++b) {
            const double cd = g_cross_cov(model, a, b, EntryClass::diagonal);
            const double co = g_cross_cov(model, a, b, EntryClass::off_diagonal);
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    const double w = u(i, a) * u(j, a) * u(i, b) * u(j, b);
                    acc += (i == j) ? w * cd : 2.0 * w * co;
                }
            cov(a, b) = cov(b, a) = acc;
        }
    }
    return cov;
}

// Mean of the limit process M(z) at z = psi_k.
inline double mu_M(const SpikedModel& model, int k) {
    const double a = model.alpha(k);
    const double y = model.y();
    const PsiValues f = model.psi(k);
    if (!(f.d1 > 0.0)) throw NotDistantSpike("mu_M: spike is not distant");
    // I_b = int t^2/(1 - t/alpha)^b dH = alpha^b int t^2/(alpha - t)^b dH
    const double i2 = a * a * resolvent_moment(model.measure(), a, 2, 2);
    const double i3 = a * a * a * resolvent_moment(model.measure(), a, 2, 3);
    const double den = 1.0 - (y / (a * a)) * i2;
    return -(1.0 / (a * a * a)) * (y * i3 / (den * den) + y * model.beta() * i3 / den);
}

// Variance of the limit process M(z) at z = psi_k.
inline double sigma2_M(const SpikedModel& model, int k) {
    const double a = model.alpha(k);
    const CompanionDerivatives s = underline_s_at_spike(model.measure(), model.y(), a);
    const double gaussian_part = (2.0 * s.d1 * s.d3 - 3.0 * s.d2 * s.d2) / (6.0 * s.d1 * s.d1);
    // int t^2/(1 + t s)^4 dH with s = -1/alpha
    const double i4 = a * a * a * a * resolvent_moment(model.measure(), a, 2, 4);
    return gaussian_part + model.y() * model.beta() * s.d1 * s.d1 * i4;
}

// E sqrt(n)(lambda_k/psi_k - 1) to order 1/sqrt(n).
inline double lambda_mean_correction(const SpikedModel& model, int k) {
    const double a = model.alpha(k);
    const PsiValues f = model.psi(k);
    return a * a * f.d1 / (std::sqrt(static_cast<double>(model.n())) * f.psi) * mu_M(model, k);
}

inline double lambda_var_refined(const SpikedModel& model, int k) {
    const double a = model.alpha(k);
    const PsiValues f = model.psi(k);
    const double a4 = a * a * a * a;
    return lambda_var_first_order(model, k) +
           a4 * f.d1 * f.d1 * sigma2_M(model, k) / (model.n() * f.psi * f.psi);
}

// Var(tr S_n - tr Sigma_p). First order: 2 y gamma_2 + y (nu4 - 3) gamma_{d,2}.
// Refined: finite-p bulk terms with tr V^2 = p' gamma_2, sum [V]_ii^2 = p' gamma_{d,2},
// plus the spike block contribution.
inline double trace_var(const SpikedModel& model, bool refined) {
    const double g2 = moment(model.measure(), 2);
    const double gd2 = model.bulk().diag_second_moment;
    if (!refined) return 2.0 * model.y() * g2 + model.y() * model.beta() * gd2;
    const double n = model.n();
    const double pb = model.p_bulk();
    return 2.0 * pb * g2 / n + model.beta() * pb * gd2 / n + detail::spike_block_trace_var(model) / n;
}

struct LambdaTraceCovariance {
    double rho = 0.0;    // covariance with tr S_11 - tr Lambda
    double total = 0.0;  // covariance with tr S_n - tr Sigma_p
};

inline LambdaTraceCovariance rho_and_cov_lambda_trace(const SpikedModel& model, int k) {
    const double a = model.alpha(k);
    const PsiValues f = model.psi(k);
    if (!(f.d1 > 0.0)) throw NotDistantSpike("rho: spike is not distant");
    const double rn = std::sqrt(static_cast<double>(model.n()));
    const double rho = a * f.d1 / (rn * f.psi) * detail::lambda_u_coupling(model, k);
    const double i2 = a * a * resolvent_moment(model.measure(), a, 2, 2);
    const double bulk = model.y() * (model.nu4() - 1.0) / (rn * f.psi) * i2;
    return {rho, rho + bulk};
}

struct RatioParams {
    double center = 0.0;
    double variance = 0.0;
};

// Limit law of sqrt(n)(lambda_k / ((1/p) tr S_n) - center).
inline RatioParams ratio_params(const SpikedModel& model, int k, bool refined) {
    const double a = model.alpha(k);
    const PsiValues f = model.psi(k);
    const double tau = model.trace_sigma() / model.p();
    const double center = f.psi / tau;
    const double v1 = lambda_var_first_order(model, k);
    if (!refined) {
        const double g1 = moment(model.measure(), 1);
        return {center, f.psi * f.psi / (g1 * g1) * v1};
    }
    const double n = model.n();
    const double p = model.p();
    const double a2 = a * a, a4 = a2 * a2;
    const double shifted = f.psi + a2 * f.d1 * mu_M(model, k) / n;
    const double tau2 = tau * tau, tau3 = tau2 * tau, tau4 = tau3 * tau;
    const double i2 = a2 * resolvent_moment(model.measure(), a, 2, 2);
    const double g2 = moment(model.measure(), 2);
    const double gd2 = model.bulk().diag_second_moment;

    double var = f.psi * f.psi / tau2 * v1;
    var += a4 * f.d1 * f.d1 * sigma2_M(model, k) / (n * tau2);
    var -= 2.0 * shifted / (p * tau3) *
           (a * f.d1 * detail::lambda_u_coupling(model, k) + model.y() * (model.nu4() - 1.0) * i2);
    var += (2.0 * g2 + model.beta() * gd2) * shifted * shifted / (p * tau4);
    var += detail::spike_block_trace_var(model) * shifted * shifted / (p * p * tau4);
    return {center, var};
}

struct SpikeAsymptotics {
    double psi = 0.0;
    double sigma2_alpha = 0.0;
    double s2_alpha = 0.0;
    double mu_M = 0.0;
    double sigma2_M = 0.0;
    double var1 = 0.0;       // lambda_var_first_order
    double mean_corr = 0.0;  // lambda_mean_correction
    double var2 = 0.0;       // lambda_var_refined
    double rho = 0.0;
    double cov_trace = 0.0;
    double ratio_center = 0.0;
    double ratio_var1 = 0.0;
    double ratio_var2 = 0.0;
};

struct TraceAsymptotics {
    double var1 = 0.0;
    double var2 = 0.0;
};

struct AsymptoticSummary {
    std::vector<SpikeAsymptotics> spikes;
    TraceAsymptotics trace;
    Eigen::MatrixXd cross_cov;
};

inline AsymptoticSummary summarize(const SpikedModel& model) {
    AsymptoticSummary out;
    for (int k = 0; k < model.m(); ++k) {
        SpikeAsymptotics s;
        s.psi = model.psi(k).psi;
        s.sigma2_alpha = sigma2_alpha(model, k);
        s.s2_alpha = s2_alpha(model, k);
        s.mu_M = mu_M(model, k);
        s.sigma2_M = sigma2_M(model, k);
        s.var1 = lambda_var_first_order(model, k);
        s.mean_corr = lambda_mean_correction(model, k);
        s.var2 = lambda_var_refined(model, k);
        const auto cov = rho_and_cov_lambda_trace(model, k);
        s.rho = cov.rho;
        s.cov_trace = cov.total;
        const auto r1 = ratio_params(model, k, false);
        const auto r2 = ratio_params(model, k, true);
        s.ratio_center = r1.center;
        s.ratio_var1 = r1.variance;
        s.ratio_var2 = r2.variance;
        out.spikes.push_back(s);
    }
    out.trace = {trace_var(model, false), trace_var(model, true)};
    out.cross_cov = cross_spike_covariance(model);
    return out;
}

} // namespace spiketest
