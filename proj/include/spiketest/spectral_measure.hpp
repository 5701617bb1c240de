#pragma once

// Bulk spectral measures H with finitely many atoms, the psi map that sends a
// population spike to the almost-sure limit of its sample eigenvalue, the
// companion Stieltjes transform on the real axis, and the support of the
// companion limiting spectral distribution.
//
// Every integral against H is an exact finite sum over atoms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spiketest/errors.hpp"

namespace spiketest {

struct Atom {
    double t = 0.0;  // location, >= 0
    double w = 0.0;  // weight, > 0

    bool operator==(const Atom&) const = default;
};

class DiscreteMeasure {
public:
    static constexpr double kWeightTolerance = 1e-12;

    explicit DiscreteMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
        if (atoms_.empty()) throw ValidationError("DiscreteMeasure: no atoms");
        std::sort(atoms_.begin(), atoms_.end(),
                  [](const Atom& a, const Atom& b) { return a.t < b.t; });
        double total = 0.0;
        for (std::size_t i = 0; i < atoms_.size(); ++i) {
            const Atom& a = atoms_[i];
            if (!std::isfinite(a.t) || a.t < 0.0)
                throw ValidationError("DiscreteMeasure: atom values must be finite and >= 0");
            if (!std::isfinite(a.w) || a.w <= 0.0)
                throw ValidationError("DiscreteMeasure: atom weights must be positive");
            if (i > 0 && atoms_[i - 1].t == a.t)
                throw ValidationError("DiscreteMeasure: duplicate atom value " + std::to_string(a.t));
            total += a.w;
        }
        if (std::abs(total - 1.0) > kWeightTolerance)
            throw ValidationError("DiscreteMeasure: weights sum to " + std::to_string(total) +
                                  ", expected 1");
    }

    static DiscreteMeasure point_mass(double t) { return DiscreteMeasure({{t, 1.0}}); }

    std::span<const Atom> atoms() const { return atoms_; }
    std::size_t size() const { return atoms_.size(); }
    double min_atom() const { return atoms_.front().t; }
    double max_atom() const { return atoms_.back().t; }

    friend bool operator==(const DiscreteMeasure&, const DiscreteMeasure&) = default;

private:
    std::vector<Atom> atoms_;
};

// gamma_k = sum_i w_i t_i^k
inline double moment(const DiscreteMeasure& h, int k) {
    if (k < 1) throw ValidationError("moment: order must be >= 1");
    double acc = 0.0;
    for (const Atom& a : h.atoms()) acc += a.w * std::pow(a.t, k);
    return acc;
}

inline constexpr double kPoleTolerance = 1e-12;

// sum_i w_i t_i^a / (alpha - t_i)^b.
// Atoms at t = 0 contribute exactly zero when a >= 1 and are never treated as poles.
inline double resolvent_moment(const DiscreteMeasure& h, double alpha, int a, int b) {
    if (a < 0 || b < 0) throw ValidationError("resolvent_moment: exponents must be >= 0");
    double acc = 0.0;
    for (const Atom& atom : h.atoms()) {
        if (a >= 1 && atom.t == 0.0) continue;
        const double gap = alpha - atom.t;
        if (b >= 1 && std::abs(gap) < kPoleTolerance)
            throw PoleAtAtom("alpha = " + std::to_string(alpha) + " coincides with atom " +
                             std::to_string(atom.t));
        acc += atom.w * std::pow(atom.t, a) / std::pow(gap, b);
    }
    return acc;
}

struct PsiValues {
    double psi = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    double d3 = 0.0;
};

// psi(alpha) = alpha + y alpha int t/(alpha - t) dH and its first three derivatives.
inline PsiValues psi_family(const DiscreteMeasure& h, double y, double alpha) {
    double r11 = 0.0, r22 = 0.0, r23 = 0.0, r24 = 0.0;
    for (const Atom& atom : h.atoms()) {
        if (atom.t == 0.0) continue;
        const double gap = alpha - atom.t;
        if (std::abs(gap) < kPoleTolerance)
            throw PoleAtAtom("alpha = " + std::to_string(alpha) + " coincides with atom " +
                             std::to_string(atom.t));
        const double inv = 1.0 / gap;
        const double t2 = atom.t * atom.t;
        r11 += atom.w * atom.t * inv;
        r22 += atom.w * t2 * inv * inv;
        r23 += atom.w * t2 * inv * inv * inv;
        r24 += atom.w * t2 * inv * inv * inv * inv;
    }
    return {alpha + y * alpha * r11, 1.0 - y * r22, 2.0 * y * r23, -6.0 * y * r24};
}

inline bool is_distant_spike(const DiscreteMeasure& h, double y, double alpha) {
    return psi_family(h, y, alpha).d1 > 0.0;
}

struct CompanionDerivatives {
    double s = 0.0;   // underline-s(psi(alpha)) = -1/alpha
    double d1 = 0.0;  // derivatives with respect to z, at z = psi(alpha)
    double d2 = 0.0;
    double d3 = 0.0;
};

// Derivatives of the companion Stieltjes transform at z = psi(alpha), obtained
// by differentiating s(psi(alpha)) = -1/alpha repeatedly in alpha.
inline CompanionDerivatives underline_s_at_spike(const DiscreteMeasure& h, double y, double alpha) {
    const PsiValues f = psi_family(h, y, alpha);
    if (!(f.d1 > 0.0))
        throw NotDistantSpike("alpha = " + std::to_string(alpha) + " has psi'(alpha) = " +
                              std::to_string(f.d1) + " <= 0");
    const double a = alpha;
    const double p1 = f.d1, p2 = f.d2, p3 = f.d3;
    const double a2 = a * a, a3 = a2 * a, a4 = a3 * a;
    const double q2 = p1 * p1, q3 = q2 * p1, q4 = q3 * p1, q5 = q4 * p1;
    CompanionDerivatives out;
    out.s = -1.0 / a;
    out.d1 = 1.0 / (a2 * p1);
    out.d2 = -2.0 / (a3 * q2) - p2 / (a2 * q3);
    out.d3 = 6.0 / (a4 * q3) + 6.0 * p2 / (a3 * q4) - p3 / (a2 * q4) + 3.0 * p2 * p2 / (a2 * q5);
    return out;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

namespace detail {

// Maximal alpha-interval on which psi is strictly increasing, together with
// its image under psi. Infinite ends are represented by +/-infinity.
struct IncreasingBranch {
    double alpha_lo, alpha_hi;
    double z_lo, z_hi;
};

inline constexpr int kSupportGrid = 4096;

inline double psi_d1(const DiscreteMeasure& h, double y, double alpha) {
    return psi_family(h, y, alpha).d1;
}

// Bisection for a sign change of psi' between lo and hi, to full double
// resolution. `lo_positive` states the sign of psi' at the lo end.
inline double bisect_psi_d1(const DiscreteMeasure& h, double y, double lo, double hi,
                            bool lo_positive) {
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if ((psi_d1(h, y, mid) > 0.0) == lo_positive)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

inline std::vector<double> poles(const DiscreteMeasure& h) {
    std::vector<double> out;
    for (const Atom& a : h.atoms())
        if (a.t > 0.0) out.push_back(a.t);
    return out;
}

inline double psi_value(const DiscreteMeasure& h, double y, double alpha) {
    return psi_family(h, y, alpha).psi;
}

inline std::vector<IncreasingBranch> increasing_branches(const DiscreteMeasure& h, double y) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (!(y > 0.0)) throw ValidationError("dimension ratio y must be positive");
    const std::vector<double> pl = poles(h);
    std::vector<IncreasingBranch> out;
    if (pl.empty()) {
        out.push_back({-inf, inf, -inf, inf});
        return out;
    }
    const double pmin = pl.front(), pmax = pl.back();
    const double reach = pmax * std::sqrt(y) + 1.0;

    // Left of every pole psi' decreases from 1 to -infinity.
    {
        const double root = bisect_psi_d1(h, y, pmin - reach, pmin, true);
        out.push_back({-inf, root, -inf, psi_value(h, y, root)});
    }

    for (std::size_t i = 0; i + 1 < pl.size(); ++i) {
        const double a = pl[i], b = pl[i + 1];
        const double step = (b - a) / (kSupportGrid + 1);
        std::vector<double> roots;
        double prev_x = a;
        bool prev_pos = false;  // psi' -> -infinity at every pole
        for (int j = 1; j <= kSupportGrid + 1; ++j) {
            double x;
            bool pos;
            if (j == kSupportGrid + 1) {
                x = b;
                pos = false;
            } else {
                x = a + j * step;
                pos = psi_d1(h, y, x) > 0.0;
            }
            if (pos != prev_pos) roots.push_back(bisect_psi_d1(h, y, prev_x, x, prev_pos));
            prev_x = x;
            prev_pos = pos;
        }
        for (std::size_t r = 0; r + 1 < roots.size(); r += 2)
            out.push_back({roots[r], roots[r + 1], psi_value(h, y, roots[r]),
                           psi_value(h, y, roots[r + 1])});
    }

    // Right of every pole psi' increases from -infinity to 1.
    {
        const double root = bisect_psi_d1(h, y, pmax, pmax + reach, false);
        out.push_back({root, inf, psi_value(h, y, root), inf});
    }
    return out;
}

} // namespace detail

// Closed intervals forming the support of the continuous part of the
// companion limiting spectral distribution, in ascending order. The point
// mass (1 - y) delta_0 carried by the companion law when y < 1 is not listed.
inline std::vector<Interval> support_edges(const DiscreteMeasure& h, double y) {
    auto branches = detail::increasing_branches(h, y);
    std::sort(branches.begin(), branches.end(),
              [](const auto& a, const auto& b) { return a.z_lo < b.z_lo; });
    std::vector<Interval> out;
    double covered = branches.front().z_hi;
    for (std::size_t i = 1; i < branches.size(); ++i) {
        if (branches[i].z_lo > covered) out.push_back({covered, branches[i].z_lo});
        covered = std::max(covered, branches[i].z_hi);
    }
    return out;
}

inline bool outside_support(const DiscreteMeasure& h, double y, double z) {
    for (const Interval& iv : support_edges(h, y))
        if (z >= iv.lo && z <= iv.hi) return false;
    return true;
}

inline constexpr int kSilversteinMaxIter = 200;
inline constexpr double kSilversteinTolerance = 1e-12;

// Real root s of z = -1/s + y int t/(1 + t s) dH on the branch where s' > 0.
// Solved in alpha = -1/s, where the equation reads psi(alpha) = z and psi is
// strictly increasing on the relevant branch.
inline double solve_silverstein(const DiscreteMeasure& h, double y, double z) {
    const auto branches = detail::increasing_branches(h, y);
    const detail::IncreasingBranch* br = nullptr;
    for (const auto& b : branches)
        if (z > b.z_lo && z < b.z_hi) {
            br = &b;
            break;
        }
    if (br == nullptr)
        throw OutsideDomain("z = " + std::to_string(z) +
                            " lies inside the support of the companion spectral law");

    const double tol = kSilversteinTolerance * std::max(1.0, std::abs(z));
    double lo = br->alpha_lo, hi = br->alpha_hi;
    // Replace infinite ends by finite brackets.
    if (std::isinf(hi)) {
        double step = std::max(1.0, std::abs(lo));
        hi = lo + step;
        for (int it = 0; detail::psi_value(h, y, hi) <= z; ++it) {
            if (it > kSilversteinMaxIter) throw NoConvergence("solve_silverstein: no upper bracket");
            lo = hi;
            step *= 2.0;
            hi = lo + step;
        }
    }
    if (std::isinf(lo)) {
        double step = std::max(1.0, std::abs(hi));
        lo = hi - step;
        for (int it = 0; detail::psi_value(h, y, lo) >= z; ++it) {
            if (it > kSilversteinMaxIter) throw NoConvergence("solve_silverstein: no lower bracket");
            hi = lo;
            step *= 2.0;
            lo = hi - step;
        }
    }

    double x = 0.5 * (lo + hi);
    for (int it = 0; it < kSilversteinMaxIter; ++it) {
        const PsiValues f = psi_family(h, y, x);
        const double r = f.psi - z;
        if (std::abs(r) <= tol) {
            if (std::abs(x) < kPoleTolerance)
                throw OutsideDomain("z = 0 is the companion atom at zero");
            return -1.0 / x;
        }
        if (r > 0.0)
            hi = x;
        else
            lo = x;
        double next = (f.d1 > 0.0) ? x - r / f.d1 : lo - 1.0;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == x) break;
        x = next;
    }
    throw NoConvergence("solve_silverstein: no convergence for z = " + std::to_string(z));
}

// Bulk specification: the limiting spectral measure of V plus the limit of
// (1/p') sum_i [V]_ii^2, which enters the trace fluctuation for non-Gaussian
// entries.
struct BulkSpec {
    DiscreteMeasure measure;
    double diag_second_moment;

    // V diagonal with entries drawn from H, so the diagonal second moment is gamma_2.
    static BulkSpec diagonal(DiscreteMeasure h) {
        const double g2 = moment(h, 2);
        return {std::move(h), g2};
    }
};

} // namespace spiketest
