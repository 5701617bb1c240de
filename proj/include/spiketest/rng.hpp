#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "spiketest/errors.hpp"

namespace spiketest {

using Engine = std::mt19937_64;

// Independent stream for replication `index` of a run seeded with `master`.
// Depends only on the pair, so results do not depend on scheduling.
inline Engine substream(std::uint64_t master, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      0x5eedu};
    return Engine(seq);
}

// 64-bit seed of replication `index`; splitmix64 finalizer over the pair.
inline std::uint64_t replication_seed(std::uint64_t master, std::uint64_t index) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    return mix(mix(master) ^ index);
}

enum class EntryKind { gaussian, rademacher, uniform, two_point };

// Standardized entry law (mean 0, variance 1).
struct EntryDistribution {
    EntryKind kind = EntryKind::gaussian;
    double a = 2.0;  // two_point only: atoms a and -1/a

    static EntryDistribution gaussian() { return {EntryKind::gaussian, 0.0}; }
    static EntryDistribution rademacher() { return {EntryKind::rademacher, 0.0}; }
    static EntryDistribution uniform() { return {EntryKind::uniform, 0.0}; }
    static EntryDistribution two_point(double a) {
        if (!(a > 1.0) || !std::isfinite(a)) throw ValidationError("two_point: a must be > 1");
        return {EntryKind::two_point, a};
    }
    // Two-point law with a prescribed fourth moment; nu4 > 1.
    static EntryDistribution two_point_for_nu4(double nu4) {
        if (!(nu4 > 1.0)) throw ValidationError("two_point: nu4 must be > 1");
        const double s = nu4 + 1.0;
        return two_point(std::sqrt(0.5 * (s + std::sqrt(s * s - 4.0))));
    }

    double nu4() const {
        switch (kind) {
        case EntryKind::gaussian: return 3.0;
        case EntryKind::rademacher: return 1.0;
        case EntryKind::uniform: return 1.8;
        case EntryKind::two_point: return a * a - 1.0 + 1.0 / (a * a);
        }
        return 3.0;
    }

    std::string name() const {
        switch (kind) {
        case EntryKind::gaussian: return "gaussian";
        case EntryKind::rademacher: return "rademacher";
        case EntryKind::uniform: return "uniform";
        case EntryKind::two_point: return "two_point";
        }
        return "gaussian";
    }
};

// Stateful sampler for one stream; holds the distribution objects so the
// Gaussian pair cache is used.
class EntrySampler {
public:
    explicit EntrySampler(EntryDistribution dist)
        : dist_(dist), unit_(0.0, 1.0), normal_(0.0, 1.0),
          p_hi_(dist.kind == EntryKind::two_point ? 1.0 / (1.0 + dist.a * dist.a) : 0.5) {}

    double operator()(Engine& eng) {
        switch (dist_.kind) {
        case EntryKind::gaussian: return normal_(eng);
        case EntryKind::rademacher: return unit_(eng) < 0.5 ? -1.0 : 1.0;
        case EntryKind::uniform: return kSqrt3 * (2.0 * unit_(eng) - 1.0);
        case EntryKind::two_point: return unit_(eng) < p_hi_ ? dist_.a : -1.0 / dist_.a;
        }
        return 0.0;
    }

private:
    static constexpr double kSqrt3 = 1.7320508075688772;
    EntryDistribution dist_;
    std::uniform_real_distribution<double> unit_;
    std::normal_distribution<double> normal_;
    double p_hi_;
};

} // namespace spiketest
