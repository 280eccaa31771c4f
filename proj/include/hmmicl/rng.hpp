#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "hmmicl/errors.hpp"

namespace hmmicl {

// Repo-wide generator contract: splitmix64, seeded explicitly everywhere.
// Every artifact that embeds randomness records {seed, generator_name}.
// Distribution sampling below is implemented in-repo (no std::*_distribution)
// so that a given seed yields the same stream on every standard library.
inline constexpr std::string_view kGeneratorName = "splitmix64";

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Independent substream for trial/cell `index` of a run seeded with `seed`.
    static Rng substream(std::uint64_t seed, std::uint64_t index) {
        Rng mixer(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
        mixer.next_u64();
        return Rng(mixer.next_u64());
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1); rejects exact zero so logs are safe.
    double uniform01_open() {
        double u;
        do { u = uniform01(); } while (u == 0.0);
        return u;
    }

    // Marsaglia polar method.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    // Marsaglia–Tsang; alpha < 1 handled by the boost Gamma(a) = Gamma(a+1) U^{1/a}.
    double gamma(double alpha) {
        if (alpha <= 0.0) throw DimensionError("gamma: alpha must be positive");
        if (alpha < 1.0) {
            const double u = uniform01_open();
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform01_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Symmetric Dirichlet(concentration) over `dim` categories.
    std::vector<double> dirichlet(double concentration, int dim) {
        std::vector<double> g(static_cast<std::size_t>(dim));
        double total = 0.0;
        for (auto& x : g) {
            x = gamma(concentration);
            total += x;
        }
        for (auto& x : g) x /= total;
        return g;
    }

    // Index draw from an (unnormalized is fine) nonnegative weight vector.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        const double u = uniform01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace hmmicl
