// Seedable random streams with portable sampling transforms.
//
// The engine is std::mt19937_64, whose output sequence is pinned by the
// standard. All distribution transforms are implemented here (uniform via
// 53-bit mantissa, normal via inverse CDF) so that results do not depend on
// the standard library's unspecified distribution algorithms.
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace cfope {

// SplitMix64 step; used to derive decorrelated child seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
    std::uint64_t s = master;
    std::uint64_t x = splitmix64(s);
    s ^= tag_a + 0x9e3779b97f4a7c15ULL;
    x ^= splitmix64(s);
    s ^= tag_b + 0xd1b54a32d192ed03ULL;
    x ^= splitmix64(s);
    return x;
}

// Inverse of the standard normal CDF (Acklam's rational approximation with
// one Halley refinement; absolute error well below 1e-12 in (0,1)).
double normal_quantile(double p);

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng stream(std::uint64_t master, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
        return Rng(derive_seed(master, tag_a, tag_b));
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() { return normal_quantile(nonzero_uniform()); }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Index uniform in [0, n).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Sample an index from a probability vector by inverse CDF.
    std::size_t categorical(std::span<const double> probs) {
        const double u = uniform();
        double cum = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) return i;
        }
        return probs.size() - 1;
    }

    // Partial Fisher-Yates: the first k entries of a random permutation of [0, n).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  private:
    double nonzero_uniform() {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return u;
    }

    std::mt19937_64 engine_;
};

}  // namespace cfope
