#pragma once

#include <cstdint>
#include <cmath>
#include <random>

#include <Eigen/Core>

namespace gfu {

// All randomness in this project flows through this class: std::mt19937_64
// (whose output sequence is fixed by the C++ standard) plus the explicit
// mappings below. std::uniform_real_distribution / std::normal_distribution
// are implementation-defined and must not be used anywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // Uniform on [0, 1): top 53 bits of the generator word.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]: never zero, safe under log().
    double uniform_pos() { return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53; }

    // Standard normal via Box-Muller; one transform yields a cached pair.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd z(n);
        for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
        return z;
    }

    // Index into an explicit discrete distribution (probabilities sum to ~1);
    // walks the CDF so the draw is reproducible for a given seed.
    Eigen::Index categorical(const Eigen::VectorXd& probs) {
        const double u = uniform();
        double acc = 0.0;
        for (Eigen::Index i = 0; i + 1 < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        return probs.size() - 1;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// SplitMix64 finalizer, used to derive independent substreams from
// (seed, stream index) pairs, e.g. one stream per simulated path.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(seed ^ mix64(stream + 1));
}

}  // namespace gfu
