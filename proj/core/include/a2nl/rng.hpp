#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include <Eigen/Dense>

namespace a2nl {

// Deterministic xoshiro256++ stream seeded through splitmix64. All randomness
// in the project flows from one root seed; substreams are derived by hashing
// (seed, label) so every subsystem replays independently of the others.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : seed_(seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) {
            word = splitmix64(x);
        }
        has_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Integer in [0, n), n >= 1.
    std::uint64_t uniform_int(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = 1.0 - uniform();  // (0, 1]
        const double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * M_PI * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    Eigen::MatrixXd randn(Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd out(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                out(i, j) = normal();
            }
        }
        return out;
    }

    Eigen::VectorXd randn_vec(Eigen::Index n) {
        Eigen::VectorXd out(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            out(i) = normal();
        }
        return out;
    }

    // Derived stream. Splits depend only on the constructing seed and the key,
    // never on how many draws the parent has made.
    Rng split(std::uint64_t key) const noexcept {
        std::uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ull + key);
        x = splitmix64(x);
        std::uint64_t y = x + key;
        x ^= splitmix64(y);
        return Rng(x);
    }

    Rng split(std::string_view label) const noexcept {
        return split(fnv1a64(label));
    }

    Rng split(std::string_view label, std::uint64_t index) const noexcept {
        return split(fnv1a64(label) ^ (index * 0xff51afd7ed558ccdull + 1));
    }

    std::uint64_t seed() const noexcept { return seed_; }

    static std::uint64_t fnv1a64(std::string_view s) noexcept {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const char c : s) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static std::uint64_t splitmix64(std::uint64_t& x) noexcept {
        x += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) noexcept {
        return (v << k) | (v >> (64 - k));
    }

    std::uint64_t seed_;
    std::uint64_t state_[4];
    bool has_spare_;
    double spare_;
};

}  // namespace a2nl
