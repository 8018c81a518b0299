#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "resvit/tensor.hpp"

namespace resvit {

// Deterministic RNG. All distributions are hand-rolled on top of mt19937_64 so
// streams are bit-stable across standard libraries; std::*_distribution is
// implementation-defined and would break the fixed-seed replay contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Marsaglia polar method; caches the second variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, w, s;
        do {
            u = 2.0 * uniform() - 1.0;
            w = 2.0 * uniform() - 1.0;
            s = u * u + w * w;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = w * m;
        has_spare_ = true;
        return u * m;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n).
    i64 below(i64 n) {
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return static_cast<i64>(x % un);
    }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (i64 i = static_cast<i64>(xs.size()) - 1; i > 0; --i)
            std::swap(xs[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(below(i + 1))]);
    }

    Tensor normal_tensor(std::vector<i64> shape, double mean, double stddev) {
        Tensor t(std::move(shape));
        for (double& x : t.v) x = normal(mean, stddev);
        return t;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64-style combiner for deriving substream seeds from (seed, salt...).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL + (b << 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a over bytes; used for config digests and loss-history digests.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t x);

}  // namespace resvit
