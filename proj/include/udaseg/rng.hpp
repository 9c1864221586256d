#pragma once

// Deterministic random numbers. std::mt19937_64 has a standard-mandated
// sequence, but the std distributions do not, so uniform/normal extraction
// is done by hand here. Same seed -> same stream on every platform.

#include <cstdint>
#include <cmath>
#include <random>

namespace udaseg {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Child stream for (master seed, tag) pairs, e.g. per-sample seeds.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
    return splitmix64(splitmix64(master ^ (tag_a * 0xd1342543de82ef95ULL)) ^ tag_b);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        // modulo bias is negligible for the small n used here
        return eng_() % n;
    }

    // standard normal via Box-Muller, one cached value
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace udaseg
