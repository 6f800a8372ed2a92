#pragma once

// Seeded random streams. All randomness in the library flows through Rng so
// that a (master seed, stream, index) triple fully determines every draw.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace sdeattn {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Named sub-streams of a master seed. Adding streams never perturbs existing
// ones because each is derived independently of the others.
enum class SeedStream : std::uint64_t {
    init = 1,
    shuffle = 2,
    brownian = 3,
    mcar = 4,
    holdout = 5,
    datagen = 6,
    ou = 7,
    split = 8,
    grid = 9,
    labels = 10,
};

// Counter-based derivation: mixes (master, stream, index) with two rounds of
// splitmix64 so nearby indices give unrelated seeds.
inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index = 0) {
    std::uint64_t h = splitmix64(master ^ (0xA24BAED4963EE407ULL * (static_cast<std::uint64_t>(stream) + 1)));
    return splitmix64(h ^ (0x9FB21C651E98DF25ULL * (index + 1)));
}

// mt19937_64 wrapped with hand-rolled uniform/normal conversions; the
// standard distributions are not bit-stable across library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller, second value cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // unbiased integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t x = next_u64();
            if (x >= threshold) return x % n;
        }
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sdeattn
