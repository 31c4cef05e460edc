#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace cakit {

// Named deterministic random streams. A stream is keyed by (seed, name):
// the name is hashed with FNV-1a and mixed into the seed, then values are
// drawn from a splitmix64 sequence. Identical (seed, name) pairs produce
// identical sequences on any platform.
inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class RngStream {
public:
    explicit RngStream(uint64_t state) : state_(state) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in (0, 1]; never returns 0 so log() below is safe.
    double uniform() {
        uint64_t bits = next_u64() >> 11;  // 53 bits
        return (static_cast<double>(bits) + 1.0) * 0x1p-53;
    }

    // Standard normal via Box-Muller, one spare cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    uint64_t seed() const { return seed_; }

    RngStream stream(std::string_view name) const {
        uint64_t s = seed_ ^ fnv1a64(name);
        // one scramble round so adjacent seeds do not give adjacent states
        splitmix64(s);
        return RngStream(s);
    }

private:
    uint64_t seed_;
};

}  // namespace cakit
