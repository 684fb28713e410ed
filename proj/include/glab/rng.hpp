#pragma once

#include <cmath>
#include <cstdint>

namespace glab {

// Counter-based splittable generator. The state is exactly (seed, stream_id,
// counter): the same triple always reproduces the same sequence, and distinct
// stream_ids give statistically independent streams. Each output is a keyed
// double application of the splitmix64 finalizer to the counter, so streams
// can be forked without sharing any mutable state.
struct RngStream {
    std::uint64_t seed    = 0;
    std::uint64_t stream_id = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    RngStream(std::uint64_t seed_, std::uint64_t stream_id_ = 0, std::uint64_t counter_ = 0)
        : seed(seed_), stream_id(stream_id_), counter(counter_) {}

    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t next_u64() {
        const std::uint64_t k1 = mix64(seed ^ 0x9e3779b97f4a7c15ull);
        const std::uint64_t k2 = mix64(stream_id + 0x632be59bd9b4e019ull);
        const std::uint64_t c  = counter++;
        return mix64(mix64(c ^ k1) + k2);
    }

    // Uniform on [0, 1), 53 bits of precision.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform01_open() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Box-Muller, consuming exactly two counter steps per draw.
    double normal() {
        const double u1 = uniform01_open();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    bool bernoulli(double p) { return uniform01() < p; }

    // Fork an independent stream; the child starts at counter 0.
    RngStream derive(std::uint64_t tag) const {
        return RngStream(seed, mix64(stream_id ^ mix64(tag + 0xd1342543de82ef95ull)), 0);
    }
};

}  // namespace glab
