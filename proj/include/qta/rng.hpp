#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "tensor.hpp"

namespace qta {

/// Counter-based deterministic generator. A draw is a pure function of
/// (seed, stream, counter), so split streams can be handed to parallel
/// workers and still reproduce the serial order bit-for-bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    /// Child generator keyed by (this stream, index).
    Rng split(std::uint64_t index) const { return Rng(seed_, mix(stream_ ^ mix(index + 0x9e3779b97f4a7c15ull))); }

    std::uint64_t next_u64() { return mix(seed_ ^ mix(stream_ ^ mix(counter_++))); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        // Rejection-free modulo is fine here: n is tiny relative to 2^64.
        return next_u64() % n;
    }

    /// Box-Muller, one value per pair of uniforms (no cached spare, so the
    /// counter advances identically regardless of call pattern).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    Tensor uniform_tensor(Shape shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

    Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = mean + stddev * normal();
        return t;
    }

    /// Fisher-Yates over an index vector.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    static std::uint64_t mix(std::uint64_t x) {
        // splitmix64 finalizer
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    /// Stable 64-bit stream id from a label.
    static std::uint64_t stream_id(const char* label) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const char* p = label; *p; ++p) h = (h ^ static_cast<std::uint64_t>(*p)) * 0x100000001b3ull;
        return h;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

}  // namespace qta
