#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace mvil {

/// Seeded random source with platform-independent transforms.
///
/// The std:: distributions are implementation-defined, so uniform/normal/below are
/// computed here directly from the 64-bit engine output. Same seed gives the same
/// stream on every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Independent stream for (seed, stream) pairs, e.g. per-cell or per-batch seeds.
    static Rng derive(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (consumes two uniforms per call).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);

    bool bernoulli(double p) { return uniform() < p; }

    std::string state() const;
    void set_state(const std::string& state);

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mvil
