#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace pfadseg {

/// Seeded generator with platform-independent draws. The standard
/// distributions are implementation-defined, so uniform/normal/index are
/// derived directly from mt19937_64 bits to keep seeds reproducible across
/// toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n);
    double normal();
    /// Independent child stream; the parent advances by one draw.
    Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
};

}  // namespace pfadseg
