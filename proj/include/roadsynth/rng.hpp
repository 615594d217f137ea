#pragma once

#include "roadsynth/geom.hpp"

#include <cstdint>
#include <random>

namespace roadsynth {

/// splitmix64 finalizer; derives independent stream seeds from (seed, stream).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Deterministic generator. Conversions to floating point are done here rather
/// than through <random> distributions so results do not depend on the
/// standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : engine_(mix_seed(seed, stream)) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) {
        const auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }
    Vec3 uniform_in(const Aabb& box) {
        const double x = uniform(box.lo.x(), box.hi.x());
        const double y = uniform(box.lo.y(), box.hi.y());
        const double z = uniform(box.lo.z(), box.hi.z());
        return {x, y, z};
    }

private:
    std::mt19937_64 engine_;
};

} // namespace roadsynth
