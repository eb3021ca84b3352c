#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Debug-mode invariant checks (finite outputs, simplex/gating ranges).
// Enabled by default in non-NDEBUG builds; can be forced with -DHVAT_DEBUG_CHECKS=1.
#ifndef HVAT_DEBUG_CHECKS
#ifdef NDEBUG
#define HVAT_DEBUG_CHECKS 0
#else
#define HVAT_DEBUG_CHECKS 1
#endif
#endif

namespace hvat {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor dimension disagreement; message names both shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// Invalid configuration value or variant/parameter mismatch.
struct ConfigError : Error {
    using Error::Error;
};

/// Out-of-range token ids, overlong sequences and similar caller mistakes.
struct InputError : Error {
    using Error::Error;
};

/// Violated internal contract (non-scalar loss, non-finite op output, ...).
struct ContractError : Error {
    using Error::Error;
};

/// Training loss became NaN/Inf.
struct DivergenceError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    enum class Kind {
        io,
        bad_magic,
        bad_version,
        truncated,
        bad_config,
        shape_mismatch,
        missing_parameter,
        unexpected_parameter,
    };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

inline std::string format_shape(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions below are hand-rolled because std::uniform_*_distribution is
// implementation-defined and would break cross-platform reproducibility.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<unsigned __int128>(engine_()) * n) >> 64);
    }

    uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// Distance in representable values between two floats of the same type.
/// Returns a huge value for NaN or differing signs around non-zero values.
template <typename S>
int64_t ulp_distance(S a, S b) {
    static_assert(std::is_floating_point_v<S>);
    if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<int64_t>::max();
    if (a == b) return 0;
    using Bits = std::conditional_t<sizeof(S) == 4, int32_t, int64_t>;
    Bits ia, ib;
    std::memcpy(&ia, &a, sizeof(S));
    std::memcpy(&ib, &b, sizeof(S));
    // Map the sign-magnitude representation onto a monotone integer line.
    if (ia < 0) ia = std::numeric_limits<Bits>::min() - ia;
    if (ib < 0) ib = std::numeric_limits<Bits>::min() - ib;
    int64_t d = static_cast<int64_t>(ia) - static_cast<int64_t>(ib);
    return d < 0 ? -d : d;
}

}  // namespace hvat
