#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace icr {

// ---------------------------------------------------------------------------
// Errors. Every named failure mode in the public API maps to one of these so
// callers can catch by category instead of parsing messages.
// ---------------------------------------------------------------------------

struct IcrError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParticipantMismatch : IcrError { using IcrError::IcrError; };
struct TurnMismatch : IcrError { using IcrError::IcrError; };
struct EpisodeFailure : IcrError {
    EpisodeFailure(int turn, const std::string& what)
        : IcrError("episode failed at turn " + std::to_string(turn) + ": " + what),
          failing_turn(turn) {}
    int failing_turn;
};
struct InvalidFace : IcrError { using IcrError::IcrError; };
struct UnknownCard : IcrError { using IcrError::IcrError; };
struct MalformedBelief : IcrError { using IcrError::IcrError; };
struct UnknownEntity : IcrError { using IcrError::IcrError; };
struct InconsistentBelief : IcrError { using IcrError::IcrError; };
struct FewerThanTwoParticipants : IcrError { using IcrError::IcrError; };
struct OutOfRangeInput : IcrError { using IcrError::IcrError; };
struct NoSuggestionAvailable : IcrError { using IcrError::IcrError; };
struct NonFiniteScore : IcrError { using IcrError::IcrError; };
struct EmptyDataset : IcrError { using IcrError::IcrError; };
struct StaleBatch : IcrError { using IcrError::IcrError; };
struct MissingCounterfactualTwin : IcrError { using IcrError::IcrError; };
struct NoFlippableComponent : IcrError { using IcrError::IcrError; };
struct EmptyPairs : IcrError { using IcrError::IcrError; };
struct NonConvergent : IcrError { using IcrError::IcrError; };
struct SingularSystem : IcrError { using IcrError::IcrError; };
struct ConstructionFailure : IcrError { using IcrError::IcrError; };
struct BoundViolated : IcrError { using IcrError::IcrError; };
struct CheckpointMissing : IcrError { using IcrError::IcrError; };
struct WrongTask : IcrError { using IcrError::IcrError; };
struct NoWork : IcrError { using IcrError::IcrError; };
struct ConfigError : IcrError { using IcrError::IcrError; };

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// All randomness flows from a root seed through named streams so that any
// component (dataset, trainer, episode k, ...) can be re-derived independently
// of evaluation order. Derivation is SplitMix64 over the root mixed with a
// FNV-1a hash of the stream tag and counters.
// ---------------------------------------------------------------------------

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : data) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Derives a child seed from a root seed, a purpose tag and up to two indices.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = fnv1a(purpose);
    h = fnv1a_u64(root, h);
    h = fnv1a_u64(a, h);
    h = fnv1a_u64(b, h);
    std::uint64_t s = h;
    return splitmix64(s);
}

/// Counter-based random stream. Cheap to copy; every copy continues the
/// sequence independently, so clone-per-episode is the intended usage.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed) : state_(seed ^ 0x6a09e667f3bcc909ull) {
        // burn-in decorrelates nearby seeds
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0,1). 53-bit mantissa; identical across platforms.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        // multiply-shift; bias is negligible for desk-scale n
        return static_cast<std::uint64_t>(next_double() * static_cast<double>(n));
    }

    /// Standard normal via Box-Muller.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    /// Samples an index from an unnormalized nonnegative weight vector.
    std::size_t next_categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double r = next_double() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

  private:
    std::uint64_t state_;
};

}  // namespace icr
