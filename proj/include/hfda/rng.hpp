#pragma once

// Counter-based SplitMix64 generator.
//
// Output i of stream (seed, stream) is mix64(key + (i + 1) * kGamma) with
// key = mix64(seed ^ mix64(stream + kGamma)). Everything is integer
// arithmetic on uint64_t, and the floating-point transforms below are
// written out explicitly instead of going through <random> distributions,
// whose algorithms differ between standard library implementations.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace hfda {

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Named sub-streams. A command's single --seed fans out through these.
enum class Stream : std::uint64_t {
    Init = 1,
    SourceBatches = 2,
    TargetBatches = 3,
    Dropout = 4,
    ValidationSplit = 5,
    HalfSplit = 6,
    Synth = 7,
    SynthOutcome = 8,
    Subsample = 9,
};

// Derive a child seed; used for per-run seeds inside multi-run commands.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return mix64(seed ^ mix64(tag + 0x632BE59BD9B4E019ULL));
}

class SeededRng {
public:
    static constexpr const char* kAlgorithm = "splitmix64-counter";
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(mix64(seed ^ mix64(stream + kGamma))) {}

    SeededRng(std::uint64_t seed, Stream stream) noexcept
        : SeededRng(seed, static_cast<std::uint64_t>(stream)) {}

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return mix64(key_ + counter_ * kGamma);
    }

    std::uint64_t counter() const noexcept { return counter_; }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Lemire's multiply-shift with rejection.
    std::uint64_t uniform_index(std::uint64_t n) noexcept {
        if (n <= 1) {
            return 0;
        }
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const unsigned __int128 m =
                static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
            if (static_cast<std::uint64_t>(m) >= threshold) {
                return static_cast<std::uint64_t>(m >> 64);
            }
        }
    }

    // Box-Muller, one variate per call.
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace hfda
