#pragma once

#include <cstdint>
#include <limits>

namespace meshreg {

/// Seed for every randomized operation. Equal seeds give bit-identical output.
struct Seed {
    std::uint64_t value = 0;

    friend bool operator==(const Seed&, const Seed&) = default;
};

std::uint64_t mix64(std::uint64_t z) noexcept;

/// Child seed for a (stream, index) pair. Used to give each trial, image or
/// mesh its own independent generator without sharing state.
Seed derive_seed(Seed parent, std::uint64_t stream, std::uint64_t index = 0) noexcept;

/// Counter-based generator: output k is a bijective mix of (key, k).
/// Satisfies UniformRandomBitGenerator so it plugs into <random> distributions.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(Seed seed) noexcept : key_(mix64(seed.value ^ 0x6a09e667f3bcc909ULL)) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return double((*this)() >> 11) * 0x1.0p-53; }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace meshreg
