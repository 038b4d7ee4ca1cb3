#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace textmirror {

/// SplitMix64 (Steele, Lea, Flood 2014). Used everywhere randomness is
/// needed: the generator is fully specified by these two functions, so any
/// implementation can reproduce a run bit-exactly from the seeds alone.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53 bits of precision.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [0,n). Multiply-shift bound; n must be > 0.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<__uint128_t>(next()) * n) >> 64);
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

/// FNV-1a over the bytes of a string. Fixed here (rather than std::hash)
/// because derived seeds are part of the reproducibility contract.
std::uint64_t fnv1a64(std::string_view s);

/// One step of the seed derivation: child = mix(mix(parent ^ fnv1a(label)) ^ index)
/// where mix is the SplitMix64 output function applied once.
std::uint64_t derive_child_seed(std::uint64_t parent, std::string_view label,
                                std::uint64_t index);

/// A master seed plus a derivation path. Children are derived by a
/// counter-mode hash, so (master, path) -> seed is a pure function and
/// distinct paths give independent streams.
class SeedTree {
public:
    using PathEntry = std::pair<std::string, std::uint64_t>;

    explicit SeedTree(std::uint64_t master_seed)
        : master_(master_seed), seed_(master_seed) {}

    /// Seed for (label, index) under this node. Throws std::invalid_argument
    /// on an empty label.
    std::uint64_t derive(std::string_view label, std::uint64_t index) const;

    /// Child node whose further derivations extend the path.
    SeedTree child(std::string_view label, std::uint64_t index) const;

    std::uint64_t master_seed() const { return master_; }
    std::uint64_t seed() const { return seed_; }
    const std::vector<PathEntry>& path() const { return path_; }

private:
    std::uint64_t master_;
    std::uint64_t seed_;  // seed at this node = master folded over path
    std::vector<PathEntry> path_;
};

}  // namespace textmirror
