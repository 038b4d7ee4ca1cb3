#include "textmirror/seed.hpp"

#include <stdexcept>

namespace textmirror {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

std::uint64_t mix(std::uint64_t x) {
    // SplitMix64 output function, one application.
    std::uint64_t z = x + 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_child_seed(std::uint64_t parent, std::string_view label,
                                std::uint64_t index) {
    if (label.empty()) {
        throw std::invalid_argument("seed derivation label must be non-empty");
    }
    return mix(mix(parent ^ fnv1a64(label)) ^ index);
}

std::uint64_t SeedTree::derive(std::string_view label,
                               std::uint64_t index) const {
    return derive_child_seed(seed_, label, index);
}

SeedTree SeedTree::child(std::string_view label, std::uint64_t index) const {
    SeedTree c(master_);
    c.path_ = path_;
    c.path_.emplace_back(std::string(label), index);
    c.seed_ = derive(label, index);
    return c;
}

}  // namespace textmirror
