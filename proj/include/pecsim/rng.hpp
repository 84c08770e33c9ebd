#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace pecsim {

// Deterministic RNG wrapper. All distribution draws are implemented on top of
// raw mt19937_64 output so that streams are bit-identical across platforms
// and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of randomness.
    double next_unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        const auto scaled = static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(eng_()) * span) >> 64);
        return lo + static_cast<std::int64_t>(scaled);
    }

    double uniform_real(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    double exponential(double rate) { return -std::log1p(-next_unit()) / rate; }

private:
    std::mt19937_64 eng_;
};

// Named sub-stream seed derivation (FNV-1a over the name, mixed with the top
// seed) so that adding consumers never perturbs existing streams.
inline std::uint64_t substream_seed(std::uint64_t top_seed, std::string_view name) {
    std::uint64_t h = 14695981039346656037ull;
    for (const char c : name) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    h ^= top_seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    // splitmix64 finalizer
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 31;
    return h;
}

}  // namespace pecsim
