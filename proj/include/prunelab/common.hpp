#pragma once

// Shared plumbing: stable hashing, per-purpose random streams, number
// formatting that round-trips through text.

#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <string_view>

namespace prunelab {

// 64-bit FNV-1a over raw bytes. Stable across platforms.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Every random stream in the project is keyed by (master seed, purpose
// string). Consumers never share a stream, so adding or removing one draw
// site cannot shift the values seen by another.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose) {
    return splitmix64(master ^ fnv1a64(purpose));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view purpose) {
    return std::mt19937_64(derive_seed(master, purpose));
}

// Shortest text form that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string to_hex16(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace prunelab
