#include "rosdhb/core.hpp"

#include <cmath>

namespace rosdhb {

namespace {

// splitmix64 finalizer; full avalanche, stable across platforms.
std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t hash_label(std::string_view label) {
    // FNV-1a 64-bit.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace

RngStream RngStream::derive(std::string_view label) const {
    std::uint64_t child = mix64(stream_id_ ^ mix64(hash_label(label)));
    return RngStream(seed_, child);
}

std::uint64_t RngStream::next_u64() {
    // Counter mode: output = f(seed, stream_id, counter).
    std::uint64_t key = mix64(seed_) ^ mix64(stream_id_ ^ 0xda3e39cb94b95bdbULL);
    return mix64(key + 0x9e3779b97f4a7c15ULL * (++counter_));
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_int(std::uint64_t bound) {
    if (bound == 0) throw Error("uniform_int: bound must be positive");
    // Rejection sampling to avoid modulo bias.
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

double RngStream::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
}

Vector axpy(double a, const Vector& x, const Vector& y) {
    if (x.size() != y.size())
        throw DimensionError("axpy: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                             std::to_string(y.size()) + ")");
    if (!std::isfinite(a)) throw Error("axpy: scale must be finite");
    return a * x + y;
}

double squared_norm(const Vector& x) { return x.squaredNorm(); }

void check_finite(const Vector& x, std::string_view what) {
    if (!x.allFinite()) throw Error(std::string(what) + ": non-finite entry");
}

} // namespace rosdhb
