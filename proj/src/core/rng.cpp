#include "mass/core/rng.hpp"

#include <cmath>
#include <numbers>

namespace mass {

namespace {

uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

} // namespace

uint64_t derive_seed(uint64_t seed, std::string_view stream, std::initializer_list<uint64_t> coords) {
    uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a over the stream name
    for (char const c : stream) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    uint64_t x = seed ^ h;
    uint64_t out = splitmix64(x);
    for (uint64_t const c : coords) {
        x ^= c + 0x632be59bd9b4e019ULL + (out << 6) + (out >> 2);
        out = splitmix64(x);
    }
    return out;
}

Rng::Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
}

uint64_t Rng::next_u64() {
    uint64_t const result = rotl(s_[1] * 5, 7) * 9;
    uint64_t const t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

uint64_t Rng::uniform_int(uint64_t n) {
    // Lemire's multiply-shift with rejection.
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto lo = static_cast<uint64_t>(m);
    if (lo < n) {
        uint64_t const threshold = (0 - n) % n;
        while (lo < threshold) {
            m = static_cast<unsigned __int128>(next_u64()) * n;
            lo = static_cast<uint64_t>(m);
        }
    }
    return static_cast<uint64_t>(m >> 64);
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double const u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace mass
