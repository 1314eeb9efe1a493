#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace mass {

/// Mixes a root seed, a stream name and integer coordinates into a new seed.
/// Every random draw in the project flows through a named substream of the
/// single user-facing seed.
uint64_t derive_seed(uint64_t seed, std::string_view stream, std::initializer_list<uint64_t> coords = {});

/// xoshiro256** with hand-written distributions, so draws are identical
/// across standard libraries and platforms.
class Rng {
  public:
    using State = std::array<uint64_t, 4>;

    explicit Rng(uint64_t seed = 0);
    Rng(uint64_t seed, std::string_view stream, std::initializer_list<uint64_t> coords = {})
        : Rng(derive_seed(seed, stream, coords)) {}

    uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n);
    /// Standard normal via Box-Muller (no cached spare, state stays 4 words).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    bool bernoulli(double p) { return uniform() < p; }

    State const& state() const { return s_; }
    void set_state(State const& s) { s_ = s; }

  private:
    State s_{};
};

} // namespace mass
