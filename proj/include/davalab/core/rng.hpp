#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace davalab {

// Deterministic random source. All distributions are hand-rolled on top of
// the raw 64-bit stream so that results are reproducible bit-for-bit across
// platforms and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        seed_ = seed;
        // splitmix64 expansion of the seed into the xoshiro-style state of
        // a 64-bit Mersenne twister replacement: we keep mt19937_64's
        // interface out and implement xoshiro256** directly (tiny, fast,
        // trivially serializable).
        std::uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
        has_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t seed() const { return seed_; }

    // Derive an independent child stream. Children with distinct ids are
    // decorrelated from the parent and from each other.
    Rng split(std::uint64_t stream_id) const {
        std::uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL * (stream_id + 1));
        std::uint64_t a = splitmix64(x);
        std::uint64_t b = splitmix64(x);
        return Rng(a ^ (b << 1));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller (pairs cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Full serializable state (for checkpointing mid-stream).
    struct State {
        std::uint64_t seed = 0;
        std::uint64_t words[4] = {};
        bool has_spare = false;
        double spare = 0.0;
    };

    State state() const {
        State st;
        st.seed = seed_;
        for (int i = 0; i < 4; ++i) st.words[i] = state_[i];
        st.has_spare = has_spare_;
        st.spare = spare_;
        return st;
    }

    void restore(const State& st) {
        seed_ = st.seed;
        for (int i = 0; i < 4; ++i) state_[i] = st.words[i];
        has_spare_ = st.has_spare;
        spare_ = st.spare;
    }

    // Uniform Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Uniformly random permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_ = 0;
    std::uint64_t state_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace davalab
