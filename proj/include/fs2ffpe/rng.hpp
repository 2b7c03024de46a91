#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace fs2ffpe {

// Counter-style PRNG (splitmix64 core). Chosen over <random> engines because the
// whole state is one u64 (trivial to checkpoint) and the output sequence does not
// depend on the standard library implementation.
class RngStream {
  public:
    RngStream() : state_(0x9e3779b97f4a7c15ull) {}
    explicit RngStream(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

    // Independent stream keyed by (seed, component name).
    static RngStream derive(std::uint64_t seed, std::string_view name) {
        std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        RngStream s;
        s.state_ = mix(seed + 0x632be59bd9b4e019ull) ^ mix(h);
        return s;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller; the spare value is discarded so the state stays a plain counter.
    double normal() {
        double u1 = uniform01(), u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Uniform in [0, n). Modulo bias is < 2^-52 for any realistic n.
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    template <typename Vec>
    void shuffle(Vec& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = next_u64() % i;
            std::swap(items[i - 1], items[j]);
        }
    }

    // Sample k distinct indices from [0, n) (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + uniform_int(n - i);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        idx.resize(static_cast<std::size_t>(k));
        return idx;
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

}  // namespace fs2ffpe
