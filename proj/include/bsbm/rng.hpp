#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace bsbm {

// Deterministic random stream. All randomness in the library flows from one
// user seed through named sub-streams (e.g. "data", "init", "stage1.batch")
// so any stage can be replayed in isolation. Normals use Box-Muller on raw
// 53-bit uniforms instead of std::normal_distribution, which keeps the draw
// sequence identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(mix(seed)) {}

    Rng(std::uint64_t seed, std::string_view stream)
        : gen_(mix(seed ^ mix(fnv1a(stream)))) {}

    Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index)
        : gen_(mix(seed ^ mix(fnv1a(stream)) ^ mix(index * 0x9e3779b97f4a7c15ULL + 1))) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (one value per pair of uniforms).
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Uniform index in [0, n). Modulo bias is < n / 2^64, irrelevant here.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    static constexpr std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    // splitmix64 finalizer; spreads low-entropy seeds before they hit mt19937_64.
    static constexpr std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
};

}  // namespace bsbm
