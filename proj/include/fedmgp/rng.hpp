#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace fedmgp {

namespace detail {
// splitmix64 finalizer; mixes stream labels into independent seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Deterministic random stream. Substreams are derived by hashing labels into
/// the seed, so per-(round, client, purpose) streams are independent of
/// execution order. Distribution sampling is implemented here rather than via
/// std::*_distribution, whose output is implementation-defined.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(detail::mix64(seed)) {}

    /// Derive an independent substream labelled by up to three indices.
    static RngStream derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                            std::uint64_t c = 0) {
        std::uint64_t s = detail::mix64(seed);
        s = detail::mix64(s ^ (a + 0x100000001ULL));
        s = detail::mix64(s ^ (b + 0x200000002ULL));
        s = detail::mix64(s ^ (c + 0x300000003ULL));
        return RngStream(s);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: empty range");
        // rejection sampling, no modulo bias
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do { x = next_u64(); } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (no cached spare; keeps stream state flat).
    double normal() {
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang, with the alpha < 1 boost.
    double gamma(double shape) {
        if (shape <= 0.0) throw std::invalid_argument("gamma: shape must be positive");
        if (shape < 1.0) {
            double u;
            do { u = uniform(); } while (u <= 0.0);
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// Symmetric Dirichlet(alpha, ..., alpha) over n components.
    std::vector<double> dirichlet(double alpha, std::size_t n) {
        if (n == 0) throw std::invalid_argument("dirichlet: empty");
        std::vector<double> g(n);
        double sum = 0.0;
        for (auto& x : g) {
            x = gamma(alpha);
            sum += x;
        }
        if (sum <= 0.0) {
            // all-zero draw is possible only by underflow at tiny alpha
            std::fill(g.begin(), g.end(), 1.0 / static_cast<double>(n));
            return g;
        }
        for (auto& x : g) x /= sum;
        return g;
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Uniform random k-subset of {0..n-1}, in draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        if (k > n) throw std::invalid_argument("sample_indices: k > n");
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(pool.size()));
            out.push_back(pool[j]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
        }
        return out;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedmgp
