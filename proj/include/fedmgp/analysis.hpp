#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "fedmgp/config.hpp"
#include "fedmgp/feature_space.hpp"
#include "fedmgp/linalg.hpp"
#include "fedmgp/rng.hpp"
#include "fedmgp/selection.hpp"

namespace fedmgp {

/// Common feature content of a prompt: its coefficient along u_C.
inline double cfc(const Vec& prompt, const FeatureBasis& basis) {
    if (prompt.size() != basis.dim) throw std::invalid_argument("cfc: dimension mismatch");
    return dot(prompt, basis.global_dir);
}

struct ExpectedCfc {
    std::vector<double> scores;  // S_g = c_g / sqrt(c_g^2 + s_g^2)
    std::vector<double> pi;      // softmax(S / tau)
    double e_pi = 0.0;           // sum c_g pi_g
    double e_unif = 0.0;         // mean c_g
    double gap = 0.0;            // e_pi - e_unif, >= 0 by Chebyshev for monotone scores
};

inline ExpectedCfc expected_cfc(const std::vector<double>& c, const std::vector<double>& s,
                                double tau) {
    if (c.empty() || c.size() != s.size()) throw std::invalid_argument("expected_cfc: arity");
    ExpectedCfc out;
    out.scores.resize(c.size());
    for (std::size_t g = 0; g < c.size(); ++g) {
        if (c[g] == 0.0 && s[g] == 0.0)
            throw std::domain_error("expected_cfc: degenerate (0,0) pair");
        out.scores[g] = theory_similarity(c[g], s[g]);
    }
    SelectionScores sc;
    sc.per_group = out.scores;
    out.pi = selection_distribution(sc, tau);
    for (std::size_t g = 0; g < c.size(); ++g) {
        out.e_pi += c[g] * out.pi[g];
        out.e_unif += c[g] / static_cast<double>(c.size());
    }
    out.gap = out.e_pi - out.e_unif;
    return out;
}

namespace detail {

/// Exact recursion over ordered without-replacement sequences: accumulates
/// `visit(sequence_probability, chosen_indices)` for every length-k sequence.
template <typename Visit>
void enumerate_sequences(const std::vector<double>& probs, std::size_t k, Visit&& visit) {
    const std::size_t G = probs.size();
    std::vector<std::size_t> chosen;
    std::vector<bool> used(G, false);
    double total = 0.0;
    for (double p : probs) total += p;

    auto rec = [&](auto&& self, double seq_prob, double remaining_mass) -> void {
        if (chosen.size() == k) {
            visit(seq_prob, chosen);
            return;
        }
        for (std::size_t g = 0; g < G; ++g) {
            if (used[g]) continue;
            used[g] = true;
            chosen.push_back(g);
            self(self, seq_prob * probs[g] / remaining_mass, remaining_mass - probs[g]);
            chosen.pop_back();
            used[g] = false;
        }
    };
    rec(rec, 1.0, total);
}

}  // namespace detail

/// Exact probability of each unordered k-subset under sequential renormalized
/// sampling; the enumeration oracle for sample_without_replacement.
inline std::map<std::vector<std::size_t>, double> subset_probabilities(
    const std::vector<double>& probs, std::size_t k) {
    if (probs.size() > 8) throw std::invalid_argument("subset_probabilities: G > 8, enumeration too large");
    if (k < 1 || k > probs.size()) throw std::invalid_argument("subset_probabilities: k out of range");
    std::map<std::vector<std::size_t>, double> out;
    detail::enumerate_sequences(probs, k, [&](double p, const std::vector<std::size_t>& seq) {
        std::vector<std::size_t> key = seq;
        std::sort(key.begin(), key.end());
        out[key] += p;
    });
    return out;
}

struct SetMeanReport {
    double e_set = 0.0;   // exact E[(1/k) sum_{p in S} c_p]
    double e_pi = 0.0;
    double e_unif = 0.0;
    bool verdict_ge = false;  // paper's claimed direction E_set >= E_pi
};

/// Exact expectation of the mean CFC of the selected set of size k, under
/// sequential renormalized sampling driven by pi = softmax(S/tau). G <= 8;
/// use set_mean_monte_carlo beyond that.
inline SetMeanReport set_mean_expectation(const std::vector<double>& c,
                                          const std::vector<double>& s, double tau,
                                          std::size_t k) {
    if (c.size() > 8)
        throw std::invalid_argument(
            "set_mean_expectation: G > 8 exceeds exact enumeration; use set_mean_monte_carlo");
    if (k < 1 || k > c.size()) throw std::invalid_argument("set_mean_expectation: k out of range");
    ExpectedCfc e = expected_cfc(c, s, tau);
    SetMeanReport rep;
    rep.e_pi = e.e_pi;
    rep.e_unif = e.e_unif;
    detail::enumerate_sequences(e.pi, k, [&](double p, const std::vector<std::size_t>& seq) {
        double mean = 0.0;
        for (std::size_t g : seq) mean += c[g];
        mean /= static_cast<double>(k);
        rep.e_set += p * mean;
    });
    rep.verdict_ge = rep.e_set >= rep.e_pi - 1e-12;
    return rep;
}

struct MonteCarloSetMean {
    double e_set = 0.0;
    double std_error = 0.0;
};

inline MonteCarloSetMean set_mean_monte_carlo(const std::vector<double>& c,
                                              const std::vector<double>& s, double tau,
                                              std::size_t k, std::size_t reps, RngStream& rng) {
    if (reps == 0) throw std::invalid_argument("set_mean_monte_carlo: reps must be >= 1");
    ExpectedCfc e = expected_cfc(c, s, tau);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
        auto sel = sample_without_replacement(e.pi, k, rng);
        double mean = 0.0;
        for (std::size_t g : sel) mean += c[g];
        mean /= static_cast<double>(k);
        sum += mean;
        sumsq += mean * mean;
    }
    MonteCarloSetMean out;
    out.e_set = sum / static_cast<double>(reps);
    double var = sumsq / static_cast<double>(reps) - out.e_set * out.e_set;
    out.std_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(reps));
    return out;
}

struct SlotSnr {
    double beta = 0.0;   // <slot, u_C>
    double phi = 0.0;    // client-subspace + noise + residual energy
    double snr = 0.0;    // beta^2 / phi, +inf sentinel when phi ~ 0
    bool infinite = false;
};

struct SnrReport {
    std::vector<SlotSnr> slots;      // nonzero slots only, in input order
    std::vector<std::size_t> slot_indices;
    double min_snr = 0.0;
    bool any_infinite = false;
};

/// Per-slot SNR = beta^2 / phi with phi the energy outside the global
/// direction: client subspace (via the orthonormal shared+private
/// components), noise directions, and residual. Zero slots are excluded;
/// phi below 1e-15 is flagged as an infinite sentinel, never compared
/// silently.
inline SnrReport snr(const std::vector<Vec>& slots, const FeatureBasis& basis) {
    SnrReport rep;
    double min_finite = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < slots.size(); ++j) {
        const Vec& v = slots[j];
        if (v.size() != basis.dim) throw std::invalid_argument("snr: dimension mismatch");
        if (norm(v) < 1e-15) continue;
        SlotSnr s;
        s.beta = dot(v, basis.global_dir);
        double client_energy = dot(v, basis.shared_dir) * dot(v, basis.shared_dir);
        for (const auto& p : basis.private_dirs) client_energy += dot(v, p) * dot(v, p);
        double noise_energy = 0.0;
        for (const auto& xi : basis.noise_dirs) noise_energy += dot(v, xi) * dot(v, xi);
        double residual = dot(v, v) - s.beta * s.beta - client_energy - noise_energy;
        s.phi = client_energy + noise_energy + std::max(residual, 0.0);
        if (s.phi < 1e-15) {
            s.infinite = true;
            s.snr = std::numeric_limits<double>::infinity();
            rep.any_infinite = true;
        } else {
            s.snr = s.beta * s.beta / s.phi;
            min_finite = std::min(min_finite, s.snr);
        }
        rep.slots.push_back(s);
        rep.slot_indices.push_back(j);
    }
    if (rep.slots.empty()) throw std::invalid_argument("snr: all slots are zero");
    // min over nonzero slots; infinite sentinels do not lower the minimum
    rep.min_snr = std::isfinite(min_finite) ? min_finite
                                            : std::numeric_limits<double>::infinity();
    return rep;
}

struct NoiseScalingFit {
    std::vector<std::size_t> grid;      // aggregate sizes m = n * k
    std::vector<double> mean_power;     // E ||specific component of mean||^2
    double slope = 0.0;                 // least-squares slope of log power vs log m
};

/// Aggregate m prompts c*u_C + s*w_i with i.i.d. random specific directions
/// w_i (unit, orthogonal to u_C), measure the specific energy of the mean,
/// and fit the log-log decay rate. The theory predicts slope -1.
inline NoiseScalingFit noise_scaling_experiment(std::size_t dim,
                                                const std::vector<std::size_t>& grid,
                                                std::size_t reps, double specific_strength,
                                                RngStream& rng) {
    {
        std::vector<std::size_t> distinct = grid;
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        if (distinct.size() < 3)
            throw std::invalid_argument("noise_scaling_experiment: need >= 3 distinct grid sizes");
    }
    if (dim < 3) throw std::invalid_argument("noise_scaling_experiment: dim too small");

    Vec u(dim, 0.0);
    u[0] = 1.0;
    const std::vector<Vec> u_only{u};

    NoiseScalingFit fit;
    fit.grid = grid;
    for (std::size_t m : grid) {
        double power_sum = 0.0;
        for (std::size_t r = 0; r < reps; ++r) {
            Vec agg(dim, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                Vec w = random_unit_orthogonal(dim, u_only, rng);
                axpy(specific_strength / static_cast<double>(m), w, agg);
                agg[0] += 1.0 / static_cast<double>(m);  // common coefficient c = 1
            }
            double beta = agg[0];
            power_sum += dot(agg, agg) - beta * beta;
        }
        fit.mean_power.push_back(power_sum / static_cast<double>(reps));
    }

    // least squares on (log m, log power)
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double x = std::log(static_cast<double>(grid[i]));
        double y = std::log(std::max(fit.mean_power[i], 1e-300));
        sx += x; sy += y; sxx += x * x; sxy += x * y;
    }
    fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return fit;
}

/// Symmetric cosine matrix over a set of vectors (unit diagonal).
inline Mat similarity_matrix(const std::vector<Vec>& items) {
    if (items.size() < 2) throw std::invalid_argument("similarity_matrix: need >= 2 items");
    Mat m(items.size(), items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        m(i, i) = 1.0;
        for (std::size_t j = i + 1; j < items.size(); ++j) {
            double c = cosine(items[i], items[j]);
            m(i, j) = c;
            m(j, i) = c;
        }
    }
    return m;
}

inline double mean_off_diagonal(const Mat& m) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            if (i != j) { s += m(i, j); ++n; }
    return s / static_cast<double>(n);
}

struct CommCost {
    std::size_t uplink_prompt = 0;    // prompt scalars sent to the server
    std::size_t uplink_metadata = 0;  // selected group indices
    std::size_t uplink_total = 0;
    std::size_t downlink = 0;         // global slot scalars received
};

/// Per-client per-round communication in scalars. Dynamic/fixed send s groups
/// per modality; full sends all G. Dynamic additionally sends the selected
/// indices per modality.
inline CommCost comm_cost(const FederationConfig& cfg) {
    CommCost cost;
    const std::size_t per_group = cfg.dim_pt + cfg.dim_pv;
    if (cfg.strategy == AggregationStrategy::full ||
        (cfg.strategy == AggregationStrategy::dynamic && cfg.policy == SelectionPolicy::all)) {
        cost.uplink_prompt = cfg.groups * per_group;
        cost.downlink = cfg.groups * per_group;
    } else {
        cost.uplink_prompt = cfg.select_s * per_group;
        if (cfg.strategy == AggregationStrategy::dynamic) cost.uplink_metadata = 2 * cfg.select_s;
        cost.downlink = (cfg.strategy == AggregationStrategy::dynamic &&
                         cfg.aggregation == DynamicMode::ordinal)
                            ? cfg.select_s * per_group
                            : cfg.groups * per_group;
    }
    cost.uplink_total = cost.uplink_prompt + cost.uplink_metadata;
    return cost;
}

}  // namespace fedmgp
