#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fedmgp/linalg.hpp"
#include "fedmgp/rng.hpp"

namespace fedmgp {

enum class Modality { text, visual };
enum class PairingMode { set_sum, slotwise };
enum class SelectionPolicy { probabilistic, top_s, random, all };

struct SelectionScores {
    Modality modality = Modality::text;
    std::vector<double> per_group;
    PairingMode pairing_mode = PairingMode::set_sum;
};

struct SelectionOutcome {
    std::vector<double> probs;
    std::vector<double> scores;
    std::vector<std::size_t> selected;  // draw order
    std::vector<std::size_t> ranked;    // order used for ordinal slot correspondence
    SelectionPolicy policy = SelectionPolicy::probabilistic;
};

/// Similarity of each local group against the global slots.
/// set_sum: S_j = sum_i cos(p_j, slot_i) over all global slots.
/// slotwise: S_j = cos(p_j, slot_j), requires one slot per group.
inline SelectionScores group_similarity(const std::vector<Vec>& local,
                                        const std::vector<Vec>& global_slots,
                                        PairingMode pairing_mode,
                                        Modality modality = Modality::text) {
    if (global_slots.empty()) throw std::invalid_argument("group_similarity: no global slots");
    if (pairing_mode == PairingMode::slotwise && global_slots.size() != local.size())
        throw std::invalid_argument("group_similarity: slotwise needs one slot per group");
    SelectionScores scores;
    scores.modality = modality;
    scores.pairing_mode = pairing_mode;
    scores.per_group.reserve(local.size());
    for (std::size_t j = 0; j < local.size(); ++j) {
        double s = 0.0;
        if (pairing_mode == PairingMode::set_sum) {
            for (const auto& slot : global_slots) s += cosine(local[j], slot);
        } else {
            s = cosine(local[j], global_slots[j]);
        }
        scores.per_group.push_back(s);
    }
    return scores;
}

/// Softmax over scores with temperature, max-subtracted.
inline std::vector<double> selection_distribution(const SelectionScores& scores, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("selection_distribution: tau must be positive");
    const auto& s = scores.per_group;
    double mx = *std::max_element(s.begin(), s.end());
    std::vector<double> p(s.size());
    double z = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
        p[j] = std::exp((s[j] - mx) / tau);
        z += p[j];
    }
    for (auto& v : p) v /= z;
    return p;
}

/// Sequential renormalized draws without replacement; returns draw order.
inline std::vector<std::size_t> sample_without_replacement(const std::vector<double>& probs,
                                                           std::size_t s, RngStream& rng) {
    const std::size_t G = probs.size();
    if (s < 1 || s > G) throw std::invalid_argument("sample_without_replacement: s out of range");
    std::vector<std::size_t> remaining(G);
    std::iota(remaining.begin(), remaining.end(), 0);
    std::vector<double> p(probs);
    std::vector<std::size_t> out;
    out.reserve(s);
    for (std::size_t draw = 0; draw < s; ++draw) {
        double total = 0.0;
        for (std::size_t i : remaining) total += p[i];
        double u = rng.uniform() * total;
        std::size_t chosen = remaining.back();
        double acc = 0.0;
        for (std::size_t idx = 0; idx < remaining.size(); ++idx) {
            acc += p[remaining[idx]];
            if (u < acc) {
                chosen = remaining[idx];
                remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(idx));
                break;
            }
            if (idx + 1 == remaining.size()) remaining.pop_back();  // u == total edge
        }
        out.push_back(chosen);
    }
    return out;
}

namespace detail {

/// indices sorted by descending score, ties broken by lower index
inline std::vector<std::size_t> rank_by_score(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace detail

/// One modality's selection. Round 1 (and policy=random) is uniform; policy=all
/// returns every group in index order without touching the RNG, so s = G
/// reduces exactly to FedAvg.
inline SelectionOutcome select_modality(const std::vector<Vec>& local,
                                        const std::vector<Vec>& global_slots,
                                        SelectionPolicy policy, std::size_t s, double tau,
                                        std::size_t round, PairingMode pairing, RngStream& rng,
                                        Modality modality) {
    const std::size_t G = local.size();
    SelectionOutcome out;
    out.policy = policy;
    out.probs.assign(G, 1.0 / static_cast<double>(G));
    out.scores.assign(G, 0.0);

    if (policy == SelectionPolicy::all) {
        out.selected.resize(G);
        std::iota(out.selected.begin(), out.selected.end(), 0);
        out.ranked = out.selected;
        return out;
    }
    if (s < 1 || s > G) throw std::invalid_argument("select_modality: s out of range");
    if (round < 1) throw std::invalid_argument("select_modality: round must be >= 1");

    if (round == 1 || policy == SelectionPolicy::random) {
        out.selected = rng.sample_indices(G, s);
        out.ranked = out.selected;
        return out;
    }

    SelectionScores scores = group_similarity(local, global_slots, pairing, modality);
    out.scores = scores.per_group;
    out.probs = selection_distribution(scores, tau);

    if (policy == SelectionPolicy::top_s) {
        auto order = detail::rank_by_score(out.scores);
        out.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s));
        out.ranked = out.selected;
        return out;
    }

    out.selected = sample_without_replacement(out.probs, s, rng);
    out.ranked = out.selected;
    std::stable_sort(out.ranked.begin(), out.ranked.end(), [&](std::size_t a, std::size_t b) {
        return out.scores[a] > out.scores[b];
    });
    return out;
}

struct ModalitySelection {
    SelectionOutcome text;
    SelectionOutcome visual;
};

/// Text and visual selections; independent by default, or one coupled index
/// set (summed per-modality scores) applied to both.
inline ModalitySelection select_groups(const std::vector<Vec>& local_text,
                                       const std::vector<Vec>& local_visual,
                                       const std::vector<Vec>& global_text_slots,
                                       const std::vector<Vec>& global_visual_slots,
                                       SelectionPolicy policy, std::size_t s, double tau,
                                       std::size_t round, PairingMode pairing, RngStream& rng,
                                       bool coupled = false) {
    ModalitySelection sel;
    if (!coupled) {
        sel.text = select_modality(local_text, global_text_slots, policy, s, tau, round, pairing,
                                   rng, Modality::text);
        sel.visual = select_modality(local_visual, global_visual_slots, policy, s, tau, round,
                                     pairing, rng, Modality::visual);
        return sel;
    }

    if (policy == SelectionPolicy::all || round == 1 || policy == SelectionPolicy::random) {
        sel.text = select_modality(local_text, global_text_slots, policy, s, tau, round, pairing,
                                   rng, Modality::text);
        sel.visual = sel.text;
        sel.visual.policy = policy;
        return sel;
    }

    SelectionScores st = group_similarity(local_text, global_text_slots, pairing, Modality::text);
    SelectionScores sv =
        group_similarity(local_visual, global_visual_slots, pairing, Modality::visual);
    SelectionScores combined;
    combined.pairing_mode = pairing;
    combined.per_group.resize(st.per_group.size());
    for (std::size_t j = 0; j < st.per_group.size(); ++j)
        combined.per_group[j] = st.per_group[j] + sv.per_group[j];

    SelectionOutcome out;
    out.policy = policy;
    out.scores = combined.per_group;
    out.probs = selection_distribution(combined, tau);
    if (policy == SelectionPolicy::top_s) {
        auto order = detail::rank_by_score(out.scores);
        out.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s));
        out.ranked = out.selected;
    } else {
        out.selected = sample_without_replacement(out.probs, s, rng);
        out.ranked = out.selected;
        std::stable_sort(out.ranked.begin(), out.ranked.end(), [&](std::size_t a, std::size_t b) {
            return out.scores[a] > out.scores[b];
        });
    }
    sel.text = out;
    sel.visual = out;
    return sel;
}

}  // namespace fedmgp
