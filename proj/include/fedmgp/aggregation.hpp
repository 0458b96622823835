#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmgp/linalg.hpp"
#include "fedmgp/prompt_model.hpp"
#include "fedmgp/selection.hpp"

namespace fedmgp {

enum class AggregationStrategy { full, fixed, dynamic };
enum class DynamicMode { ordinal, slotwise_literal, slotwise_renormalized };

struct GlobalPromptState {
    std::size_t round = 0;
    std::vector<Vec> text_slots;
    std::vector<Vec> visual_slots;
    AggregationStrategy strategy = AggregationStrategy::full;
    std::vector<double> slot_weights;  // aggregate weight mass per slot (text/visual symmetric)
};

namespace detail {

inline std::vector<double> normalized_weights(const std::vector<double>& sample_counts) {
    if (sample_counts.empty()) throw std::invalid_argument("aggregate: empty client set");
    double total = 0.0;
    for (double n : sample_counts) {
        if (n < 0.0) throw std::invalid_argument("aggregate: negative weight");
        total += n;
    }
    if (total <= 0.0) throw std::invalid_argument("aggregate: zero total weight");
    std::vector<double> w(sample_counts.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = sample_counts[i] / total;
    return w;
}

inline void check_shapes(const std::vector<PromptGroupSet>& clients) {
    const std::size_t G = clients.front().n_groups();
    for (const auto& c : clients) {
        if (c.n_groups() != G || c.visual_prompts.size() != G)
            throw std::invalid_argument("aggregate: group count mismatch across clients");
    }
}

}  // namespace detail

/// slot j = sum_c w_c * P_{j,c}, w_c = n_c / sum n.
inline GlobalPromptState aggregate_full(const std::vector<PromptGroupSet>& clients,
                                        const std::vector<double>& sample_counts,
                                        std::size_t round) {
    if (clients.empty()) throw std::invalid_argument("aggregate_full: empty client set");
    if (clients.size() != sample_counts.size())
        throw std::invalid_argument("aggregate_full: weight arity");
    detail::check_shapes(clients);
    auto w = detail::normalized_weights(sample_counts);
    const std::size_t G = clients.front().n_groups();

    GlobalPromptState state;
    state.round = round;
    state.strategy = AggregationStrategy::full;
    state.text_slots.assign(G, Vec(clients.front().text_prompts[0].size(), 0.0));
    state.visual_slots.assign(G, Vec(clients.front().visual_prompts[0].size(), 0.0));
    state.slot_weights.assign(G, 1.0);
    for (std::size_t c = 0; c < clients.size(); ++c) {
        for (std::size_t j = 0; j < G; ++j) {
            axpy(w[c], clients[c].text_prompts[j], state.text_slots[j]);
            axpy(w[c], clients[c].visual_prompts[j], state.visual_slots[j]);
        }
    }
    return state;
}

/// First s slots as in full aggregation, remaining slots zeroed.
inline GlobalPromptState aggregate_fixed(const std::vector<PromptGroupSet>& clients,
                                         const std::vector<double>& sample_counts, std::size_t s,
                                         std::size_t round) {
    GlobalPromptState state = aggregate_full(clients, sample_counts, round);
    const std::size_t G = state.text_slots.size();
    if (s < 1 || s > G) throw std::invalid_argument("aggregate_fixed: s out of range");
    state.strategy = AggregationStrategy::fixed;
    for (std::size_t j = s; j < G; ++j) {
        std::fill(state.text_slots[j].begin(), state.text_slots[j].end(), 0.0);
        std::fill(state.visual_slots[j].begin(), state.visual_slots[j].end(), 0.0);
        state.slot_weights[j] = 0.0;
    }
    return state;
}

struct ClientContribution {
    PromptGroupSet prompts;
    ModalitySelection selection;
};

/// Dynamic aggregation of the selected groups.
///   ordinal: global slot i collects each client's i-th ranked selection (s slots).
///   slotwise_literal: slot j = sum_c w_c * I(j in S_c) * P_{j,c} (G slots).
///   slotwise_renormalized: as literal but divided by the selecting weight
///   mass; slots nobody selected carry forward from prev.
inline GlobalPromptState aggregate_dynamic(const std::vector<ClientContribution>& clients,
                                           const std::vector<double>& sample_counts,
                                           DynamicMode mode, std::size_t s, std::size_t round,
                                           const GlobalPromptState* prev = nullptr) {
    if (clients.empty()) throw std::invalid_argument("aggregate_dynamic: empty client set");
    if (clients.size() != sample_counts.size())
        throw std::invalid_argument("aggregate_dynamic: weight arity");
    auto w = detail::normalized_weights(sample_counts);
    const std::size_t G = clients.front().prompts.n_groups();
    const std::size_t d_pt = clients.front().prompts.text_prompts[0].size();
    const std::size_t d_pv = clients.front().prompts.visual_prompts[0].size();

    for (const auto& c : clients) {
        if (c.prompts.n_groups() != G)
            throw std::invalid_argument("aggregate_dynamic: group count mismatch");
        if (c.selection.text.selected.size() != s || c.selection.visual.selected.size() != s)
            throw std::invalid_argument("aggregate_dynamic: inconsistent selection sizes");
    }

    GlobalPromptState state;
    state.round = round;
    state.strategy = AggregationStrategy::dynamic;

    if (mode == DynamicMode::ordinal) {
        state.text_slots.assign(s, Vec(d_pt, 0.0));
        state.visual_slots.assign(s, Vec(d_pv, 0.0));
        state.slot_weights.assign(s, 1.0);
        for (std::size_t c = 0; c < clients.size(); ++c) {
            for (std::size_t i = 0; i < s; ++i) {
                axpy(w[c], clients[c].prompts.text_prompts[clients[c].selection.text.ranked[i]],
                     state.text_slots[i]);
                axpy(w[c], clients[c].prompts.visual_prompts[clients[c].selection.visual.ranked[i]],
                     state.visual_slots[i]);
            }
        }
        return state;
    }

    state.text_slots.assign(G, Vec(d_pt, 0.0));
    state.visual_slots.assign(G, Vec(d_pv, 0.0));
    state.slot_weights.assign(G, 0.0);
    std::vector<double> text_mass(G, 0.0), visual_mass(G, 0.0);
    for (std::size_t c = 0; c < clients.size(); ++c) {
        for (std::size_t j : clients[c].selection.text.selected) {
            axpy(w[c], clients[c].prompts.text_prompts[j], state.text_slots[j]);
            text_mass[j] += w[c];
        }
        for (std::size_t j : clients[c].selection.visual.selected) {
            axpy(w[c], clients[c].prompts.visual_prompts[j], state.visual_slots[j]);
            visual_mass[j] += w[c];
        }
    }
    state.slot_weights = text_mass;

    if (mode == DynamicMode::slotwise_renormalized) {
        for (std::size_t j = 0; j < G; ++j) {
            if (text_mass[j] > 0.0) {
                for (auto& v : state.text_slots[j]) v /= text_mass[j];
            } else if (prev != nullptr && j < prev->text_slots.size()) {
                state.text_slots[j] = prev->text_slots[j];
            }
            if (visual_mass[j] > 0.0) {
                for (auto& v : state.visual_slots[j]) v /= visual_mass[j];
            } else if (prev != nullptr && j < prev->visual_slots.size()) {
                state.visual_slots[j] = prev->visual_slots[j];
            }
        }
    }
    return state;
}

/// Overwrite a client's selected groups with the corresponding global slots;
/// unselected groups are untouched.
inline PromptGroupSet writeback(PromptGroupSet prompts, const GlobalPromptState& global,
                                const ModalitySelection& selection, DynamicMode mode) {
    const std::size_t s_t = selection.text.selected.size();
    const std::size_t s_v = selection.visual.selected.size();
    if (s_t == 0 || s_v == 0) throw std::invalid_argument("writeback: empty selection");

    if (global.strategy == AggregationStrategy::dynamic && mode == DynamicMode::ordinal) {
        if (global.text_slots.size() != s_t || global.visual_slots.size() != s_v)
            throw std::invalid_argument("writeback: ordinal slot arity mismatch");
        for (std::size_t i = 0; i < s_t; ++i)
            prompts.text_prompts[selection.text.ranked[i]] = global.text_slots[i];
        for (std::size_t i = 0; i < s_v; ++i)
            prompts.visual_prompts[selection.visual.ranked[i]] = global.visual_slots[i];
        return prompts;
    }

    // slotwise modes and full/fixed: selected group j takes global slot j
    for (std::size_t j : selection.text.selected) {
        if (j >= global.text_slots.size())
            throw std::invalid_argument("writeback: slot index out of range");
        prompts.text_prompts[j] = global.text_slots[j];
    }
    for (std::size_t j : selection.visual.selected) {
        if (j >= global.visual_slots.size())
            throw std::invalid_argument("writeback: slot index out of range");
        prompts.visual_prompts[j] = global.visual_slots[j];
    }
    return prompts;
}

inline std::string to_string(AggregationStrategy s) {
    switch (s) {
        case AggregationStrategy::full: return "full";
        case AggregationStrategy::fixed: return "fixed";
        case AggregationStrategy::dynamic: return "dynamic";
    }
    return "?";
}

}  // namespace fedmgp
