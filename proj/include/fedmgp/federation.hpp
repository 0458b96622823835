#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <vector>

#include "fedmgp/aggregation.hpp"
#include "fedmgp/analysis.hpp"
#include "fedmgp/config.hpp"
#include "fedmgp/feature_space.hpp"
#include "fedmgp/prompt_model.hpp"
#include "fedmgp/selection.hpp"
#include "fedmgp/synth_data.hpp"

namespace fedmgp {

struct EvalSets {
    Batch local;
    Batch base_other;
    Batch novel;
};

struct ClientState {
    ClientDataset data;
    EvalSets eval;
    std::vector<std::size_t> local_classes;
};

struct FederationState {
    FederationConfig cfg;
    FeatureBasis basis;
    SyntheticTask task;
    FrozenEncoders enc;
    std::vector<ClientState> clients;
    std::vector<PromptGroupSet> prompts;   // current per-client prompt sets
    GlobalPromptState global;              // latest aggregated global slots
    std::size_t rounds_done = 0;
};

struct EvalMetrics {
    double local = 0.0;
    double base = 0.0;
    double novel = 0.0;
    double hm = 0.0;
    double cm = 0.0;
};

struct ClientRoundMetrics {
    std::size_t client = 0;
    LossBreakdown loss;
    EvalMetrics eval;
};

struct SelectionTraceEntry {
    std::size_t round = 0;
    std::size_t client = 0;
    Modality modality = Modality::text;
    std::size_t group = 0;
    double score = 0.0;
    double prob = 0.0;
    bool selected = false;
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> participants;
    std::vector<ClientRoundMetrics> client_metrics;
    std::vector<SelectionTraceEntry> trace;
    double mean_ce = 0.0, mean_div = 0.0;
    double mean_local = 0.0, mean_base = 0.0, mean_novel = 0.0, mean_hm = 0.0, mean_cm = 0.0;
    double alpha_g = 0.0;
    double min_snr = 0.0;
    bool snr_infinite = false;
    std::size_t uplink_prompt = 0, uplink_total = 0, downlink = 0;
};

namespace detail {

// RNG stream purposes; labels keep client/round streams independent of
// execution order, which is what makes runs schedule-independent.
enum StreamTag : std::uint64_t {
    kBasis = 1, kTask = 2, kSplit = 3, kData = 4, kEvalLocal = 5, kEvalBase = 6, kEvalNovel = 7,
    kEncoders = 8, kInit = 9, kParticipants = 10, kTrain = 11, kSelect = 12,
};

inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t t_count = std::min(threads, n);
    for (std::size_t t = 0; t < t_count; ++t) {
        pool.emplace_back([&, t]() {
            for (std::size_t i = t; i < n; i += t_count) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

inline Batch make_eval_batch(const SyntheticTask& task, const FeatureBasis& basis,
                             std::size_t client_id, const std::vector<std::size_t>& classes,
                             std::size_t per_class, const FederationConfig& cfg, RngStream& rng) {
    Batch out;
    for (std::size_t k : classes) {
        for (std::size_t i = 0; i < per_class; ++i) {
            Vec x = scaled(task.prototypes[k], cfg.signal_scale);
            axpy(cfg.client_shift, basis.client_dirs[client_id], x);
            for (const auto& xi : basis.noise_dirs) axpy(cfg.noise_sigma * rng.normal(), xi, x);
            out.emplace_back(std::move(x), k);
        }
    }
    return out;
}

inline double accuracy(const FrozenEncoders& enc, const PromptGroupSet& prompts, const Batch& set,
                       InferenceStrategy strategy) {
    if (set.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& [x, y] : set) {
        auto p = ensemble_predict(enc, prompts, x, strategy);
        std::size_t best = static_cast<std::size_t>(
            std::max_element(p.begin(), p.end()) - p.begin());
        if (best == y) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace detail

inline double harmonic_mean(double base, double novel) {
    return (base + novel > 0.0) ? 2.0 * base * novel / (base + novel) : 0.0;
}

inline EvalMetrics evaluate(const PromptGroupSet& prompts, const FrozenEncoders& enc,
                            const EvalSets& sets, InferenceStrategy strategy) {
    if (sets.local.empty() && sets.base_other.empty() && sets.novel.empty())
        throw std::invalid_argument("evaluate: all evaluation sets empty");
    EvalMetrics m;
    m.local = detail::accuracy(enc, prompts, sets.local, strategy);
    m.base = detail::accuracy(enc, prompts, sets.base_other, strategy);
    m.novel = detail::accuracy(enc, prompts, sets.novel, strategy);
    m.hm = harmonic_mean(m.base, m.novel);
    m.cm = (m.local + m.hm) / 2.0;
    return m;
}

/// Build the synthetic world, client datasets, eval sets, encoders, and the
/// round-0 global prompts (identical copies distributed to every client).
inline FederationState setup_federation(const FederationConfig& cfg) {
    cfg.validate();
    FederationState st;
    st.cfg = cfg;

    RngStream basis_rng = RngStream::derive(cfg.seed, detail::kBasis);
    st.basis = build_basis(cfg.dim_d, cfg.n_clients, cfg.n_noise, cfg.mixing_rho, basis_rng);

    RngStream task_rng = RngStream::derive(cfg.seed, detail::kTask);
    st.task = make_task(cfg.n_classes, st.basis, task_rng);

    RngStream split_rng = RngStream::derive(cfg.seed, detail::kSplit);
    PathologicalSplit split = pathological_split(cfg.n_classes, cfg.n_clients, split_rng);
    st.task.base_classes = split.base_classes;
    st.task.novel_classes = split.novel_classes;

    // per-client training class counts
    std::vector<std::vector<std::size_t>> counts(cfg.n_clients,
                                                 std::vector<std::size_t>(cfg.n_classes, 0));
    std::vector<std::vector<std::size_t>> local_classes(cfg.n_clients);
    if (cfg.regime == DataRegime::pathological) {
        for (std::size_t c = 0; c < cfg.n_clients; ++c) {
            local_classes[c] = split.client_classes[c];
            for (std::size_t k : split.client_classes[c]) counts[c][k] = cfg.samples_per_class;
        }
    } else {
        DirichletPartition part = dirichlet_partition(
            split.base_classes.size(), cfg.n_clients, cfg.dirichlet_alpha,
            cfg.samples_per_class * cfg.n_clients, split_rng);
        for (std::size_t bi = 0; bi < split.base_classes.size(); ++bi) {
            std::size_t k = split.base_classes[bi];
            for (std::size_t c = 0; c < cfg.n_clients; ++c) {
                counts[c][k] = part.counts[bi][c];
                if (counts[c][k] > 0) local_classes[c].push_back(k);
            }
        }
    }

    st.clients.resize(cfg.n_clients);
    for (std::size_t c = 0; c < cfg.n_clients; ++c) {
        RngStream data_rng = RngStream::derive(cfg.seed, detail::kData, c);
        const auto& allowed =
            cfg.regime == DataRegime::pathological ? local_classes[c] : std::vector<std::size_t>{};
        st.clients[c].data = generate_client_data(st.task, st.basis, c, counts[c], cfg.signal_scale,
                                                  cfg.client_shift, cfg.noise_sigma, data_rng,
                                                  allowed);
        st.clients[c].local_classes = local_classes[c];

        std::vector<std::size_t> base_other;
        for (std::size_t k : st.task.base_classes)
            if (std::find(local_classes[c].begin(), local_classes[c].end(), k) ==
                local_classes[c].end())
                base_other.push_back(k);

        RngStream el = RngStream::derive(cfg.seed, detail::kEvalLocal, c);
        RngStream eb = RngStream::derive(cfg.seed, detail::kEvalBase, c);
        RngStream en = RngStream::derive(cfg.seed, detail::kEvalNovel, c);
        st.clients[c].eval.local = detail::make_eval_batch(st.task, st.basis, c, local_classes[c],
                                                           cfg.eval_per_class, cfg, el);
        st.clients[c].eval.base_other =
            detail::make_eval_batch(st.task, st.basis, c, base_other, cfg.eval_per_class, cfg, eb);
        st.clients[c].eval.novel = detail::make_eval_batch(st.task, st.basis, c,
                                                           st.task.novel_classes,
                                                           cfg.eval_per_class, cfg, en);
    }

    RngStream enc_rng = RngStream::derive(cfg.seed, detail::kEncoders);
    st.enc = make_encoders(st.task, cfg.dim_d, cfg.dim_f, cfg.dim_pt, cfg.dim_pv, cfg.tau_m,
                           enc_rng);

    RngStream init_rng = RngStream::derive(cfg.seed, detail::kInit);
    PromptGroupSet init;
    for (std::size_t j = 0; j < cfg.groups; ++j) {
        Vec pt(cfg.dim_pt), pv(cfg.dim_pv);
        for (auto& v : pt) v = cfg.init_sigma * init_rng.normal();
        for (auto& v : pv) v = cfg.init_sigma * init_rng.normal();
        init.text_prompts.push_back(std::move(pt));
        init.visual_prompts.push_back(std::move(pv));
    }
    st.global.round = 0;
    st.global.strategy = cfg.strategy;
    st.global.text_slots = init.text_prompts;
    st.global.visual_slots = init.visual_prompts;
    st.global.slot_weights.assign(cfg.groups, 1.0);
    st.prompts.assign(cfg.n_clients, init);
    return st;
}

/// Per-slot CFC and SNR of the current global state, measured on the slots'
/// images in encoder-input space (U*p_t, V*p_v).
inline SnrReport global_slot_snr(const FederationState& st, double* alpha_g_out = nullptr) {
    std::vector<Vec> injected;
    for (const auto& slot : st.global.text_slots)
        injected.push_back(matvec(st.enc.text_prompt_inject, slot));
    for (const auto& slot : st.global.visual_slots)
        injected.push_back(matvec(st.enc.visual_prompt_inject, slot));
    SnrReport rep = snr(injected, st.basis);
    if (alpha_g_out != nullptr) {
        double a = 0.0;
        for (const auto& s : rep.slots) a += s.beta;
        *alpha_g_out = a / static_cast<double>(rep.slots.size());
    }
    return rep;
}

/// One communication round: sample participants, run local updates, select,
/// aggregate, write back, evaluate. round_index is 1-based.
inline RoundRecord run_round(FederationState& st, std::size_t round_index) {
    const FederationConfig& cfg = st.cfg;
    RoundRecord rec;
    rec.round = round_index;

    const std::size_t n_part = static_cast<std::size_t>(
        std::ceil(cfg.participation * static_cast<double>(cfg.n_clients)));
    RngStream part_rng = RngStream::derive(cfg.seed, detail::kParticipants, round_index);
    rec.participants = part_rng.sample_indices(cfg.n_clients, n_part);
    std::sort(rec.participants.begin(), rec.participants.end());

    // local updates, parallelizable per client
    std::vector<LossBreakdown> losses(n_part);
    detail::parallel_for(n_part, cfg.threads, [&](std::size_t i) {
        const std::size_t c = rec.participants[i];
        RngStream train_rng = RngStream::derive(cfg.seed, detail::kTrain, round_index, c);
        st.prompts[c] = local_update(st.prompts[c], st.enc, st.clients[c].data, cfg.local_epochs,
                                     cfg.lr, cfg.batch_size, cfg.lambda, cfg.diversity, train_rng,
                                     cfg.literal_eq4);
        LossBreakdown lb;
        lb.ce = ce_loss(st.enc, st.prompts[c], st.clients[c].data.samples);
        lb.div = diversity_loss(st.enc, st.prompts[c], st.clients[c].data.samples, cfg.diversity,
                                cfg.literal_eq4);
        lb.lambda = cfg.lambda;
        lb.total = lb.ce + cfg.lambda * lb.div;
        losses[i] = lb;
    });

    // selection
    std::vector<ModalitySelection> selections(n_part);
    for (std::size_t i = 0; i < n_part; ++i) {
        const std::size_t c = rec.participants[i];
        if (cfg.strategy == AggregationStrategy::dynamic) {
            RngStream sel_rng = RngStream::derive(cfg.seed, detail::kSelect, round_index, c);
            selections[i] = select_groups(st.prompts[c].text_prompts, st.prompts[c].visual_prompts,
                                          st.global.text_slots, st.global.visual_slots, cfg.policy,
                                          cfg.select_s, cfg.tau_sel, round_index, cfg.pairing,
                                          sel_rng, cfg.coupled_selection);
        } else {
            // full uploads everything; fixed uploads the first s groups
            SelectionOutcome out;
            out.policy = SelectionPolicy::all;
            const std::size_t count =
                cfg.strategy == AggregationStrategy::full ? cfg.groups : cfg.select_s;
            out.selected.resize(count);
            std::iota(out.selected.begin(), out.selected.end(), 0);
            out.ranked = out.selected;
            out.probs.assign(cfg.groups, 1.0 / static_cast<double>(cfg.groups));
            out.scores.assign(cfg.groups, 0.0);
            selections[i].text = out;
            selections[i].visual = out;
        }
    }

    // aggregate
    std::vector<double> weights(n_part);
    for (std::size_t i = 0; i < n_part; ++i)
        weights[i] = static_cast<double>(std::max<std::size_t>(st.clients[rec.participants[i]].data.n, 1));

    if (cfg.strategy == AggregationStrategy::full) {
        std::vector<PromptGroupSet> sets;
        for (std::size_t c : rec.participants) sets.push_back(st.prompts[c]);
        st.global = aggregate_full(sets, weights, round_index);
    } else if (cfg.strategy == AggregationStrategy::fixed) {
        std::vector<PromptGroupSet> sets;
        for (std::size_t c : rec.participants) sets.push_back(st.prompts[c]);
        st.global = aggregate_fixed(sets, weights, cfg.select_s, round_index);
    } else {
        std::vector<ClientContribution> contribs(n_part);
        for (std::size_t i = 0; i < n_part; ++i) {
            contribs[i].prompts = st.prompts[rec.participants[i]];
            contribs[i].selection = selections[i];
        }
        const std::size_t s_eff = selections.front().text.selected.size();
        GlobalPromptState prev = st.global;
        st.global = aggregate_dynamic(contribs, weights, cfg.aggregation, s_eff, round_index, &prev);
    }

    // write back
    for (std::size_t i = 0; i < n_part; ++i) {
        const std::size_t c = rec.participants[i];
        st.prompts[c] = writeback(std::move(st.prompts[c]), st.global, selections[i],
                                  cfg.aggregation);
    }

    // evaluate participants
    std::vector<EvalMetrics> evals(n_part);
    detail::parallel_for(n_part, cfg.threads, [&](std::size_t i) {
        const std::size_t c = rec.participants[i];
        evals[i] = evaluate(st.prompts[c], st.enc, st.clients[c].eval, cfg.inference);
    });

    for (std::size_t i = 0; i < n_part; ++i) {
        ClientRoundMetrics cm;
        cm.client = rec.participants[i];
        cm.loss = losses[i];
        cm.eval = evals[i];
        rec.client_metrics.push_back(cm);
        rec.mean_ce += losses[i].ce;
        rec.mean_div += losses[i].div;
        rec.mean_local += evals[i].local;
        rec.mean_base += evals[i].base;
        rec.mean_novel += evals[i].novel;
        rec.mean_hm += evals[i].hm;
        rec.mean_cm += evals[i].cm;
    }
    const double inv = 1.0 / static_cast<double>(n_part);
    rec.mean_ce *= inv; rec.mean_div *= inv;
    rec.mean_local *= inv; rec.mean_base *= inv; rec.mean_novel *= inv;
    rec.mean_hm *= inv; rec.mean_cm *= inv;

    // selection trace
    for (std::size_t i = 0; i < n_part; ++i) {
        const std::size_t c = rec.participants[i];
        for (int mi = 0; mi < 2; ++mi) {
            const SelectionOutcome& out = mi == 0 ? selections[i].text : selections[i].visual;
            for (std::size_t j = 0; j < cfg.groups; ++j) {
                SelectionTraceEntry e;
                e.round = round_index;
                e.client = c;
                e.modality = mi == 0 ? Modality::text : Modality::visual;
                e.group = j;
                e.score = j < out.scores.size() ? out.scores[j] : 0.0;
                e.prob = j < out.probs.size() ? out.probs[j] : 0.0;
                e.selected = std::find(out.selected.begin(), out.selected.end(), j) !=
                             out.selected.end();
                rec.trace.push_back(e);
            }
        }
    }

    SnrReport snr_rep = global_slot_snr(st, &rec.alpha_g);
    rec.min_snr = snr_rep.min_snr;
    rec.snr_infinite = snr_rep.any_infinite;

    CommCost cost = comm_cost(cfg);
    rec.uplink_prompt = cost.uplink_prompt;
    rec.uplink_total = cost.uplink_total;
    rec.downlink = cost.downlink;

    st.rounds_done = round_index;
    return rec;
}

struct FederationResult {
    std::vector<RoundRecord> records;
    FederationState state;
};

inline FederationResult run_federation(const FederationConfig& cfg) {
    FederationResult result{.records = {}, .state = setup_federation(cfg)};
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        try {
            result.records.push_back(run_round(result.state, t));
        } catch (const std::exception& e) {
            throw std::runtime_error("round " + std::to_string(t) + " failed: " + e.what());
        }
    }
    return result;
}

/// Per-round per-modality per-group selection counts over a run's records.
struct SelectionFrequencyTable {
    // counts[round_idx][modality][group] = number of selecting clients
    std::vector<std::array<std::vector<std::size_t>, 2>> counts;
    std::vector<std::pair<Modality, std::size_t>> never_selected;
};

inline SelectionFrequencyTable selection_frequency_table(const std::vector<RoundRecord>& records,
                                                         std::size_t groups) {
    if (records.empty()) throw std::invalid_argument("selection_frequency_table: no rounds");
    SelectionFrequencyTable table;
    std::array<std::vector<std::size_t>, 2> totals{std::vector<std::size_t>(groups, 0),
                                                   std::vector<std::size_t>(groups, 0)};
    for (const auto& rec : records) {
        std::array<std::vector<std::size_t>, 2> row{std::vector<std::size_t>(groups, 0),
                                                    std::vector<std::size_t>(groups, 0)};
        for (const auto& e : rec.trace) {
            if (!e.selected) continue;
            const std::size_t m = e.modality == Modality::text ? 0 : 1;
            ++row[m][e.group];
            ++totals[m][e.group];
        }
        table.counts.push_back(row);
    }
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t g = 0; g < groups; ++g)
            if (totals[m][g] == 0)
                table.never_selected.emplace_back(m == 0 ? Modality::text : Modality::visual, g);
    return table;
}

}  // namespace fedmgp
