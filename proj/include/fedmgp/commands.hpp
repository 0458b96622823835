#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <ctime>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedmgp/analysis.hpp"
#include "fedmgp/federation.hpp"
#include "fedmgp/reporting.hpp"

namespace fedmgp {

// ---------------------------------------------------------------------------
// verification suite
// ---------------------------------------------------------------------------

struct VerifyCheck {
    std::string name;
    bool mandatory = true;
    bool pass = false;
    double value = 0.0;
    std::string detail;
};

namespace verify {

struct ChebyshevResult {
    std::size_t violations = 0;       // E_pi < E_unif - 1e-12
    std::size_t strict_failures = 0;  // gap not strictly positive where it must be
    double min_gap = 0.0;             // over non-constant instances
};

/// Random common-norm instances: prompts p_g = c_g u + s_g w_g with
/// c_g^2 + s_g^2 = r^2 shared within an instance, so the selection score is
/// monotone in the common coefficient. `sign` exists as a mutation canary
/// for tests: flipping it must break the inequality.
inline ChebyshevResult chebyshev_check(std::size_t instances, std::uint64_t seed,
                                       double sign = 1.0) {
    RngStream rng = RngStream::derive(seed, 0xC4EB);
    ChebyshevResult res;
    res.min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < instances; ++i) {
        const std::size_t G = 2 + rng.uniform_index(7);
        std::vector<double> c(G), s(G);
        double cmax = 0.0;
        for (auto& v : c) {
            v = rng.uniform(0.0, 1.0);
            cmax = std::max(cmax, v);
        }
        const double r = std::max(cmax, 1e-3) * rng.uniform(1.0, 2.0) + 1e-6;
        for (std::size_t g = 0; g < G; ++g) s[g] = std::sqrt(r * r - c[g] * c[g]);
        const double tau = rng.uniform(0.05, 10.0);

        std::vector<double> scores(G);
        for (std::size_t g = 0; g < G; ++g) scores[g] = sign * theory_similarity(c[g], s[g]);
        SelectionScores sc;
        sc.per_group = scores;
        std::vector<double> pi = selection_distribution(sc, tau);

        double e_pi = 0.0, e_unif = 0.0, lo = c[0], hi = c[0];
        for (std::size_t g = 0; g < G; ++g) {
            e_pi += c[g] * pi[g];
            e_unif += c[g] / static_cast<double>(G);
            lo = std::min(lo, c[g]);
            hi = std::max(hi, c[g]);
        }
        const double gap = e_pi - e_unif;
        if (gap < -1e-12) ++res.violations;
        if (hi - lo > 1e-9) {
            res.min_gap = std::min(res.min_gap, gap);
            if (gap <= 0.0) ++res.strict_failures;
        }
    }
    return res;
}

struct SubsetLawResult {
    std::size_t subsets_checked = 0;
    std::size_t outside_3sigma = 0;
    double max_z = 0.0;
};

inline SubsetLawResult subset_law_check(std::size_t draws, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x5B5E);
    SubsetLawResult res;
    const std::vector<std::pair<std::size_t, std::size_t>> fixtures = {
        {3, 1}, {4, 2}, {5, 2}, {5, 3}, {6, 2}, {6, 3}};
    for (auto [G, k] : fixtures) {
        SelectionScores sc;
        sc.per_group.resize(G);
        for (auto& v : sc.per_group) v = rng.uniform(-1.0, 1.0);
        std::vector<double> pi = selection_distribution(sc, 1.0);
        auto exact = subset_probabilities(pi, k);

        std::map<std::vector<std::size_t>, std::size_t> counts;
        for (std::size_t d = 0; d < draws; ++d) {
            auto sel = sample_without_replacement(pi, k, rng);
            std::sort(sel.begin(), sel.end());
            ++counts[sel];
        }
        for (const auto& [subset, p] : exact) {
            const double emp =
                static_cast<double>(counts.count(subset) ? counts.at(subset) : 0) /
                static_cast<double>(draws);
            const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(draws));
            const double z = std::abs(emp - p) / std::max(sigma, 1e-12);
            res.max_z = std::max(res.max_z, z);
            if (z > 3.0) ++res.outside_3sigma;
            ++res.subsets_checked;
        }
    }
    return res;
}

struct SetMeanResult {
    std::size_t instances = 0;
    std::size_t verdict_ge_count = 0;   // claimed direction E_set >= E_pi held
    std::size_t sandwich_failures = 0;  // E_unif <= E_set <= E_pi violated
};

inline SetMeanResult set_mean_check(std::size_t instances, std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x5E73);
    SetMeanResult res;
    for (std::size_t i = 0; i < instances; ++i) {
        const std::size_t G = 3 + rng.uniform_index(4);  // 3..6
        const std::size_t k = 1 + rng.uniform_index(std::min<std::size_t>(G, 3));
        std::vector<double> c(G), s(G);
        double cmax = 0.0;
        for (auto& v : c) {
            v = rng.uniform(0.0, 1.0);
            cmax = std::max(cmax, v);
        }
        const double r = std::max(cmax, 1e-3) * rng.uniform(1.0, 2.0) + 1e-6;
        for (std::size_t g = 0; g < G; ++g) s[g] = std::sqrt(r * r - c[g] * c[g]);
        SetMeanReport rep = set_mean_expectation(c, s, rng.uniform(0.1, 5.0), k);
        ++res.instances;
        if (rep.verdict_ge) ++res.verdict_ge_count;
        if (rep.e_set < rep.e_unif - 1e-12 || rep.e_set > rep.e_pi + 1e-12)
            ++res.sandwich_failures;
    }
    return res;
}

struct SnrOrderingResult {
    std::size_t instances = 0;
    std::size_t order_violations = 0;   // full <= fixed <= dynamic (1e-12 slack)
    std::size_t dynamic_strict = 0;     // dynamic > fixed strictly
};

/// Heterogeneous instances: every client has exactly s low-noise groups and
/// G-s high-noise ones, with the high-noise magnitude scaled so the fixed
/// prefix always picks up at least one contaminated group while score-ranked
/// selection keeps only clean ones.
inline SnrOrderingResult snr_ordering_check(std::size_t instances, std::uint64_t seed) {
    constexpr std::size_t N = 3, G = 4, s = 2;
    RngStream rng = RngStream::derive(seed, 0x59A0);
    SnrOrderingResult res;
    for (std::size_t inst = 0; inst < instances; ++inst) {
        const std::size_t L = N * G;
        const std::size_t dim = 1 + N + L + 2;
        FeatureBasis basis = build_basis(dim, N, L, 0.3, rng);

        // clean positions per client, retried until every prefix slot j < s
        // has at least one contaminated client
        std::vector<std::vector<bool>> clean(N, std::vector<bool>(G, false));
        for (;;) {
            bool prefix_ok = true;
            for (std::size_t c = 0; c < N; ++c) {
                std::fill(clean[c].begin(), clean[c].end(), false);
                for (std::size_t j : rng.sample_indices(G, s)) clean[c][j] = true;
            }
            for (std::size_t j = 0; j < s; ++j) {
                bool any_dirty = false;
                for (std::size_t c = 0; c < N; ++c) any_dirty = any_dirty || !clean[c][j];
                prefix_ok = prefix_ok && any_dirty;
            }
            if (prefix_ok) break;
        }

        const double n2 = static_cast<double>(N * N);
        std::vector<std::vector<Vec>> groups(N, std::vector<Vec>(G));
        for (std::size_t c = 0; c < N; ++c) {
            for (std::size_t j = 0; j < G; ++j) {
                const double beta = rng.uniform(0.8, 1.2);
                const double nu = clean[c][j] ? rng.uniform(0.01, 0.05)
                                              : rng.uniform(0.2 * n2, 0.5 * n2);
                Vec v = scaled(basis.global_dir, beta);
                axpy(nu, basis.noise_dirs[c * G + j], v);
                groups[c][j] = std::move(v);
            }
        }

        const double w = 1.0 / static_cast<double>(N);
        std::vector<Vec> full_slots(G, Vec(dim, 0.0));
        for (std::size_t j = 0; j < G; ++j)
            for (std::size_t c = 0; c < N; ++c) axpy(w, groups[c][j], full_slots[j]);
        std::vector<Vec> fixed_slots(full_slots.begin(), full_slots.begin() + s);

        // score-ranked top-s: each client contributes its s best groups by
        // cosine to the shared direction, ordinal slot correspondence
        std::vector<Vec> dyn_slots(s, Vec(dim, 0.0));
        for (std::size_t c = 0; c < N; ++c) {
            std::vector<std::size_t> order(G);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return cosine(groups[c][a], basis.global_dir) >
                       cosine(groups[c][b], basis.global_dir);
            });
            for (std::size_t i = 0; i < s; ++i) axpy(w, groups[c][order[i]], dyn_slots[i]);
        }

        const double snr_full = snr(full_slots, basis).min_snr;
        const double snr_fixed = snr(fixed_slots, basis).min_snr;
        const double snr_dyn = snr(dyn_slots, basis).min_snr;

        ++res.instances;
        if (snr_full > snr_fixed + 1e-12 || snr_fixed > snr_dyn + 1e-12) ++res.order_violations;
        if (snr_dyn > snr_fixed) ++res.dynamic_strict;
    }
    return res;
}

struct GradientCheckResult {
    std::size_t configs = 0;
    double max_rel_err = 0.0;
};

inline GradientCheckResult gradient_check(std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x6D4D);
    GradientCheckResult res;
    const std::size_t d = 10, d_f = 6, d_pt = 4, d_pv = 3, G = 3, K = 3;

    FeatureBasis basis = build_basis(d, 2, 2, 0.3, rng);
    SyntheticTask task = make_task(K, basis, rng);
    FrozenEncoders enc = make_encoders(task, d, d_f, d_pt, d_pv, 0.2, rng);

    Batch batch;
    for (std::size_t i = 0; i < 4; ++i) {
        Vec x = scaled(task.prototypes[i % K], 1.0);
        axpy(0.4, basis.client_dirs[0], x);
        for (const auto& xi : basis.noise_dirs) axpy(0.1 * rng.normal(), xi, x);
        batch.emplace_back(std::move(x), i % K);
    }

    const double h = 1e-5;
    for (double lambda : {0.0, 1.0, 2.0, 5.0}) {
        for (DiversityForm form : {DiversityForm::COS, DiversityForm::L1, DiversityForm::L2}) {
            for (bool literal : {false, true}) {
                PromptGroupSet p;
                for (std::size_t j = 0; j < G; ++j) {
                    Vec pt(d_pt), pv(d_pv);
                    for (auto& v : pt) v = 0.5 * rng.normal();
                    for (auto& v : pv) v = 0.5 * rng.normal();
                    p.text_prompts.push_back(pt);
                    p.visual_prompts.push_back(pv);
                }
                auto [loss, grads] = loss_and_gradient(enc, p, batch, lambda, form, literal);
                auto probe = [&](Vec& slot, std::size_t i, double g) {
                    const double keep = slot[i];
                    slot[i] = keep + h;
                    double up = loss_and_gradient(enc, p, batch, lambda, form, literal)
                                    .first.total;
                    slot[i] = keep - h;
                    double dn = loss_and_gradient(enc, p, batch, lambda, form, literal)
                                    .first.total;
                    slot[i] = keep;
                    const double fd = (up - dn) / (2.0 * h);
                    const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
                    res.max_rel_err = std::max(res.max_rel_err, rel);
                };
                for (std::size_t j = 0; j < G; ++j) {
                    for (std::size_t i = 0; i < d_pt; ++i)
                        probe(p.text_prompts[j], i, grads.text[j][i]);
                    for (std::size_t i = 0; i < d_pv; ++i)
                        probe(p.visual_prompts[j], i, grads.visual[j][i]);
                }
                ++res.configs;
            }
        }
    }
    return res;
}

struct SoftmaxInvarianceResult {
    double max_shift_dev = 0.0;    // softmax shift invariance
    double max_onehot_dev = 0.0;   // tau -> 0 limit vs argmax
    bool pass = false;
};

inline SoftmaxInvarianceResult softmax_invariance_check(std::uint64_t seed) {
    RngStream rng = RngStream::derive(seed, 0x50F7);
    SoftmaxInvarianceResult res;
    for (std::size_t i = 0; i < 200; ++i) {
        const std::size_t G = 2 + rng.uniform_index(7);
        SelectionScores sc;
        sc.per_group.resize(G);
        for (auto& v : sc.per_group) v = rng.uniform(-3.0, 3.0);
        const double tau = rng.uniform(0.1, 5.0);
        std::vector<double> a = selection_distribution(sc, tau);
        SelectionScores shifted = sc;
        const double delta = rng.uniform(-10.0, 10.0);
        for (auto& v : shifted.per_group) v += delta;
        std::vector<double> b = selection_distribution(shifted, tau);
        for (std::size_t g = 0; g < G; ++g)
            res.max_shift_dev = std::max(res.max_shift_dev, std::abs(a[g] - b[g]));

        std::vector<double> cold = selection_distribution(sc, 1e-6);
        const std::size_t arg = static_cast<std::size_t>(
            std::max_element(sc.per_group.begin(), sc.per_group.end()) - sc.per_group.begin());
        for (std::size_t g = 0; g < G; ++g) {
            const double want = g == arg ? 1.0 : 0.0;
            res.max_onehot_dev = std::max(res.max_onehot_dev, std::abs(cold[g] - want));
        }
    }
    res.pass = res.max_shift_dev < 1e-12 && res.max_onehot_dev < 1e-9;
    return res;
}

struct FedAvgReductionResult {
    bool identical = true;
    std::string first_difference;
};

inline FederationConfig small_benchmark_config(std::uint64_t seed) {
    FederationConfig cfg;
    cfg.seed = seed;
    cfg.n_clients = 4;
    cfg.n_classes = 8;
    cfg.rounds = 5;
    cfg.samples_per_class = 8;
    cfg.eval_per_class = 4;
    cfg.dim_d = 24;
    cfg.dim_f = 12;
    cfg.dim_pt = 8;
    cfg.dim_pv = 8;
    cfg.n_noise = 4;
    return cfg;
}

inline FedAvgReductionResult fedavg_reduction_check(std::uint64_t seed, std::size_t rounds = 5) {
    FederationConfig base = small_benchmark_config(seed);
    base.rounds = rounds;

    FederationConfig full_cfg = base;
    full_cfg.strategy = AggregationStrategy::full;

    FederationConfig dyn_cfg = base;
    dyn_cfg.strategy = AggregationStrategy::dynamic;
    dyn_cfg.policy = SelectionPolicy::all;
    dyn_cfg.select_s = dyn_cfg.groups;
    dyn_cfg.aggregation = DynamicMode::ordinal;

    FederationResult a = run_federation(full_cfg);
    FederationResult b = run_federation(dyn_cfg);

    FedAvgReductionResult res;
    // strategy labels differ by construction; every numeric stream must be
    // bit-identical
    const std::string ma = metrics_csv(a.records, AggregationStrategy::full);
    const std::string mb = metrics_csv(b.records, AggregationStrategy::full);
    if (ma != mb) {
        res.identical = false;
        res.first_difference = "metrics stream";
        return res;
    }
    if (a.state.global.text_slots != b.state.global.text_slots ||
        a.state.global.visual_slots != b.state.global.visual_slots) {
        res.identical = false;
        res.first_difference = "global prompt slots";
    }
    return res;
}

}  // namespace verify

inline std::vector<VerifyCheck> run_verification(std::uint64_t seed = 7,
                                                 std::size_t subset_draws = 200000) {
    std::vector<VerifyCheck> checks;

    {
        auto r = verify::chebyshev_check(10000, seed);
        VerifyCheck c;
        c.name = "chebyshev_cfc";
        c.value = r.min_gap;
        c.pass = r.violations == 0 && r.strict_failures == 0;
        c.detail = "violations=" + std::to_string(r.violations) +
                   " strict_failures=" + std::to_string(r.strict_failures);
        checks.push_back(c);
    }
    {
        auto r = verify::subset_law_check(subset_draws, seed);
        VerifyCheck c;
        c.name = "subset_sampling_law";
        c.value = r.max_z;
        c.pass = r.outside_3sigma == 0;
        c.detail = "subsets=" + std::to_string(r.subsets_checked) +
                   " outside_3sigma=" + std::to_string(r.outside_3sigma);
        checks.push_back(c);
    }
    {
        auto r = verify::set_mean_check(500, seed);
        VerifyCheck sandwich;
        sandwich.name = "set_mean_sandwich";
        sandwich.pass = r.sandwich_failures == 0;
        sandwich.value = static_cast<double>(r.sandwich_failures);
        sandwich.detail = "instances=" + std::to_string(r.instances);
        checks.push_back(sandwich);

        VerifyCheck verdict;
        verdict.name = "set_mean_ge_verdict";
        verdict.mandatory = false;
        verdict.pass = true;  // informational: fraction where E_set >= E_pi held
        verdict.value =
            static_cast<double>(r.verdict_ge_count) / static_cast<double>(r.instances);
        verdict.detail = "held_on=" + std::to_string(r.verdict_ge_count) + "/" +
                         std::to_string(r.instances);
        checks.push_back(verdict);
    }
    {
        auto r = verify::snr_ordering_check(200, seed);
        VerifyCheck c;
        c.name = "snr_ordering";
        const double strict_frac =
            static_cast<double>(r.dynamic_strict) / static_cast<double>(r.instances);
        c.pass = r.order_violations == 0 && strict_frac >= 0.9;
        c.value = strict_frac;
        c.detail = "order_violations=" + std::to_string(r.order_violations);
        checks.push_back(c);
    }
    {
        RngStream rng = RngStream::derive(seed, 0x5C41);
        auto fit = noise_scaling_experiment(16, {2, 4, 8, 16, 32}, 200, 1.0, rng);
        VerifyCheck c;
        c.name = "noise_scaling_slope";
        c.value = fit.slope;
        c.pass = fit.slope >= -1.15 && fit.slope <= -0.85;
        checks.push_back(c);
    }
    {
        auto r = verify::gradient_check(seed);
        VerifyCheck c;
        c.name = "gradient_check";
        c.value = r.max_rel_err;
        c.pass = r.max_rel_err < 1e-4;
        c.detail = "configs=" + std::to_string(r.configs);
        checks.push_back(c);
    }
    {
        auto r = verify::softmax_invariance_check(seed);
        VerifyCheck c;
        c.name = "softmax_invariance";
        c.pass = r.pass;
        c.value = std::max(r.max_shift_dev, r.max_onehot_dev);
        checks.push_back(c);
    }
    {
        auto r = verify::fedavg_reduction_check(seed);
        VerifyCheck c;
        c.name = "fedavg_reduction";
        c.pass = r.identical;
        c.value = r.identical ? 1.0 : 0.0;
        c.detail = r.first_difference;
        checks.push_back(c);
    }
    return checks;
}

inline std::string verify_csv(const std::vector<VerifyCheck>& checks) {
    std::ostringstream out;
    out << "# schema=" << kVerifySchema << "\n";
    out << "check,mandatory,pass,value,detail\n";
    for (const auto& c : checks)
        out << c.name << ',' << (c.mandatory ? 1 : 0) << ',' << (c.pass ? 1 : 0) << ','
            << fmt(c.value) << ',' << c.detail << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

inline std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline int cmd_run(const FederationConfig& cfg, const std::filesystem::path& out_dir) {
    const std::string started = timestamp_utc();
    FederationResult result = run_federation(cfg);
    write_run_outputs(result, out_dir, started, timestamp_utc());
    return 0;
}

inline int cmd_verify(const std::filesystem::path& out_dir, std::uint64_t seed = 7) {
    std::vector<VerifyCheck> checks = run_verification(seed);
    std::filesystem::create_directories(out_dir);
    write_file(out_dir / "verify_report.csv", verify_csv(checks));
    int failed = 0;
    for (const auto& c : checks)
        if (c.mandatory && !c.pass) ++failed;
    return failed == 0 ? 0 : 1;
}

struct StrategySummary {
    AggregationStrategy strategy;
    double local_mean = 0, local_std = 0;
    double base_mean = 0, base_std = 0;
    double novel_mean = 0, novel_std = 0;
    double cm_mean = 0, cm_std = 0;
    double min_snr_mean = 0, min_snr_std = 0;
};

inline StrategySummary summarize_strategy(const FederationConfig& base,
                                          AggregationStrategy strategy,
                                          const std::vector<std::uint64_t>& seeds) {
    std::vector<std::array<double, 5>> rows;
    for (std::uint64_t seed : seeds) {
        FederationConfig cfg = base;
        cfg.strategy = strategy;
        cfg.seed = seed;
        FederationResult r = run_federation(cfg);
        const RoundRecord& last = r.records.back();
        rows.push_back({last.mean_local, last.mean_base, last.mean_novel, last.mean_cm,
                        std::isfinite(last.min_snr) ? last.min_snr : 0.0});
    }
    auto stats = [&](std::size_t col) {
        double m = 0.0;
        for (const auto& row : rows) m += row[col];
        m /= static_cast<double>(rows.size());
        double v = 0.0;
        for (const auto& row : rows) v += (row[col] - m) * (row[col] - m);
        v = rows.size() > 1 ? v / static_cast<double>(rows.size() - 1) : 0.0;
        return std::pair<double, double>{m, std::sqrt(v)};
    };
    StrategySummary s;
    s.strategy = strategy;
    std::tie(s.local_mean, s.local_std) = stats(0);
    std::tie(s.base_mean, s.base_std) = stats(1);
    std::tie(s.novel_mean, s.novel_std) = stats(2);
    std::tie(s.cm_mean, s.cm_std) = stats(3);
    std::tie(s.min_snr_mean, s.min_snr_std) = stats(4);
    return s;
}

inline std::string compare_csv(const std::vector<StrategySummary>& rows) {
    std::ostringstream out;
    out << "# schema=" << kCompareSchema << "\n";
    out << "strategy,local_mean,local_std,base_mean,base_std,novel_mean,novel_std,"
           "cm_mean,cm_std,min_snr_mean,min_snr_std\n";
    for (const auto& s : rows)
        out << to_string(s.strategy) << ',' << fmt(s.local_mean) << ',' << fmt(s.local_std) << ','
            << fmt(s.base_mean) << ',' << fmt(s.base_std) << ',' << fmt(s.novel_mean) << ','
            << fmt(s.novel_std) << ',' << fmt(s.cm_mean) << ',' << fmt(s.cm_std) << ','
            << fmt(s.min_snr_mean) << ',' << fmt(s.min_snr_std) << "\n";
    return out.str();
}

inline std::vector<StrategySummary> run_comparison(const FederationConfig& base,
                                                   const std::vector<AggregationStrategy>& strategies,
                                                   const std::vector<std::uint64_t>& seeds) {
    if (strategies.size() < 2)
        throw std::invalid_argument("compare: need at least 2 strategies");
    if (seeds.empty()) throw std::invalid_argument("compare: need at least 1 seed");
    std::vector<StrategySummary> rows;
    for (AggregationStrategy s : strategies) rows.push_back(summarize_strategy(base, s, seeds));
    return rows;
}

inline int cmd_compare(const FederationConfig& base,
                       const std::vector<AggregationStrategy>& strategies,
                       const std::vector<std::uint64_t>& seeds,
                       const std::filesystem::path& out_dir) {
    std::vector<StrategySummary> rows = run_comparison(base, strategies, seeds);
    std::filesystem::create_directories(out_dir);
    write_file(out_dir / "compare.csv", compare_csv(rows));
    return 0;
}

/// Digest of a run directory: per-round aggregate metrics plus selection
/// frequencies, recomputed from the CSV artifacts of a previous `run`.
inline int cmd_report(const std::filesystem::path& run_dir,
                      const std::filesystem::path& out_path) {
    namespace fs = std::filesystem;
    std::ifstream metrics(run_dir / "metrics.csv");
    if (!metrics) throw std::runtime_error("cannot read " + (run_dir / "metrics.csv").string());
    std::ostringstream out;
    out << "# schema=" << kReportSchema << "\n";
    out << "table,round,key,value\n";

    std::string line;
    while (std::getline(metrics, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("round,", 0) == 0) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) cols.push_back(tok);
        if (cols.size() < 13 || cols[1] != "mean") continue;
        const char* keys[] = {"loss_ce", "loss_div", "acc_local", "acc_base",
                              "acc_novel", "hm", "cm", "min_snr", "alpha_g", "uplink_scalars"};
        for (std::size_t i = 0; i < 10; ++i)
            out << "round_mean," << cols[0] << ',' << keys[i] << ',' << cols[i + 3] << "\n";
    }

    std::ifstream trace(run_dir / "selection_trace.csv");
    if (trace) {
        std::map<std::pair<std::string, std::string>, std::size_t> freq;
        while (std::getline(trace, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("round,", 0) == 0) continue;
            std::vector<std::string> cols;
            std::stringstream ss(line);
            std::string tok;
            while (std::getline(ss, tok, ',')) cols.push_back(tok);
            if (cols.size() == 7 && cols[6] == "1") ++freq[{cols[2], cols[3]}];
        }
        for (const auto& [key, count] : freq)
            out << "selection_count,total," << key.first << "_g" << key.second << ','
                << count << "\n";
    }

    fs::create_directories(out_path.parent_path().empty() ? fs::path(".")
                                                          : out_path.parent_path());
    write_file(out_path, out.str());
    return 0;
}

}  // namespace fedmgp
