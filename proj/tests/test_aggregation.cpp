#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedmgp/aggregation.hpp"
#include "fedmgp/rng.hpp"

using namespace fedmgp;

namespace {

PromptGroupSet make_set(const std::vector<Vec>& text, const std::vector<Vec>& visual) {
    PromptGroupSet p;
    p.text_prompts = text;
    p.visual_prompts = visual;
    return p;
}

PromptGroupSet random_set(std::size_t G, std::size_t d, RngStream& rng) {
    PromptGroupSet p;
    for (std::size_t j = 0; j < G; ++j) {
        Vec a(d), b(d);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        p.text_prompts.push_back(a);
        p.visual_prompts.push_back(b);
    }
    return p;
}

ModalitySelection all_selection(std::size_t G) {
    SelectionOutcome out;
    out.policy = SelectionPolicy::all;
    out.selected.resize(G);
    std::iota(out.selected.begin(), out.selected.end(), 0);
    out.ranked = out.selected;
    out.scores.assign(G, 0.0);
    out.probs.assign(G, 1.0 / static_cast<double>(G));
    return {out, out};
}

ModalitySelection pick(const std::vector<std::size_t>& idx, std::size_t G) {
    SelectionOutcome out;
    out.selected = idx;
    out.ranked = idx;
    out.scores.assign(G, 0.0);
    out.probs.assign(G, 1.0 / static_cast<double>(G));
    return {out, out};
}

}  // namespace

TEST_CASE("full aggregation") {
    PromptGroupSet a = make_set({{0.0, 0.0}}, {{0.0, 0.0}});
    PromptGroupSet b = make_set({{4.0, 4.0}}, {{4.0, 4.0}});

    auto solo = aggregate_full({a}, {3.0}, 1);
    CHECK(solo.text_slots == a.text_prompts);

    auto g = aggregate_full({a, b}, {1.0, 3.0}, 1);
    CHECK(g.text_slots[0] == Vec{3.0, 3.0});
    CHECK(g.visual_slots[0] == Vec{3.0, 3.0});

    auto same = aggregate_full({b, b, b}, {1.0, 5.0, 2.0}, 1);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(same.text_slots[0][i] == Catch::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("fixed aggregation zeroes the tail") {
    RngStream rng(31);
    PromptGroupSet a = random_set(3, 4, rng);
    PromptGroupSet b = random_set(3, 4, rng);

    auto full = aggregate_full({a, b}, {2.0, 1.0}, 2);
    auto fixed_all = aggregate_fixed({a, b}, {2.0, 1.0}, 3, 2);
    CHECK(fixed_all.text_slots == full.text_slots);
    CHECK(fixed_all.visual_slots == full.visual_slots);

    auto fixed1 = aggregate_fixed({a, b}, {2.0, 1.0}, 1, 2);
    CHECK(fixed1.text_slots[0] == full.text_slots[0]);
    CHECK(fixed1.text_slots[1] == Vec(4, 0.0));
    CHECK(fixed1.text_slots[2] == Vec(4, 0.0));
    CHECK(fixed1.visual_slots[1] == Vec(4, 0.0));
}

TEST_CASE("dynamic aggregation modes") {
    const std::size_t G = 3;

    SECTION("shared selection of identical prompts is idempotent") {
        RngStream rng(32);
        PromptGroupSet p = random_set(G, 4, rng);
        ClientContribution c1{p, pick({1, 2}, G)};
        ClientContribution c2{p, pick({1, 2}, G)};

        auto ord = aggregate_dynamic({c1, c2}, {1.0, 1.0}, DynamicMode::ordinal, 2, 2);
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t k = 0; k < 4; ++k) {
                CHECK(ord.text_slots[i][k] ==
                      Catch::Approx(p.text_prompts[1 + i][k]).margin(1e-12));
            }
        }

        auto ren =
            aggregate_dynamic({c1, c2}, {1.0, 1.0}, DynamicMode::slotwise_renormalized, 2, 2);
        for (std::size_t j : {1, 2})
            for (std::size_t k = 0; k < 4; ++k)
                CHECK(ren.text_slots[j][k] == Catch::Approx(p.text_prompts[j][k]).margin(1e-12));
    }

    SECTION("slotwise literal halves a singleton selection") {
        PromptGroupSet p1 = make_set({{2.0}, {4.0}, {6.0}}, {{2.0}, {4.0}, {6.0}});
        PromptGroupSet p2 = make_set({{8.0}, {8.0}, {8.0}}, {{8.0}, {8.0}, {8.0}});
        ClientContribution c1{p1, pick({0, 1}, G)};
        ClientContribution c2{p2, pick({1, 2}, G)};
        auto lit = aggregate_dynamic({c1, c2}, {1.0, 1.0}, DynamicMode::slotwise_literal, 2, 2);
        CHECK(lit.text_slots[0] == Vec{1.0});                 // only client 1, weight 1/2
        CHECK(lit.text_slots[1] == Vec{(4.0 + 8.0) / 2.0});   // both clients
        CHECK(lit.text_slots[2] == Vec{4.0});                 // only client 2
    }

    SECTION("ordinal averages rank by rank") {
        PromptGroupSet p1 = make_set({{1.0}, {3.0}, {5.0}}, {{1.0}, {3.0}, {5.0}});
        PromptGroupSet p2 = make_set({{2.0}, {4.0}, {6.0}}, {{2.0}, {4.0}, {6.0}});
        ClientContribution c1{p1, pick({0, 2}, G)};  // ranked a1=0, a2=2
        ClientContribution c2{p2, pick({1, 0}, G)};  // ranked b1=1, b2=0
        auto ord = aggregate_dynamic({c1, c2}, {1.0, 1.0}, DynamicMode::ordinal, 2, 2);
        CHECK(ord.text_slots[0] == Vec{(1.0 + 4.0) / 2.0});
        CHECK(ord.text_slots[1] == Vec{(5.0 + 2.0) / 2.0});
    }

    SECTION("renormalized carries forward empty slots") {
        PromptGroupSet p1 = make_set({{2.0}, {4.0}, {6.0}}, {{2.0}, {4.0}, {6.0}});
        ClientContribution c1{p1, pick({0, 1}, G)};
        GlobalPromptState prev;
        prev.strategy = AggregationStrategy::dynamic;
        prev.text_slots = {{9.0}, {9.0}, {9.0}};
        prev.visual_slots = {{9.0}, {9.0}, {9.0}};
        auto ren = aggregate_dynamic({c1}, {1.0}, DynamicMode::slotwise_renormalized, 2, 2, &prev);
        CHECK(ren.text_slots[0] == Vec{2.0});
        CHECK(ren.text_slots[1] == Vec{4.0});
        CHECK(ren.text_slots[2] == Vec{9.0});  // nobody selected slot 2
    }

    SECTION("inconsistent selection sizes are rejected") {
        RngStream rng(33);
        PromptGroupSet p = random_set(G, 4, rng);
        ClientContribution c1{p, pick({0, 1}, G)};
        ClientContribution c2{p, pick({0}, G)};
        CHECK_THROWS(aggregate_dynamic({c1, c2}, {1.0, 1.0}, DynamicMode::ordinal, 2, 2));
    }
}

TEST_CASE("writeback contract") {
    RngStream rng(34);
    PromptGroupSet p = random_set(4, 3, rng);

    SECTION("policy all with ordinal mode replaces everything") {
        PromptGroupSet q = random_set(4, 3, rng);
        std::vector<ClientContribution> contribs{{p, all_selection(4)}, {q, all_selection(4)}};
        auto global = aggregate_dynamic(contribs, {1.0, 1.0}, DynamicMode::ordinal, 4, 3);
        auto after = writeback(p, global, all_selection(4), DynamicMode::ordinal);
        CHECK(after.text_prompts == global.text_slots);
        CHECK(after.visual_prompts == global.visual_slots);
    }

    SECTION("unselected groups stay bit-identical") {
        auto global = aggregate_dynamic({{p, pick({1, 3}, 4)}}, {1.0}, DynamicMode::ordinal, 2, 3);
        auto before = p;
        auto after = writeback(p, global, pick({1, 3}, 4), DynamicMode::ordinal);
        CHECK(after.text_prompts[0] == before.text_prompts[0]);
        CHECK(after.text_prompts[2] == before.text_prompts[2]);
        CHECK(after.visual_prompts[0] == before.visual_prompts[0]);
        CHECK(after.visual_prompts[2] == before.visual_prompts[2]);
    }

    SECTION("empty selection is an arity error") {
        GlobalPromptState global;
        global.text_slots = p.text_prompts;
        global.visual_slots = p.visual_prompts;
        ModalitySelection none;
        CHECK_THROWS(writeback(p, global, none, DynamicMode::ordinal));
    }
}

TEST_CASE("dynamic policy-all with equal weights reduces to full aggregation") {
    RngStream rng(35);
    PromptGroupSet a = random_set(5, 6, rng);
    PromptGroupSet b = random_set(5, 6, rng);
    PromptGroupSet c = random_set(5, 6, rng);

    auto full = aggregate_full({a, b, c}, {2.0, 2.0, 2.0}, 4);
    auto dyn = aggregate_dynamic(
        {{a, all_selection(5)}, {b, all_selection(5)}, {c, all_selection(5)}}, {2.0, 2.0, 2.0},
        DynamicMode::ordinal, 5, 4);
    CHECK(dyn.text_slots == full.text_slots);
    CHECK(dyn.visual_slots == full.visual_slots);
}

TEST_CASE("aggregated slots stay inside the convex hull") {
    RngStream rng(36);
    std::vector<PromptGroupSet> sets;
    std::vector<double> n{3.0, 1.0, 2.0};
    for (int i = 0; i < 3; ++i) sets.push_back(random_set(4, 5, rng));

    auto check_hull = [&](const Vec& slot, std::size_t j, bool text) {
        for (std::size_t k = 0; k < slot.size(); ++k) {
            double lo = 1e300, hi = -1e300;
            for (const auto& s : sets) {
                const double v = text ? s.text_prompts[j][k] : s.visual_prompts[j][k];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            CHECK(slot[k] >= lo - 1e-12);
            CHECK(slot[k] <= hi + 1e-12);
        }
    };

    auto full = aggregate_full(sets, n, 1);
    for (std::size_t j = 0; j < 4; ++j) {
        check_hull(full.text_slots[j], j, true);
        check_hull(full.visual_slots[j], j, false);
    }

    auto fixed = aggregate_fixed(sets, n, 2, 1);
    for (std::size_t j = 0; j < 2; ++j) check_hull(fixed.text_slots[j], j, true);

    std::vector<ClientContribution> contribs;
    for (const auto& s : sets) contribs.push_back({s, pick({0, 1}, 4)});
    auto ren = aggregate_dynamic(contribs, n, DynamicMode::slotwise_renormalized, 2, 1);
    for (std::size_t j = 0; j < 2; ++j) check_hull(ren.text_slots[j], j, true);
}

TEST_CASE("weights normalize to one") {
    auto g = aggregate_full({make_set({{1.0}}, {{1.0}}), make_set({{2.0}}, {{2.0}})},
                            {7.0, 13.0}, 1);
    CHECK(g.text_slots[0][0] == Catch::Approx((7.0 * 1.0 + 13.0 * 2.0) / 20.0).epsilon(1e-12));
}
