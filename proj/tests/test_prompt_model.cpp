#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedmgp/prompt_model.hpp"

using namespace fedmgp;

namespace {

struct Fixture {
    FeatureBasis basis;
    SyntheticTask task;
    FrozenEncoders enc;
    Batch batch;
    RngStream rng{99};

    explicit Fixture(std::size_t K = 4, double tau = 0.2) {
        RngStream setup(17);
        basis = build_basis(16, 2, 2, 0.3, setup);
        task = make_task(K, basis, setup);
        enc = make_encoders(task, 16, 8, 5, 4, tau, setup);
        for (std::size_t i = 0; i < 6; ++i) {
            Vec x = task.prototypes[i % K];
            axpy(0.3, basis.client_dirs[0], x);
            for (const auto& xi : basis.noise_dirs) axpy(0.1 * setup.normal(), xi, x);
            batch.emplace_back(std::move(x), i % K);
        }
    }

    PromptGroupSet random_prompts(std::size_t G, double scale = 0.5) {
        PromptGroupSet p;
        for (std::size_t j = 0; j < G; ++j) {
            Vec pt(5), pv(4);
            for (auto& v : pt) v = scale * rng.normal();
            for (auto& v : pv) v = scale * rng.normal();
            p.text_prompts.push_back(pt);
            p.visual_prompts.push_back(pv);
        }
        return p;
    }
};

}  // namespace

TEST_CASE("feature maps are scale invariant and prompt driven") {
    Fixture f;
    Vec zero_t(5, 0.0), zero_v(4, 0.0);

    CHECK(text_feature(f.enc, 0, zero_t) ==
          normalized(matvec(f.enc.text_map, f.enc.class_embeddings[0])));
    CHECK(image_feature(f.enc, f.batch[0].first, zero_v) ==
          normalized(matvec(f.enc.image_map, f.batch[0].first)));

    Vec x3 = scaled(f.batch[0].first, 3.0);
    Vec a = image_feature(f.enc, f.batch[0].first, zero_v);
    Vec b = image_feature(f.enc, x3, zero_v);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == Catch::Approx(b[i]).margin(1e-12));

    // disabled injection: distinct prompts, identical features
    FrozenEncoders enc0 = f.enc;
    enc0.text_prompt_inject = Mat(16, 5);
    Vec p1(5, 0.7), p2(5, -1.3);
    CHECK(text_feature(enc0, 1, p1) == text_feature(enc0, 1, p2));
}

TEST_CASE("group class probabilities") {
    Fixture f;
    PromptGroupSet p = f.random_prompts(3);
    auto probs = group_class_probs(f.enc, p, 1, f.batch[0].first);
    double total = 0.0;
    for (double q : probs) {
        CHECK(q > 0.0);
        total += q;
    }
    CHECK(total == Catch::Approx(1.0).epsilon(1e-12));

    Fixture f1(1);
    PromptGroupSet p1 = f1.random_prompts(2);
    CHECK(group_class_probs(f1.enc, p1, 0, f1.batch[0].first) == std::vector<double>{1.0});

    // uniform when all class embeddings agree
    FrozenEncoders flat = f.enc;
    for (auto& e : flat.class_embeddings) e = flat.class_embeddings[0];
    auto u = group_class_probs(flat, p, 0, f.batch[0].first);
    for (double q : u) CHECK(q == Catch::Approx(0.25).epsilon(1e-12));

    // cold temperature approaches one-hot at the argmax similarity
    Fixture fc(4, 1e-6);
    PromptGroupSet pc = fc.random_prompts(2);
    const Vec v = image_feature(fc.enc, fc.batch[0].first, pc.visual_prompts[0]);
    std::size_t arg = 0;
    double best = -2.0;
    for (std::size_t k = 0; k < 4; ++k) {
        const double sim = dot(v, text_feature(fc.enc, k, pc.text_prompts[0]));
        if (sim > best) { best = sim; arg = k; }
    }
    auto cold = group_class_probs(fc.enc, pc, 0, fc.batch[0].first);
    for (std::size_t k = 0; k < 4; ++k)
        CHECK(cold[k] == Catch::Approx(k == arg ? 1.0 : 0.0).margin(1e-9));
}

TEST_CASE("cross entropy loss") {
    Fixture f;
    PromptGroupSet p = f.random_prompts(3);

    FrozenEncoders flat = f.enc;
    for (auto& e : flat.class_embeddings) e = flat.class_embeddings[0];
    CHECK(ce_loss(flat, p, f.batch) == Catch::Approx(std::log(4.0)).epsilon(1e-12));

    PromptGroupSet dup = f.random_prompts(1);
    PromptGroupSet trip;
    for (int i = 0; i < 3; ++i) {
        trip.text_prompts.push_back(dup.text_prompts[0]);
        trip.visual_prompts.push_back(dup.visual_prompts[0]);
    }
    CHECK(ce_loss(f.enc, trip, f.batch) == Catch::Approx(ce_loss(f.enc, dup, f.batch)).epsilon(1e-12));

    // brute-force re-evaluation
    double brute = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        double group = 0.0;
        for (const auto& [x, y] : f.batch)
            group += -std::log(group_class_probs(f.enc, p, j, x)[y]);
        brute += group / static_cast<double>(f.batch.size());
    }
    brute /= 3.0;
    CHECK(ce_loss(f.enc, p, f.batch) == Catch::Approx(brute).epsilon(1e-12));

    CHECK_THROWS(ce_loss(f.enc, p, Batch{}));
}

TEST_CASE("diversity loss forms") {
    Fixture f;
    PromptGroupSet one = f.random_prompts(1);
    CHECK(diversity_loss(f.enc, one, f.batch, DiversityForm::COS) == 0.0);

    PromptGroupSet dup = f.random_prompts(1);
    PromptGroupSet two;
    for (int i = 0; i < 2; ++i) {
        two.text_prompts.push_back(dup.text_prompts[0]);
        two.visual_prompts.push_back(dup.visual_prompts[0]);
    }
    // identical groups: all cosines are 1, so each ordered pair contributes K + 1
    CHECK(diversity_loss(f.enc, two, f.batch, DiversityForm::COS) ==
          Catch::Approx(4.0 + 1.0).epsilon(1e-12));
    // and squared distances vanish
    CHECK(diversity_loss(f.enc, two, f.batch, DiversityForm::L2) ==
          Catch::Approx(0.0).margin(1e-12));
    CHECK(diversity_loss(f.enc, two, f.batch, DiversityForm::L1) ==
          Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("gradients vanish when nothing depends on the prompts") {
    Fixture f;
    FrozenEncoders enc0 = f.enc;
    enc0.text_prompt_inject = Mat(16, 5);
    enc0.visual_prompt_inject = Mat(16, 4);
    PromptGroupSet p = f.random_prompts(1);
    auto [loss, grads] = loss_and_gradient(enc0, p, f.batch, 0.0, DiversityForm::COS);
    for (double g : grads.text[0]) CHECK(g == 0.0);
    for (double g : grads.visual[0]) CHECK(g == 0.0);
}

TEST_CASE("duplicate groups receive identical cross-entropy gradients") {
    Fixture f;
    PromptGroupSet dup = f.random_prompts(1);
    PromptGroupSet two;
    for (int i = 0; i < 2; ++i) {
        two.text_prompts.push_back(dup.text_prompts[0]);
        two.visual_prompts.push_back(dup.visual_prompts[0]);
    }
    auto [loss, grads] = loss_and_gradient(f.enc, two, f.batch, 0.0, DiversityForm::COS);
    for (std::size_t i = 0; i < grads.text[0].size(); ++i)
        CHECK(grads.text[0][i] == Catch::Approx(grads.text[1][i]).margin(1e-12));
    for (std::size_t i = 0; i < grads.visual[0].size(); ++i)
        CHECK(grads.visual[0][i] == Catch::Approx(grads.visual[1][i]).margin(1e-12));
}

TEST_CASE("finite differences confirm the analytic gradient") {
    Fixture f;
    const double h = 1e-5;
    for (double lambda : {0.0, 1.0}) {
        PromptGroupSet p = f.random_prompts(2);
        auto [loss, grads] = loss_and_gradient(f.enc, p, f.batch, lambda, DiversityForm::COS);
        for (std::size_t j = 0; j < 2; ++j) {
            for (std::size_t i = 0; i < 5; ++i) {
                const double keep = p.text_prompts[j][i];
                p.text_prompts[j][i] = keep + h;
                const double up =
                    loss_and_gradient(f.enc, p, f.batch, lambda, DiversityForm::COS).first.total;
                p.text_prompts[j][i] = keep - h;
                const double dn =
                    loss_and_gradient(f.enc, p, f.batch, lambda, DiversityForm::COS).first.total;
                p.text_prompts[j][i] = keep;
                const double fd = (up - dn) / (2.0 * h);
                CHECK(std::abs(grads.text[j][i] - fd) <
                      1e-4 * std::max({std::abs(fd), std::abs(grads.text[j][i]), 1e-6}));
            }
        }
    }
}

TEST_CASE("local update basics") {
    Fixture f;
    FeatureBasis basis = f.basis;
    ClientDataset ds;
    ds.client_id = 0;
    ds.samples = f.batch;
    ds.n = f.batch.size();

    PromptGroupSet p = f.random_prompts(2);
    RngStream r1(1), r2(1), r3(2);
    PromptGroupSet frozen_lr =
        local_update(p, f.enc, ds, 2, 0.0, 4, 1.0, DiversityForm::COS, r1);
    CHECK(frozen_lr.text_prompts == p.text_prompts);
    CHECK(frozen_lr.visual_prompts == p.visual_prompts);

    PromptGroupSet frozen_e = local_update(p, f.enc, ds, 0, 0.1, 4, 1.0, DiversityForm::COS, r2);
    CHECK(frozen_e.text_prompts == p.text_prompts);

    // training reduces the cross entropy on a separable toy
    FrozenEncoders before = f.enc;
    const double ce0 = ce_loss(f.enc, p, f.batch);
    PromptGroupSet trained = p;
    for (int e = 0; e < 25; ++e)
        trained = local_update(trained, f.enc, ds, 2, 0.05, 4, 0.0, DiversityForm::COS, r3);
    CHECK(ce_loss(f.enc, trained, f.batch) < ce0);

    // frozen encoders stay bit-identical
    CHECK(before.text_map == f.enc.text_map);
    CHECK(before.text_prompt_inject == f.enc.text_prompt_inject);
    CHECK(before.class_embeddings == f.enc.class_embeddings);
}

TEST_CASE("ensemble prediction strategies") {
    Fixture f;
    PromptGroupSet one = f.random_prompts(1);
    const Vec& x = f.batch[0].first;
    auto pa = ensemble_predict(f.enc, one, x, InferenceStrategy::average_probs);
    auto pm = ensemble_predict(f.enc, one, x, InferenceStrategy::max_logits);
    auto pf = ensemble_predict(f.enc, one, x, InferenceStrategy::feature_avg);
    auto ps = ensemble_predict(f.enc, one, x, InferenceStrategy::single_group, 0);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(pa[k] == Catch::Approx(pm[k]).margin(1e-12));
        CHECK(pa[k] == Catch::Approx(pf[k]).margin(1e-12));
        CHECK(pa[k] == Catch::Approx(ps[k]).margin(1e-12));
    }

    PromptGroupSet p = f.random_prompts(3);
    auto avg = ensemble_predict(f.enc, p, x, InferenceStrategy::average_probs);
    std::vector<double> manual(4, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        auto q = group_class_probs(f.enc, p, j, x);
        for (std::size_t k = 0; k < 4; ++k) manual[k] += q[k] / 3.0;
    }
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(avg[k] == Catch::Approx(manual[k]).margin(1e-12));
        total += avg[k];
    }
    CHECK(total == Catch::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS(ensemble_predict(f.enc, p, x, InferenceStrategy::single_group, 9));
}
