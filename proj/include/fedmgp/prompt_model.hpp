#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedmgp/linalg.hpp"
#include "fedmgp/rng.hpp"
#include "fedmgp/synth_data.hpp"

namespace fedmgp {

/// Frozen synthetic two-tower encoder. Prompts perturb the encoder input
/// additively: text tower sees e_k + U*p_t, image tower sees x + V*p_v, and
/// both are projected by a shared orthonormal map and normalized, which keeps
/// the two modalities aligned the way a contrastively trained backbone is.
struct FrozenEncoders {
    Mat text_map;                   // W_g: d_f x d
    Mat image_map;                  // W_f: d_f x d
    Mat text_prompt_inject;         // U: d x d_pt
    Mat visual_prompt_inject;       // V: d x d_pv
    std::vector<Vec> class_embeddings;  // e_k, length d
    double model_temperature = 0.07;

    std::size_t d() const { return text_map.cols(); }
    std::size_t d_f() const { return text_map.rows(); }
    std::size_t n_classes() const { return class_embeddings.size(); }
};

struct PromptGroupSet {
    std::vector<Vec> text_prompts;    // G vectors, length d_pt
    std::vector<Vec> visual_prompts;  // G vectors, length d_pv

    std::size_t n_groups() const { return text_prompts.size(); }
};

struct LossBreakdown {
    double ce = 0.0;
    double div = 0.0;
    double total = 0.0;
    double lambda = 0.0;
};

enum class DiversityForm { COS, L1, L2 };

enum class InferenceStrategy { average_probs, max_logits, feature_avg, single_group };

inline Mat random_matrix(std::size_t rows, std::size_t cols, double sigma, RngStream& rng) {
    Mat m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = sigma * rng.normal();
    return m;
}

/// Matrix with orthonormal rows (random subspace projection).
inline Mat random_orthonormal_rows(std::size_t rows, std::size_t cols, RngStream& rng) {
    if (rows > cols) throw std::invalid_argument("random_orthonormal_rows: rows > cols");
    std::vector<Vec> basis;
    Mat m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        Vec v = random_unit_orthogonal(cols, basis, rng);
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = v[c];
        basis.push_back(std::move(v));
    }
    return m;
}

/// Shared projection for both towers; class embeddings are the task
/// prototypes, so the zero-prompt model already has zero-shot structure.
inline FrozenEncoders make_encoders(const SyntheticTask& task, std::size_t d, std::size_t d_f,
                                    std::size_t d_pt, std::size_t d_pv, double tau_m,
                                    RngStream& rng) {
    if (tau_m <= 0.0) throw std::invalid_argument("make_encoders: tau_m must be positive");
    FrozenEncoders enc;
    enc.text_map = random_orthonormal_rows(d_f, d, rng);
    enc.image_map = enc.text_map;
    enc.text_prompt_inject = random_matrix(d, d_pt, 1.0 / std::sqrt(static_cast<double>(d_pt)), rng);
    enc.visual_prompt_inject =
        random_matrix(d, d_pv, 1.0 / std::sqrt(static_cast<double>(d_pv)), rng);
    enc.class_embeddings = task.prototypes;
    enc.model_temperature = tau_m;
    return enc;
}

inline Vec text_feature(const FrozenEncoders& enc, std::size_t class_id, const Vec& p_t) {
    if (class_id >= enc.n_classes()) throw std::out_of_range("text_feature: bad class id");
    Vec a = enc.class_embeddings[class_id];
    axpy(1.0, matvec(enc.text_prompt_inject, p_t), a);
    return normalized(matvec(enc.text_map, a));
}

inline Vec image_feature(const FrozenEncoders& enc, const Vec& x, const Vec& p_v) {
    Vec a = x;
    axpy(1.0, matvec(enc.visual_prompt_inject, p_v), a);
    return normalized(matvec(enc.image_map, a));
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

inline std::vector<double> group_class_probs(const FrozenEncoders& enc,
                                             const PromptGroupSet& prompts, std::size_t j,
                                             const Vec& x) {
    if (j >= prompts.n_groups()) throw std::out_of_range("group_class_probs: bad group index");
    const Vec v = image_feature(enc, x, prompts.visual_prompts[j]);
    std::vector<double> logits(enc.n_classes());
    for (std::size_t k = 0; k < enc.n_classes(); ++k)
        logits[k] = dot(v, text_feature(enc, k, prompts.text_prompts[j])) / enc.model_temperature;
    return softmax(logits);
}

using Batch = std::vector<std::pair<Vec, std::size_t>>;

inline double ce_loss(const FrozenEncoders& enc, const PromptGroupSet& prompts,
                      const Batch& batch) {
    if (batch.empty()) throw std::invalid_argument("ce_loss: empty batch");
    const std::size_t G = prompts.n_groups();
    double total = 0.0;
    for (std::size_t j = 0; j < G; ++j) {
        double group = 0.0;
        for (const auto& [x, y] : batch) {
            auto p = group_class_probs(enc, prompts, j, x);
            group += -std::log(std::max(p[y], 1e-300));
        }
        total += group / static_cast<double>(batch.size());
    }
    return total / static_cast<double>(G);
}

namespace detail {

// pairwise feature score and its gradient wrt the first argument (unit vectors)
inline double pair_score(const Vec& a, const Vec& b, DiversityForm form) {
    switch (form) {
        case DiversityForm::COS: return dot(a, b);
        case DiversityForm::L2: {
            Vec dv = sub(a, b);
            return -dot(dv, dv);
        }
        case DiversityForm::L1: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
            return -s;
        }
    }
    return 0.0;
}

inline Vec pair_score_grad(const Vec& a, const Vec& b, DiversityForm form) {
    switch (form) {
        case DiversityForm::COS: return b;
        case DiversityForm::L2: return scaled(sub(b, a), 2.0);
        case DiversityForm::L1: {
            Vec g(a.size());
            for (std::size_t i = 0; i < a.size(); ++i)
                g[i] = (a[i] > b[i]) ? -1.0 : (a[i] < b[i] ? 1.0 : 0.0);
            return g;
        }
    }
    return Vec(a.size(), 0.0);
}

// forward caches for one group
struct GroupForward {
    std::vector<Vec> text_feat;       // K x d_f, unit
    std::vector<double> text_znorm;   // |z| before normalization
    std::vector<Vec> image_feat;      // B x d_f, unit
    std::vector<double> image_znorm;
};

inline GroupForward forward_group(const FrozenEncoders& enc, const PromptGroupSet& prompts,
                                  std::size_t j, const Batch& batch) {
    GroupForward f;
    const std::size_t K = enc.n_classes();
    f.text_feat.resize(K);
    f.text_znorm.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        Vec a = enc.class_embeddings[k];
        axpy(1.0, matvec(enc.text_prompt_inject, prompts.text_prompts[j]), a);
        Vec z = matvec(enc.text_map, a);
        f.text_znorm[k] = norm(z);
        if (f.text_znorm[k] < 1e-12) throw std::domain_error("forward_group: degenerate text feature");
        f.text_feat[k] = scaled(z, 1.0 / f.text_znorm[k]);
    }
    f.image_feat.resize(batch.size());
    f.image_znorm.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Vec a = batch[i].first;
        axpy(1.0, matvec(enc.visual_prompt_inject, prompts.visual_prompts[j]), a);
        Vec z = matvec(enc.image_map, a);
        f.image_znorm[i] = norm(z);
        if (f.image_znorm[i] < 1e-12)
            throw std::domain_error("forward_group: degenerate image feature");
        f.image_feat[i] = scaled(z, 1.0 / f.image_znorm[i]);
    }
    return f;
}

// backprop an upstream feature gradient g through normalize(W a) down to the
// prompt: returns M^T W^T ((I - f f^T) g / znorm)
inline Vec feature_grad_to_prompt(const Mat& w, const Mat& inject, const Vec& feat, double znorm,
                                  const Vec& g) {
    Vec gz = g;
    axpy(-dot(feat, g), feat, gz);
    for (auto& v : gz) v /= znorm;
    return matTvec(inject, matTvec(w, gz));
}

}  // namespace detail

/// Diversity score over ordered group pairs; the default forms are the mean
/// over pairs of the quantity being minimized (prose reading of the loss).
/// `literal_eq4` switches the COS form to the literal sum of (1 - cos).
inline double diversity_loss(const FrozenEncoders& enc, const PromptGroupSet& prompts,
                             const Batch& batch, DiversityForm form, bool literal_eq4 = false) {
    if (batch.empty()) throw std::invalid_argument("diversity_loss: empty batch");
    const std::size_t G = prompts.n_groups();
    if (G < 2) return 0.0;
    const std::size_t B = batch.size();
    const std::size_t K = enc.n_classes();

    std::vector<detail::GroupForward> fwd(G);
    for (std::size_t j = 0; j < G; ++j) fwd[j] = detail::forward_group(enc, prompts, j, batch);

    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t j = 0; j < G; ++j) {
        for (std::size_t jp = 0; jp < G; ++jp) {
            if (j == jp) continue;
            ++pairs;
            double term = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                double c = detail::pair_score(fwd[j].text_feat[k], fwd[jp].text_feat[k], form);
                term += literal_eq4 ? (1.0 - c) : c;
            }
            double img = 0.0;
            for (std::size_t i = 0; i < B; ++i)
                img += detail::pair_score(fwd[j].image_feat[i], fwd[jp].image_feat[i], form);
            img /= static_cast<double>(B);
            term += literal_eq4 ? (1.0 - img) : img;
            total += term;
        }
    }
    return literal_eq4 ? total : total / static_cast<double>(pairs);
}

struct PromptGradients {
    std::vector<Vec> text;    // G x d_pt
    std::vector<Vec> visual;  // G x d_pv
};

/// Analytic gradients of total = CE + lambda * div with respect to all 2G
/// prompt vectors. Frozen parameters never receive gradients.
inline std::pair<LossBreakdown, PromptGradients> loss_and_gradient(
    const FrozenEncoders& enc, const PromptGroupSet& prompts, const Batch& batch, double lambda,
    DiversityForm form, bool literal_eq4 = false) {
    if (batch.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
    const std::size_t G = prompts.n_groups();
    const std::size_t B = batch.size();
    const std::size_t K = enc.n_classes();
    const double tau = enc.model_temperature;

    std::vector<detail::GroupForward> fwd(G);
    for (std::size_t j = 0; j < G; ++j) fwd[j] = detail::forward_group(enc, prompts, j, batch);

    PromptGradients grads;
    grads.text.assign(G, Vec(prompts.text_prompts.empty() ? 0 : prompts.text_prompts[0].size(), 0.0));
    grads.visual.assign(G,
                        Vec(prompts.visual_prompts.empty() ? 0 : prompts.visual_prompts[0].size(), 0.0));

    // ---- cross-entropy ----
    double ce = 0.0;
    const double ce_scale = 1.0 / (static_cast<double>(G) * static_cast<double>(B));
    for (std::size_t j = 0; j < G; ++j) {
        // per-class accumulated gradient on the text feature (text features
        // are shared across the batch within a group)
        std::vector<Vec> text_feat_grad(K, Vec(enc.d_f(), 0.0));
        for (std::size_t i = 0; i < B; ++i) {
            const std::size_t y = batch[i].second;
            std::vector<double> logits(K);
            for (std::size_t k = 0; k < K; ++k)
                logits[k] = dot(fwd[j].image_feat[i], fwd[j].text_feat[k]) / tau;
            auto p = softmax(logits);
            ce += -std::log(std::max(p[y], 1e-300)) * ce_scale;

            Vec img_feat_grad(enc.d_f(), 0.0);
            for (std::size_t k = 0; k < K; ++k) {
                const double coef = (p[k] - (k == y ? 1.0 : 0.0)) * ce_scale / tau;
                axpy(coef, fwd[j].text_feat[k], img_feat_grad);
                axpy(coef, fwd[j].image_feat[i], text_feat_grad[k]);
            }
            axpy(1.0,
                 detail::feature_grad_to_prompt(enc.image_map, enc.visual_prompt_inject,
                                                fwd[j].image_feat[i], fwd[j].image_znorm[i],
                                                img_feat_grad),
                 grads.visual[j]);
        }
        for (std::size_t k = 0; k < K; ++k)
            axpy(1.0,
                 detail::feature_grad_to_prompt(enc.text_map, enc.text_prompt_inject,
                                                fwd[j].text_feat[k], fwd[j].text_znorm[k],
                                                text_feat_grad[k]),
                 grads.text[j]);
    }

    // ---- diversity ----
    double div = 0.0;
    if (G >= 2 && lambda != 0.0) {
        const std::size_t pairs = G * (G - 1);
        const double pair_scale = literal_eq4 ? 1.0 : 1.0 / static_cast<double>(pairs);
        const double sign = literal_eq4 ? -1.0 : 1.0;  // d(1 - c)/dc = -1
        std::vector<Vec> text_feat_grad(G * K, Vec(enc.d_f(), 0.0));
        std::vector<Vec> image_feat_grad(G * B, Vec(enc.d_f(), 0.0));
        for (std::size_t j = 0; j < G; ++j) {
            for (std::size_t jp = 0; jp < G; ++jp) {
                if (j == jp) continue;
                double term = 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    const Vec& a = fwd[j].text_feat[k];
                    const Vec& b = fwd[jp].text_feat[k];
                    double c = detail::pair_score(a, b, form);
                    term += literal_eq4 ? (1.0 - c) : c;
                    axpy(sign * pair_scale * lambda, detail::pair_score_grad(a, b, form),
                         text_feat_grad[j * K + k]);
                    axpy(sign * pair_scale * lambda, detail::pair_score_grad(b, a, form),
                         text_feat_grad[jp * K + k]);
                }
                double img = 0.0;
                for (std::size_t i = 0; i < B; ++i) {
                    const Vec& a = fwd[j].image_feat[i];
                    const Vec& b = fwd[jp].image_feat[i];
                    img += detail::pair_score(a, b, form);
                    const double w = sign * pair_scale * lambda / static_cast<double>(B);
                    axpy(w, detail::pair_score_grad(a, b, form), image_feat_grad[j * B + i]);
                    axpy(w, detail::pair_score_grad(b, a, form), image_feat_grad[jp * B + i]);
                }
                img /= static_cast<double>(B);
                term += literal_eq4 ? (1.0 - img) : img;
                div += term * pair_scale;
            }
        }
        // NOTE: the gradient above double-counts each unordered pair exactly the
        // way the loss does (ordered pairs), so loss and gradient stay consistent.
        for (std::size_t j = 0; j < G; ++j) {
            for (std::size_t k = 0; k < K; ++k)
                axpy(1.0,
                     detail::feature_grad_to_prompt(enc.text_map, enc.text_prompt_inject,
                                                    fwd[j].text_feat[k], fwd[j].text_znorm[k],
                                                    text_feat_grad[j * K + k]),
                     grads.text[j]);
            for (std::size_t i = 0; i < B; ++i)
                axpy(1.0,
                     detail::feature_grad_to_prompt(enc.image_map, enc.visual_prompt_inject,
                                                    fwd[j].image_feat[i], fwd[j].image_znorm[i],
                                                    image_feat_grad[j * B + i]),
                     grads.visual[j]);
        }
    } else if (G >= 2) {
        div = diversity_loss(enc, prompts, batch, form, literal_eq4);
    }

    LossBreakdown loss;
    loss.ce = ce;
    loss.div = div;
    loss.lambda = lambda;
    loss.total = ce + lambda * div;
    return {loss, grads};
}

/// E epochs of shuffled mini-batch SGD on the total loss; the encoder is
/// read-only throughout.
inline PromptGroupSet local_update(PromptGroupSet prompts, const FrozenEncoders& enc,
                                   const ClientDataset& dataset, std::size_t epochs, double lr,
                                   std::size_t batch_size, double lambda, DiversityForm form,
                                   RngStream& rng, bool literal_eq4 = false) {
    if (dataset.samples.empty()) throw std::invalid_argument("local_update: empty dataset");
    if (batch_size == 0) throw std::invalid_argument("local_update: batch_size must be >= 1");
    const std::size_t n = dataset.samples.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t end = std::min(start + batch_size, n);
            Batch batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(dataset.samples[order[i]]);
            auto [loss, grads] = loss_and_gradient(enc, prompts, batch, lambda, form, literal_eq4);
            for (std::size_t j = 0; j < prompts.n_groups(); ++j) {
                axpy(-lr, grads.text[j], prompts.text_prompts[j]);
                axpy(-lr, grads.visual[j], prompts.visual_prompts[j]);
            }
        }
    }
    return prompts;
}

/// Group-ensemble prediction. average_probs is the arithmetic mean of the
/// per-group probability vectors; the other strategies are ablation variants.
inline std::vector<double> ensemble_predict(const FrozenEncoders& enc,
                                            const PromptGroupSet& prompts, const Vec& x,
                                            InferenceStrategy strategy,
                                            std::size_t single_group_index = 0) {
    const std::size_t G = prompts.n_groups();
    const std::size_t K = enc.n_classes();
    switch (strategy) {
        case InferenceStrategy::average_probs: {
            std::vector<double> avg(K, 0.0);
            for (std::size_t j = 0; j < G; ++j) {
                auto p = group_class_probs(enc, prompts, j, x);
                for (std::size_t k = 0; k < K; ++k) avg[k] += p[k] / static_cast<double>(G);
            }
            return avg;
        }
        case InferenceStrategy::max_logits: {
            std::vector<double> logits(K, -1e300);
            for (std::size_t j = 0; j < G; ++j) {
                const Vec v = image_feature(enc, x, prompts.visual_prompts[j]);
                for (std::size_t k = 0; k < K; ++k) {
                    double sim = dot(v, text_feature(enc, k, prompts.text_prompts[j]));
                    logits[k] = std::max(logits[k], sim);
                }
            }
            for (auto& l : logits) l /= enc.model_temperature;
            return softmax(logits);
        }
        case InferenceStrategy::feature_avg: {
            Vec v_avg(enc.d_f(), 0.0);
            for (std::size_t j = 0; j < G; ++j)
                axpy(1.0 / static_cast<double>(G), image_feature(enc, x, prompts.visual_prompts[j]),
                     v_avg);
            v_avg = normalized(v_avg);
            std::vector<double> logits(K);
            for (std::size_t k = 0; k < K; ++k) {
                Vec t_avg(enc.d_f(), 0.0);
                for (std::size_t j = 0; j < G; ++j)
                    axpy(1.0 / static_cast<double>(G), text_feature(enc, k, prompts.text_prompts[j]),
                         t_avg);
                logits[k] = dot(v_avg, normalized(t_avg)) / enc.model_temperature;
            }
            return softmax(logits);
        }
        case InferenceStrategy::single_group: {
            if (single_group_index >= G)
                throw std::out_of_range("ensemble_predict: bad single_group index");
            return group_class_probs(enc, prompts, single_group_index, x);
        }
    }
    throw std::invalid_argument("ensemble_predict: unknown strategy");
}

/// Trainable scalar count per client: G * (d_pt + d_pv).
inline std::size_t trainable_parameter_count(const PromptGroupSet& prompts) {
    std::size_t n = 0;
    for (const auto& p : prompts.text_prompts) n += p.size();
    for (const auto& p : prompts.visual_prompts) n += p.size();
    return n;
}

}  // namespace fedmgp
