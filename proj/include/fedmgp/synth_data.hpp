#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedmgp/feature_space.hpp"
#include "fedmgp/linalg.hpp"
#include "fedmgp/rng.hpp"

namespace fedmgp {

/// Class prototypes plus the base/novel class split.
/// prototype(k) = u_C + q_k where the q_k are orthonormal and orthogonal to
/// every direction the basis already spans, so classes are separable through
/// shared and class-specific structure alike.
struct SyntheticTask {
    std::size_t n_classes = 0;
    std::vector<Vec> prototypes;
    std::vector<Vec> class_dirs;
    std::vector<std::size_t> base_classes;
    std::vector<std::size_t> novel_classes;
};

struct ClientDataset {
    std::size_t client_id = 0;
    std::vector<std::pair<Vec, std::size_t>> samples;  // (x, y)
    std::size_t n = 0;
    std::vector<double> class_proportions;
};

/// Disjoint near-equal assignment of base classes to clients.
struct PathologicalSplit {
    std::vector<std::size_t> base_classes;
    std::vector<std::size_t> novel_classes;
    std::vector<std::vector<std::size_t>> client_classes;  // per client, base class ids
};

/// Per-class Dirichlet split of samples across clients.
struct DirichletPartition {
    // proportions[k][c] and counts[k][c]; per-class counts sum exactly to
    // total_per_class by largest-remainder rounding.
    std::vector<std::vector<double>> proportions;
    std::vector<std::vector<std::size_t>> counts;
};

inline SyntheticTask make_task(std::size_t n_classes, const FeatureBasis& basis,
                               RngStream& rng) {
    if (n_classes == 0) throw std::invalid_argument("make_task: need at least one class");
    SyntheticTask task;
    task.n_classes = n_classes;
    std::vector<Vec> existing = basis.spanned();
    for (std::size_t k = 0; k < n_classes; ++k) {
        Vec q = random_unit_orthogonal(basis.dim, existing, rng);
        existing.push_back(q);
        Vec proto = basis.global_dir;
        axpy(1.0, q, proto);
        task.class_dirs.push_back(std::move(q));
        task.prototypes.push_back(std::move(proto));
    }
    return task;
}

inline PathologicalSplit pathological_split(std::size_t n_classes, std::size_t n_clients,
                                            RngStream& rng) {
    if (n_clients == 0) throw std::invalid_argument("pathological_split: no clients");
    const std::size_t n_base = (n_classes + 1) / 2;
    if (n_base < n_clients)
        throw std::invalid_argument(
            "pathological_split: infeasible, fewer base classes than clients");

    std::vector<std::size_t> order(n_classes);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    PathologicalSplit split;
    split.base_classes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_base));
    split.novel_classes.assign(order.begin() + static_cast<std::ptrdiff_t>(n_base), order.end());
    std::sort(split.base_classes.begin(), split.base_classes.end());
    std::sort(split.novel_classes.begin(), split.novel_classes.end());

    // round-robin over a shuffled copy keeps group sizes within 1 of each other
    std::vector<std::size_t> pool = split.base_classes;
    rng.shuffle(pool);
    split.client_classes.assign(n_clients, {});
    for (std::size_t i = 0; i < pool.size(); ++i)
        split.client_classes[i % n_clients].push_back(pool[i]);
    for (auto& cls : split.client_classes) std::sort(cls.begin(), cls.end());
    return split;
}

inline DirichletPartition dirichlet_partition(std::size_t n_classes, std::size_t n_clients,
                                              double alpha, std::size_t total_per_class,
                                              RngStream& rng) {
    if (alpha <= 0.0) throw std::invalid_argument("dirichlet_partition: alpha must be positive");
    if (total_per_class == 0)
        throw std::invalid_argument("dirichlet_partition: total_per_class must be >= 1");
    DirichletPartition part;
    part.proportions.resize(n_classes);
    part.counts.resize(n_classes);
    for (std::size_t k = 0; k < n_classes; ++k) {
        std::vector<double> p = rng.dirichlet(alpha, n_clients);
        // largest-remainder rounding, conserves the class total exactly
        std::vector<std::size_t> cnt(n_clients, 0);
        std::vector<std::pair<double, std::size_t>> rem(n_clients);
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < n_clients; ++c) {
            double exact = p[c] * static_cast<double>(total_per_class);
            cnt[c] = static_cast<std::size_t>(std::floor(exact));
            assigned += cnt[c];
            rem[c] = {exact - std::floor(exact), c};
        }
        std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t i = 0; assigned < total_per_class; ++i, ++assigned)
            ++cnt[rem[i % n_clients].second];
        part.proportions[k] = std::move(p);
        part.counts[k] = std::move(cnt);
    }
    return part;
}

/// Sample model: x = signal_scale*prototype(y) + client_shift*mu_c + noise_sigma*sum_l eta_l*xi_l.
/// `allowed_classes`, when nonempty, restricts which classes the client may
/// hold (pathological mode); counts on other classes are an error.
inline ClientDataset generate_client_data(const SyntheticTask& task, const FeatureBasis& basis,
                                          std::size_t client_id,
                                          const std::vector<std::size_t>& counts,
                                          double signal_scale, double client_shift,
                                          double noise_sigma, RngStream& rng,
                                          const std::vector<std::size_t>& allowed_classes = {}) {
    if (client_id >= basis.n_clients())
        throw std::out_of_range("generate_client_data: bad client_id");
    if (counts.size() != task.n_classes)
        throw std::invalid_argument("generate_client_data: counts arity");
    if (!allowed_classes.empty()) {
        for (std::size_t k = 0; k < counts.size(); ++k) {
            if (counts[k] > 0 &&
                std::find(allowed_classes.begin(), allowed_classes.end(), k) ==
                    allowed_classes.end())
                throw std::invalid_argument("generate_client_data: class not assigned to client");
        }
    }

    ClientDataset ds;
    ds.client_id = client_id;
    ds.class_proportions.assign(task.n_classes, 0.0);
    for (std::size_t k = 0; k < task.n_classes; ++k) {
        for (std::size_t i = 0; i < counts[k]; ++i) {
            Vec x = scaled(task.prototypes[k], signal_scale);
            axpy(client_shift, basis.client_dirs[client_id], x);
            for (const auto& xi : basis.noise_dirs) axpy(noise_sigma * rng.normal(), xi, x);
            ds.samples.emplace_back(std::move(x), k);
        }
    }
    ds.n = ds.samples.size();
    if (ds.n > 0) {
        for (const auto& [x, y] : ds.samples)
            ds.class_proportions[y] += 1.0 / static_cast<double>(ds.n);
    }
    return ds;
}

/// Columnar text format: header row, then one row per sample with
/// client_id, y, and the d feature values.
inline void write_dataset(std::ostream& os, const ClientDataset& ds, std::size_t dim) {
    os << "client_id,y";
    for (std::size_t i = 0; i < dim; ++i) os << ",x" << i;
    os << "\n";
    os.precision(9);
    for (const auto& [x, y] : ds.samples) {
        os << ds.client_id << "," << y;
        for (double v : x) os << "," << v;
        os << "\n";
    }
}

}  // namespace fedmgp
