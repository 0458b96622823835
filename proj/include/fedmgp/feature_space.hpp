#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fedmgp/linalg.hpp"
#include "fedmgp/rng.hpp"

namespace fedmgp {

/// Orthogonal feature world: a global direction u_C, client-specific
/// directions mu_c, and noise directions xi_l, all hosted in R^d.
///
/// Client directions are mu_c = sqrt(rho)*w + sqrt(1-rho)*v_c with
/// {w, v_1..v_N} orthonormal, so <mu_c, mu_c'> = rho for c != c' and every
/// mu_c is a unit vector orthogonal to u_C and to all xi_l.
struct FeatureBasis {
    std::size_t dim = 0;
    Vec global_dir;                    // u_C
    std::vector<Vec> client_dirs;      // mu_c
    std::vector<Vec> noise_dirs;       // xi_l
    double mixing_rho = 0.0;

    // orthonormal generators of the client subspace (shared + private parts)
    Vec shared_dir;                    // w
    std::vector<Vec> private_dirs;     // v_c

    std::size_t n_clients() const { return client_dirs.size(); }
    std::size_t n_noise() const { return noise_dirs.size(); }

    /// All orthonormal directions spanned so far; new structure (class
    /// prototypes, prompt directions) is drawn orthogonal to these.
    std::vector<Vec> spanned() const {
        std::vector<Vec> all;
        all.push_back(global_dir);
        all.push_back(shared_dir);
        for (const auto& v : private_dirs) all.push_back(v);
        for (const auto& x : noise_dirs) all.push_back(x);
        return all;
    }
};

/// Coefficients of a vector against the basis, from the viewpoint of one
/// client: v = beta*u_C + gamma*mu_c + sum_l phi_l*xi_l + residual.
struct Decomposition {
    double beta = 0.0;
    double gamma = 0.0;
    std::vector<double> phi;
    double residual_norm = 0.0;
    Vec residual_dir;                  // unit, or empty when residual_norm == 0
    double specific_strength = 0.0;    // sqrt(gamma^2 + sum phi^2 + residual^2)
};

namespace detail {

constexpr double kOrthoTol = 1e-10;

/// Remove components of v along each (unit) direction in basis, twice.
inline void reorthogonalize(Vec& v, const std::vector<Vec>& basis) {
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& b : basis) axpy(-dot(v, b), b, v);
}

}  // namespace detail

/// Draw a unit vector orthogonal to every vector in `existing` (assumed
/// orthonormal). Redraws on near-degenerate candidates.
inline Vec random_unit_orthogonal(std::size_t d, const std::vector<Vec>& existing,
                                  RngStream& rng) {
    if (existing.size() >= d)
        throw std::invalid_argument("random_unit_orthogonal: subspace exhausted");
    for (int attempt = 0; attempt < 64; ++attempt) {
        Vec v(d);
        for (auto& x : v) x = rng.normal();
        detail::reorthogonalize(v, existing);
        double n = norm(v);
        if (n > 1e-6) return scaled(v, 1.0 / n);
    }
    throw std::runtime_error("random_unit_orthogonal: degenerate draws");
}

/// Build the orthogonal feature world. Requires d >= 1 + n_clients + n_noise.
inline FeatureBasis build_basis(std::size_t d, std::size_t n_clients, std::size_t n_noise,
                                double mixing_rho, RngStream& rng) {
    if (n_clients == 0) throw std::invalid_argument("build_basis: need at least one client");
    if (mixing_rho < 0.0 || mixing_rho > 1.0)
        throw std::invalid_argument("build_basis: mixing_rho outside [0,1]");
    if (d < 1 + n_clients + n_noise)
        throw std::invalid_argument("build_basis: dimension too small, need d >= 1 + N + L");

    FeatureBasis basis;
    basis.dim = d;
    basis.mixing_rho = mixing_rho;

    std::vector<Vec> accepted;
    auto next_dir = [&]() {
        Vec v = random_unit_orthogonal(d, accepted, rng);
        accepted.push_back(v);
        return v;
    };

    basis.global_dir = next_dir();
    basis.shared_dir = next_dir();
    basis.private_dirs.reserve(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) basis.private_dirs.push_back(next_dir());
    basis.noise_dirs.reserve(n_noise);
    for (std::size_t l = 0; l < n_noise; ++l) basis.noise_dirs.push_back(next_dir());

    const double a = std::sqrt(mixing_rho);
    const double b = std::sqrt(1.0 - mixing_rho);
    basis.client_dirs.reserve(n_clients);
    for (std::size_t c = 0; c < n_clients; ++c) {
        Vec mu = scaled(basis.shared_dir, a);
        axpy(b, basis.private_dirs[c], mu);
        basis.client_dirs.push_back(std::move(mu));
    }
    return basis;
}

/// Project v onto the basis as seen by one client. {u_C, mu_c, xi_l} is an
/// orthonormal set, so the energy identity
/// beta^2 + gamma^2 + sum phi^2 + residual^2 = |v|^2 is exact.
inline Decomposition decompose(const Vec& v, const FeatureBasis& basis, std::size_t client_id) {
    if (v.size() != basis.dim) throw std::invalid_argument("decompose: length mismatch");
    if (client_id >= basis.n_clients()) throw std::out_of_range("decompose: bad client_id");

    Decomposition dec;
    dec.beta = dot(v, basis.global_dir);
    dec.gamma = dot(v, basis.client_dirs[client_id]);
    dec.phi.resize(basis.n_noise());
    for (std::size_t l = 0; l < basis.n_noise(); ++l) dec.phi[l] = dot(v, basis.noise_dirs[l]);

    Vec res = v;
    axpy(-dec.beta, basis.global_dir, res);
    axpy(-dec.gamma, basis.client_dirs[client_id], res);
    for (std::size_t l = 0; l < basis.n_noise(); ++l) axpy(-dec.phi[l], basis.noise_dirs[l], res);

    dec.residual_norm = norm(res);
    if (dec.residual_norm > 0.0) dec.residual_dir = scaled(res, 1.0 / dec.residual_norm);

    double spec2 = dec.gamma * dec.gamma + dec.residual_norm * dec.residual_norm;
    for (double p : dec.phi) spec2 += p * p;
    dec.specific_strength = std::sqrt(spec2);
    return dec;
}

/// Reconstruct the vector from a decomposition (inverse of decompose).
inline Vec compose(const Decomposition& dec, const FeatureBasis& basis, std::size_t client_id) {
    if (client_id >= basis.n_clients()) throw std::out_of_range("compose: bad client_id");
    if (dec.phi.size() != basis.n_noise()) throw std::invalid_argument("compose: phi arity");
    Vec v = scaled(basis.global_dir, dec.beta);
    axpy(dec.gamma, basis.client_dirs[client_id], v);
    for (std::size_t l = 0; l < basis.n_noise(); ++l) axpy(dec.phi[l], basis.noise_dirs[l], v);
    if (dec.residual_norm > 0.0 && !dec.residual_dir.empty())
        axpy(dec.residual_norm, dec.residual_dir, v);
    return v;
}

/// Data-heterogeneity metric chi_c = sum_c' <mu_c, mu_c'>; equals
/// 1 + (N-1)*rho under the mixing construction.
inline double heterogeneity(const FeatureBasis& basis, std::size_t client_id) {
    if (client_id >= basis.n_clients()) throw std::out_of_range("heterogeneity: bad client_id");
    double chi = 0.0;
    for (const auto& mu : basis.client_dirs) chi += dot(basis.client_dirs[client_id], mu);
    return chi;
}

/// Closed-form cosine similarity of a prompt c*u_C + s*w (w unit, w ⊥ u_C)
/// against u_C: c / sqrt(c^2 + s^2).
inline double theory_similarity(double c_coef, double s_coef) {
    if (c_coef == 0.0 && s_coef == 0.0)
        throw std::domain_error("theory_similarity: degenerate zero coefficients");
    return c_coef / std::sqrt(c_coef * c_coef + s_coef * s_coef);
}

}  // namespace fedmgp
