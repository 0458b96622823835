#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmgp/aggregation.hpp"
#include "fedmgp/prompt_model.hpp"
#include "fedmgp/selection.hpp"

namespace fedmgp {

enum class DataRegime { pathological, dirichlet };

/// Full experiment configuration. Defaults follow the paper-default shape:
/// G=5 groups, s=2 selected, tau_sel=1, lambda=1, lr=0.001, E=2 local epochs,
/// T=10 rounds, batch 8, full participation, dynamic strategy.
struct FederationConfig {
    std::size_t n_clients = 10;
    double participation = 1.0;
    std::size_t rounds = 10;
    std::size_t local_epochs = 2;
    std::size_t groups = 5;
    std::size_t select_s = 2;
    double tau_sel = 1.0;
    double lambda = 1.0;
    double lr = 0.001;
    std::size_t batch_size = 8;
    AggregationStrategy strategy = AggregationStrategy::dynamic;
    SelectionPolicy policy = SelectionPolicy::probabilistic;
    PairingMode pairing = PairingMode::set_sum;
    DynamicMode aggregation = DynamicMode::ordinal;
    DiversityForm diversity = DiversityForm::COS;
    bool literal_eq4 = false;
    bool coupled_selection = false;
    InferenceStrategy inference = InferenceStrategy::average_probs;
    std::uint64_t seed = 1;
    DataRegime regime = DataRegime::pathological;
    double dirichlet_alpha = 0.5;

    // synthetic world
    std::size_t n_classes = 20;
    std::size_t samples_per_class = 16;
    std::size_t eval_per_class = 8;
    std::size_t dim_d = 48;
    std::size_t dim_f = 24;
    std::size_t dim_pt = 16;
    std::size_t dim_pv = 16;
    double tau_m = 0.05;
    std::size_t n_noise = 4;
    double mixing_rho = 0.3;
    double signal_scale = 1.0;
    double client_shift = 2.0;
    double noise_sigma = 0.6;
    double init_sigma = 0.3;
    std::size_t threads = 1;

    void validate() const {
        if (n_clients == 0) throw std::invalid_argument("config: n_clients must be >= 1");
        if (participation <= 0.0 || participation > 1.0)
            throw std::invalid_argument("config: participation must be in (0,1]");
        if (rounds < 1) throw std::invalid_argument("config: rounds must be >= 1");
        if (groups < 1) throw std::invalid_argument("config: groups must be >= 1");
        if (select_s < 1 || select_s > groups)
            throw std::invalid_argument("config: select_s must satisfy 1 <= s <= groups");
        if (tau_sel <= 0.0) throw std::invalid_argument("config: tau_sel must be positive");
        if (tau_m <= 0.0) throw std::invalid_argument("config: tau_m must be positive");
        if (lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
        if (batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
        if (dirichlet_alpha <= 0.0)
            throw std::invalid_argument("config: dirichlet_alpha must be positive");
        if (threads == 0) throw std::invalid_argument("config: threads must be >= 1");
        if (pairing == PairingMode::slotwise && aggregation == DynamicMode::ordinal)
            throw std::invalid_argument(
                "config: pairing=slotwise needs G global slots; use a slotwise aggregation mode");
        const std::size_t needed = 1 + (1 + n_clients) + n_noise + n_classes;
        if (dim_d < needed)
            throw std::invalid_argument("config: dim_d too small for clients+noise+classes, need " +
                                        std::to_string(needed));
        if (dim_f > dim_d) throw std::invalid_argument("config: dim_f must be <= dim_d");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

template <typename T>
T parse_number(const std::string& value, const std::string& key, int line) {
    std::istringstream iss(value);
    T out;
    iss >> out;
    if (iss.fail() || !(iss >> std::ws).eof())
        throw std::invalid_argument("config line " + std::to_string(line) + ": bad value for '" +
                                    key + "': " + value);
    return out;
}

inline bool parse_bool(const std::string& value, const std::string& key, int line) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config line " + std::to_string(line) + ": bad bool for '" + key +
                                "': " + value);
}

}  // namespace detail

inline AggregationStrategy parse_strategy(const std::string& v) {
    if (v == "full") return AggregationStrategy::full;
    if (v == "fixed") return AggregationStrategy::fixed;
    if (v == "dynamic") return AggregationStrategy::dynamic;
    throw std::invalid_argument("unknown strategy: " + v);
}

inline SelectionPolicy parse_policy(const std::string& v) {
    if (v == "probabilistic") return SelectionPolicy::probabilistic;
    if (v == "top_s") return SelectionPolicy::top_s;
    if (v == "random") return SelectionPolicy::random;
    if (v == "all") return SelectionPolicy::all;
    throw std::invalid_argument("unknown policy: " + v);
}

inline PairingMode parse_pairing(const std::string& v) {
    if (v == "set_sum") return PairingMode::set_sum;
    if (v == "slotwise") return PairingMode::slotwise;
    throw std::invalid_argument("unknown pairing mode: " + v);
}

inline DynamicMode parse_dynamic_mode(const std::string& v) {
    if (v == "ordinal") return DynamicMode::ordinal;
    if (v == "slotwise_literal") return DynamicMode::slotwise_literal;
    if (v == "slotwise_renormalized") return DynamicMode::slotwise_renormalized;
    throw std::invalid_argument("unknown aggregation mode: " + v);
}

inline DiversityForm parse_diversity(const std::string& v) {
    if (v == "COS") return DiversityForm::COS;
    if (v == "L1") return DiversityForm::L1;
    if (v == "L2") return DiversityForm::L2;
    throw std::invalid_argument("unknown diversity form: " + v);
}

inline InferenceStrategy parse_inference(const std::string& v) {
    if (v == "average_probs") return InferenceStrategy::average_probs;
    if (v == "max_logits") return InferenceStrategy::max_logits;
    if (v == "feature_avg") return InferenceStrategy::feature_avg;
    throw std::invalid_argument("unknown inference strategy: " + v);
}

inline DataRegime parse_regime(const std::string& v) {
    if (v == "pathological") return DataRegime::pathological;
    if (v == "dirichlet") return DataRegime::dirichlet;
    throw std::invalid_argument("unknown data regime: " + v);
}

/// Flat `key = value` format, '#' comments, unknown keys are errors, missing
/// keys take the struct defaults.
inline FederationConfig parse_config_stream(std::istream& in) {
    FederationConfig cfg;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = raw;
        auto hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        s = detail::trim(s);
        if (s.empty()) continue;
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(line) +
                                        ": expected 'key = value'");
        std::string key = detail::trim(s.substr(0, eq));
        std::string value = detail::trim(s.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::invalid_argument("config line " + std::to_string(line) +
                                        ": empty key or value");
        try {
            if (key == "n_clients") cfg.n_clients = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "participation") cfg.participation = detail::parse_number<double>(value, key, line);
            else if (key == "rounds") cfg.rounds = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "local_epochs") cfg.local_epochs = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "groups") cfg.groups = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "select_s") cfg.select_s = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "tau_sel") cfg.tau_sel = detail::parse_number<double>(value, key, line);
            else if (key == "lambda") cfg.lambda = detail::parse_number<double>(value, key, line);
            else if (key == "lr") cfg.lr = detail::parse_number<double>(value, key, line);
            else if (key == "batch_size") cfg.batch_size = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "strategy") cfg.strategy = parse_strategy(value);
            else if (key == "policy") cfg.policy = parse_policy(value);
            else if (key == "pairing") cfg.pairing = parse_pairing(value);
            else if (key == "aggregation") cfg.aggregation = parse_dynamic_mode(value);
            else if (key == "diversity") cfg.diversity = parse_diversity(value);
            else if (key == "literal_eq4") cfg.literal_eq4 = detail::parse_bool(value, key, line);
            else if (key == "coupled_selection") cfg.coupled_selection = detail::parse_bool(value, key, line);
            else if (key == "inference") cfg.inference = parse_inference(value);
            else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(value, key, line);
            else if (key == "regime") cfg.regime = parse_regime(value);
            else if (key == "dirichlet_alpha") cfg.dirichlet_alpha = detail::parse_number<double>(value, key, line);
            else if (key == "n_classes") cfg.n_classes = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "samples_per_class") cfg.samples_per_class = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "eval_per_class") cfg.eval_per_class = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "dim_d") cfg.dim_d = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "dim_f") cfg.dim_f = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "dim_pt") cfg.dim_pt = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "dim_pv") cfg.dim_pv = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "tau_m") cfg.tau_m = detail::parse_number<double>(value, key, line);
            else if (key == "n_noise") cfg.n_noise = detail::parse_number<std::size_t>(value, key, line);
            else if (key == "mixing_rho") cfg.mixing_rho = detail::parse_number<double>(value, key, line);
            else if (key == "signal_scale") cfg.signal_scale = detail::parse_number<double>(value, key, line);
            else if (key == "client_shift") cfg.client_shift = detail::parse_number<double>(value, key, line);
            else if (key == "noise_sigma") cfg.noise_sigma = detail::parse_number<double>(value, key, line);
            else if (key == "init_sigma") cfg.init_sigma = detail::parse_number<double>(value, key, line);
            else if (key == "threads") cfg.threads = detail::parse_number<std::size_t>(value, key, line);
            else
                throw std::invalid_argument("config line " + std::to_string(line) +
                                            ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw;
        }
    }
    cfg.validate();
    return cfg;
}

inline FederationConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config file not found: " + path);
    return parse_config_stream(in);
}

inline std::string to_string(SelectionPolicy p) {
    switch (p) {
        case SelectionPolicy::probabilistic: return "probabilistic";
        case SelectionPolicy::top_s: return "top_s";
        case SelectionPolicy::random: return "random";
        case SelectionPolicy::all: return "all";
    }
    return "?";
}

inline std::string to_string(DynamicMode m) {
    switch (m) {
        case DynamicMode::ordinal: return "ordinal";
        case DynamicMode::slotwise_literal: return "slotwise_literal";
        case DynamicMode::slotwise_renormalized: return "slotwise_renormalized";
    }
    return "?";
}

inline std::string to_string(DiversityForm f) {
    switch (f) {
        case DiversityForm::COS: return "COS";
        case DiversityForm::L1: return "L1";
        case DiversityForm::L2: return "L2";
    }
    return "?";
}

inline std::string to_string(PairingMode m) {
    return m == PairingMode::set_sum ? "set_sum" : "slotwise";
}

inline std::string to_string(DataRegime r) {
    return r == DataRegime::pathological ? "pathological" : "dirichlet";
}

inline std::string to_string(InferenceStrategy s) {
    switch (s) {
        case InferenceStrategy::average_probs: return "average_probs";
        case InferenceStrategy::max_logits: return "max_logits";
        case InferenceStrategy::feature_avg: return "feature_avg";
        case InferenceStrategy::single_group: return "single_group";
    }
    return "?";
}

}  // namespace fedmgp
