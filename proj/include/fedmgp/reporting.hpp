#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedmgp/analysis.hpp"
#include "fedmgp/config.hpp"
#include "fedmgp/federation.hpp"

namespace fedmgp {

inline constexpr const char* kMetricsSchema = "fedmgp.metrics.v1";
inline constexpr const char* kTraceSchema = "fedmgp.trace.v1";
inline constexpr const char* kMatrixSchema = "fedmgp.matrix.v1";
inline constexpr const char* kCompareSchema = "fedmgp.compare.v1";
inline constexpr const char* kVerifySchema = "fedmgp.verify.v1";
inline constexpr const char* kReportSchema = "fedmgp.report.v1";
inline constexpr const char* kVersion = "0.1.0";

/// 9 significant digits; enough to make digests meaningful without printing
/// platform-dependent trailing noise.
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(ss.str())));
    return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::string metrics_csv(const std::vector<RoundRecord>& records,
                               AggregationStrategy strategy) {
    std::ostringstream out;
    out << "# schema=" << kMetricsSchema << "\n";
    out << "round,client,strategy,loss_ce,loss_div,acc_local,acc_base,acc_novel,hm,cm,"
           "min_snr,alpha_g,uplink_scalars\n";
    const std::string label = to_string(strategy);
    for (const auto& rec : records) {
        for (const auto& cm : rec.client_metrics) {
            out << rec.round << ',' << cm.client << ',' << label << ',' << fmt(cm.loss.ce) << ','
                << fmt(cm.loss.div) << ',' << fmt(cm.eval.local) << ',' << fmt(cm.eval.base) << ','
                << fmt(cm.eval.novel) << ',' << fmt(cm.eval.hm) << ',' << fmt(cm.eval.cm) << ','
                << fmt(rec.min_snr) << ',' << fmt(rec.alpha_g) << ',' << rec.uplink_total << "\n";
        }
        out << rec.round << ",mean," << label << ',' << fmt(rec.mean_ce) << ','
            << fmt(rec.mean_div) << ',' << fmt(rec.mean_local) << ',' << fmt(rec.mean_base) << ','
            << fmt(rec.mean_novel) << ',' << fmt(rec.mean_hm) << ',' << fmt(rec.mean_cm) << ','
            << fmt(rec.min_snr) << ',' << fmt(rec.alpha_g) << ',' << rec.uplink_total << "\n";
    }
    return out.str();
}

inline std::string trace_csv(const std::vector<RoundRecord>& records) {
    std::ostringstream out;
    out << "# schema=" << kTraceSchema << "\n";
    out << "round,client,modality,group,score,prob,selected\n";
    for (const auto& rec : records)
        for (const auto& e : rec.trace)
            out << e.round << ',' << e.client << ','
                << (e.modality == Modality::text ? "text" : "visual") << ',' << e.group << ','
                << fmt(e.score) << ',' << fmt(e.prob) << ',' << (e.selected ? 1 : 0) << "\n";
    return out.str();
}

inline std::string matrix_csv(const Mat& m) {
    std::ostringstream out;
    out << "# schema=" << kMatrixSchema << "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            out << fmt(m(r, c));
        }
        out << "\n";
    }
    return out.str();
}

inline nlohmann::json config_to_json(const FederationConfig& c) {
    return nlohmann::json{
        {"n_clients", c.n_clients}, {"participation", c.participation}, {"rounds", c.rounds},
        {"local_epochs", c.local_epochs}, {"groups", c.groups}, {"select_s", c.select_s},
        {"tau_sel", c.tau_sel}, {"lambda", c.lambda}, {"lr", c.lr},
        {"batch_size", c.batch_size}, {"strategy", to_string(c.strategy)},
        {"policy", to_string(c.policy)}, {"pairing", to_string(c.pairing)},
        {"aggregation", to_string(c.aggregation)}, {"diversity", to_string(c.diversity)},
        {"literal_eq4", c.literal_eq4}, {"coupled_selection", c.coupled_selection},
        {"inference", to_string(c.inference)}, {"seed", c.seed},
        {"regime", to_string(c.regime)}, {"dirichlet_alpha", c.dirichlet_alpha},
        {"n_classes", c.n_classes}, {"samples_per_class", c.samples_per_class},
        {"eval_per_class", c.eval_per_class}, {"dim_d", c.dim_d}, {"dim_f", c.dim_f},
        {"dim_pt", c.dim_pt}, {"dim_pv", c.dim_pv}, {"tau_m", c.tau_m},
        {"n_noise", c.n_noise}, {"mixing_rho", c.mixing_rho},
        {"signal_scale", c.signal_scale}, {"client_shift", c.client_shift},
        {"noise_sigma", c.noise_sigma}, {"init_sigma", c.init_sigma}, {"threads", c.threads},
    };
}

inline nlohmann::json prompts_to_json(const PromptGroupSet& p) {
    return nlohmann::json{{"text", p.text_prompts}, {"visual", p.visual_prompts}};
}

inline nlohmann::json checkpoint_json(const FederationState& st) {
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& p : st.prompts) clients.push_back(prompts_to_json(p));
    return nlohmann::json{
        {"rounds_done", st.rounds_done},
        {"global", {{"round", st.global.round},
                    {"strategy", to_string(st.global.strategy)},
                    {"text_slots", st.global.text_slots},
                    {"visual_slots", st.global.visual_slots},
                    {"slot_weights", st.global.slot_weights}}},
        {"clients", clients},
    };
}

struct RunOutputs {
    std::filesystem::path dir;
    std::vector<std::pair<std::string, std::string>> digests;  // file, fnv1a64 hex
};

/// Write every artifact of a finished run; the manifest goes last so a crash
/// mid-write never leaves a manifest pointing at missing files.
inline RunOutputs write_run_outputs(const FederationResult& result,
                                    const std::filesystem::path& out_dir,
                                    const std::string& started_at,
                                    const std::string& finished_at) {
    namespace fs = std::filesystem;
    const FederationConfig& cfg = result.state.cfg;
    fs::create_directories(out_dir);

    RunOutputs out;
    out.dir = out_dir;
    auto emit = [&](const std::string& name, const std::string& content) {
        write_file(out_dir / name, content);
        out.digests.emplace_back(name, file_digest(out_dir / name));
    };

    emit("metrics.csv", metrics_csv(result.records, cfg.strategy));
    emit("selection_trace.csv", trace_csv(result.records));
    emit("similarity_text.csv", matrix_csv(similarity_matrix(result.state.global.text_slots)));
    emit("similarity_visual.csv", matrix_csv(similarity_matrix(result.state.global.visual_slots)));
    emit("checkpoint.json", checkpoint_json(result.state).dump(2) + "\n");

    nlohmann::json inventory = nlohmann::json::array();
    for (const auto& [name, digest] : out.digests)
        inventory.push_back({{"file", name}, {"fnv1a64", digest}});
    nlohmann::json manifest{
        {"version", kVersion},
        {"seed", cfg.seed},
        {"config", config_to_json(cfg)},
        {"started_at", started_at},
        {"finished_at", finished_at},
        {"files", inventory},
    };
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return out;
}

}  // namespace fedmgp
