#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedmgp/commands.hpp"

namespace {

std::filesystem::path default_out_root() {
    const char* env = std::getenv("FEDMGP_OUT_ROOT");
    return env != nullptr && *env != '\0' ? std::filesystem::path(env)
                                          : std::filesystem::path("out");
}

fedmgp::FederationConfig load_config(const std::string& path) {
    return path.empty() ? fedmgp::FederationConfig{} : fedmgp::parse_config(path);
}

void apply_overrides(fedmgp::FederationConfig& cfg, const std::string& strategy,
                     std::int64_t seed, std::int64_t rounds, std::int64_t threads) {
    if (!strategy.empty()) cfg.strategy = fedmgp::parse_strategy(strategy);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (rounds > 0) cfg.rounds = static_cast<std::size_t>(rounds);
    if (threads > 0) cfg.threads = static_cast<std::size_t>(threads);
    cfg.validate();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated multi-group prompt learning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string strategy_override;
    std::int64_t seed = -1, rounds = -1, threads = -1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (key = value lines)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "seed override");
        cmd->add_option("--strategy", strategy_override,
                        "aggregation strategy override (full|fixed|dynamic)");
        cmd->add_option("--rounds", rounds, "communication rounds override");
        cmd->add_option("--threads", threads, "worker threads override");
    };

    CLI::App* run = app.add_subcommand("run", "run a federation and write artifacts");
    add_common(run);

    CLI::App* verify = app.add_subcommand("verify", "run the property suite");
    add_common(verify);

    CLI::App* compare = app.add_subcommand("compare", "matched-seed strategy comparison");
    add_common(compare);
    std::vector<std::string> strategies{"full", "fixed", "dynamic"};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    compare->add_option("--strategies", strategies, "strategies to compare (>= 2)");
    compare->add_option("--seeds", seeds, "seeds shared across strategies");

    CLI::App* report = app.add_subcommand("report", "summarize a finished run directory");
    std::string run_dir;
    report->add_option("run_dir", run_dir, "directory written by `run`")->required();
    add_common(report);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            fedmgp::FederationConfig cfg = load_config(config_path);
            apply_overrides(cfg, strategy_override, seed, rounds, threads);
            const std::filesystem::path out =
                out_dir.empty() ? default_out_root() / "run" : std::filesystem::path(out_dir);
            return fedmgp::cmd_run(cfg, out);
        }
        if (verify->parsed()) {
            const std::filesystem::path out =
                out_dir.empty() ? default_out_root() / "verify" : std::filesystem::path(out_dir);
            const int rc = fedmgp::cmd_verify(out, seed >= 0 ? static_cast<std::uint64_t>(seed) : 7);
            std::cout << (rc == 0 ? "verify: all mandatory checks passed\n"
                                  : "verify: mandatory check failures, see verify_report.csv\n");
            return rc;
        }
        if (compare->parsed()) {
            fedmgp::FederationConfig cfg = load_config(config_path);
            apply_overrides(cfg, "", seed, rounds, threads);
            std::vector<fedmgp::AggregationStrategy> strats;
            for (const auto& s : strategies) strats.push_back(fedmgp::parse_strategy(s));
            const std::filesystem::path out =
                out_dir.empty() ? default_out_root() / "compare" : std::filesystem::path(out_dir);
            return fedmgp::cmd_compare(cfg, strats, seeds, out);
        }
        if (report->parsed()) {
            const std::filesystem::path out = out_dir.empty()
                                                  ? std::filesystem::path(run_dir) / "report.csv"
                                                  : std::filesystem::path(out_dir);
            return fedmgp::cmd_report(run_dir, out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
