#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedmgp/commands.hpp"
#include "fedmgp/config.hpp"
#include "fedmgp/reporting.hpp"

using namespace fedmgp;

TEST_CASE("empty config yields all defaults") {
    std::istringstream in("");
    FederationConfig cfg = parse_config_stream(in);
    CHECK(cfg.groups == 5);
    CHECK(cfg.select_s == 2);
    CHECK(cfg.tau_sel == 1.0);
    CHECK(cfg.lambda == 1.0);
    CHECK(cfg.lr == 0.001);
    CHECK(cfg.local_epochs == 2);
    CHECK(cfg.rounds == 10);
    CHECK(cfg.batch_size == 8);
    CHECK(cfg.participation == 1.0);
    CHECK(cfg.strategy == AggregationStrategy::dynamic);
    CHECK(cfg.policy == SelectionPolicy::probabilistic);
    CHECK(cfg.pairing == PairingMode::set_sum);
    CHECK(cfg.aggregation == DynamicMode::ordinal);
    CHECK(cfg.diversity == DiversityForm::COS);
}

TEST_CASE("config parsing and validation errors") {
    {
        std::istringstream in("groups = 5\nselect_s = 7\n");
        CHECK_THROWS_WITH(parse_config_stream(in),
                          Catch::Matchers::ContainsSubstring("select_s"));
    }
    {
        std::istringstream in("tau_sel = 0\n");
        CHECK_THROWS_WITH(parse_config_stream(in), Catch::Matchers::ContainsSubstring("tau_sel"));
    }
    {
        std::istringstream in("# comment\nnot_a_key = 3\n");
        CHECK_THROWS_WITH(parse_config_stream(in), Catch::Matchers::ContainsSubstring("2"));
    }
    {
        std::istringstream in("rounds = banana\n");
        CHECK_THROWS_WITH(parse_config_stream(in), Catch::Matchers::ContainsSubstring("rounds"));
    }
    {
        std::istringstream in("pairing = slotwise\naggregation = ordinal\n");
        CHECK_THROWS(parse_config_stream(in));
    }
    CHECK_THROWS(parse_config("/nonexistent/path/config.txt"));
}

TEST_CASE("comments and values parse") {
    std::istringstream in(
        "# experiment\n"
        "groups = 4\n"
        "select_s = 3\n"
        "strategy = fixed\n"
        "policy = top_s\n"
        "diversity = L2\n"
        "literal_eq4 = true\n"
        "mixing_rho = 0.75\n");
    FederationConfig cfg = parse_config_stream(in);
    CHECK(cfg.groups == 4);
    CHECK(cfg.select_s == 3);
    CHECK(cfg.strategy == AggregationStrategy::fixed);
    CHECK(cfg.policy == SelectionPolicy::top_s);
    CHECK(cfg.diversity == DiversityForm::L2);
    CHECK(cfg.literal_eq4);
    CHECK(cfg.mixing_rho == 0.75);
}

TEST_CASE("float formatting and digests") {
    CHECK(fmt(0.1) == "0.1");
    CHECK(fmt(1.0 / 3.0) == "0.333333333");
    CHECK(fmt(123456789.0) == "123456789");
    CHECK(fmt(1234567891.0) == "1.23456789e+09");
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("run artifacts are written and reproducible") {
    namespace fs = std::filesystem;
    FederationConfig cfg = verify::small_benchmark_config(7);
    cfg.rounds = 2;

    const fs::path dir1 = fs::temp_directory_path() / "fedmgp_test_run1";
    const fs::path dir2 = fs::temp_directory_path() / "fedmgp_test_run2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    REQUIRE(cmd_run(cfg, dir1) == 0);
    REQUIRE(cmd_run(cfg, dir2) == 0);

    for (const char* name : {"metrics.csv", "selection_trace.csv", "similarity_text.csv",
                             "similarity_visual.csv", "checkpoint.json", "manifest.json"})
        CHECK(fs::exists(dir1 / name));

    CHECK(file_digest(dir1 / "metrics.csv") == file_digest(dir2 / "metrics.csv"));
    CHECK(file_digest(dir1 / "selection_trace.csv") == file_digest(dir2 / "selection_trace.csv"));

    // schema headers lead every csv
    std::ifstream m(dir1 / "metrics.csv");
    std::string first;
    std::getline(m, first);
    CHECK(first == std::string("# schema=") + kMetricsSchema);

    REQUIRE(cmd_report(dir1, dir1 / "report.csv") == 0);
    std::ifstream rep(dir1 / "report.csv");
    std::string line;
    std::getline(rep, line);
    CHECK(line == std::string("# schema=") + kReportSchema);
    std::size_t rows = 0;
    while (std::getline(rep, line)) ++rows;
    CHECK(rows > 10);

    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("comparison requires at least two strategies") {
    FederationConfig cfg = verify::small_benchmark_config(7);
    CHECK_THROWS(run_comparison(cfg, {AggregationStrategy::full}, {1}));
    CHECK_THROWS(run_comparison(cfg, {AggregationStrategy::full, AggregationStrategy::dynamic}, {}));
}

TEST_CASE("comparing full against dynamic policy-all gives identical rows") {
    FederationConfig cfg = verify::small_benchmark_config(7);
    cfg.rounds = 3;
    cfg.policy = SelectionPolicy::all;
    cfg.select_s = cfg.groups;
    auto rows = run_comparison(cfg, {AggregationStrategy::full, AggregationStrategy::dynamic},
                               {5, 6});
    CHECK(rows[0].local_mean == rows[1].local_mean);
    CHECK(rows[0].base_mean == rows[1].base_mean);
    CHECK(rows[0].novel_mean == rows[1].novel_mean);
    CHECK(rows[0].cm_mean == rows[1].cm_mean);
    CHECK(rows[0].min_snr_mean == rows[1].min_snr_mean);
}

TEST_CASE("verify report serializes") {
    std::vector<VerifyCheck> checks(1);
    checks[0].name = "demo";
    checks[0].pass = true;
    checks[0].value = 0.5;
    const std::string csv = verify_csv(checks);
    CHECK(csv.find("# schema=") == 0);
    CHECK(csv.find("demo,1,1,0.5,") != std::string::npos);
}
