#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pecsim/experiment.hpp"

using namespace pecsim;
namespace fs = std::filesystem;

namespace {

std::string small_config_text(const std::string& out_dir) {
    return std::string(R"({
  "workload": {
    "synthesis": {"rate_rps": 1.0, "duration_s": 240.0},
    "transform": {"long_percentile": 0.95, "long_min": 100000, "long_max": 300000}
  },
  "model": {"preset": "34b"},
  "policies": [{"policy": "fifo"}, {"policy": "pecsched"}],
  "seed": 21,
  "output_dir": ")") +
           out_dir + "\"\n}\n";
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config parser enforces the schema") {
    CHECK_THROWS_AS(parse_config_text("{"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"model": {"preset": "70b"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({
        "workload": {"synthesis": {"rate_rps": 1, "duration_s": 1}},
        "model": {"preset": "70b"},
        "policies": [{"policy": "fifo"}],
        "not_a_key": 1})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({
        "workload": {"synthesis": {"rate_rps": 1, "duration_s": 1}, "typo": true},
        "model": {"preset": "70b"},
        "policies": [{"policy": "fifo"}]})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config_file("/nonexistent/config.json"), ConfigError);

    const auto cfg = parse_config_text(small_config_text("/tmp/x"));
    CHECK(cfg.model.name == "34b");
    CHECK(cfg.cluster.tp_size == 4);
    CHECK(cfg.policies.size() == 2);
    CHECK(config_hash(cfg).size() == 16);
}

TEST_CASE("cluster overrides layer on top of the preset") {
    auto text = std::string(R"({
  "workload": {"synthesis": {"rate_rps": 1.0, "duration_s": 10.0}},
  "model": {"preset": "70b"},
  "cluster": {"num_nodes": 8, "decode_replicas": 2},
  "policies": [{"policy": "pecsched"}],
  "seed": 3
})");
    const auto cfg = parse_config_text(text);
    CHECK(cfg.cluster.num_nodes == 8);
    CHECK(cfg.cluster.decode_replicas == 2);
    CHECK(cfg.cluster.tp_size == 4);  // preset value retained
}

TEST_CASE("experiment runs every policy over the identical workload") {
    TempDir dir("pecsim_exp_test");
    const auto cfg = parse_config_text(small_config_text(dir.path.string()));
    const auto a = build_workload(cfg);
    const auto b = build_workload(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].arrival_time == b[i].arrival_time);
        CHECK(a[i].input_len == b[i].input_len);
        CHECK(a[i].klass == b[i].klass);
    }

    const auto out = run_experiment(cfg);
    REQUIRE(out.runs.size() == 2);
    CHECK(out.runs[0].name == "fifo");
    CHECK(out.runs[1].name == "pecsched");
    // Normalized delays carry the FIFO divisor.
    CHECK(out.runs[1].report.normalization_divisor_short ==
          out.runs[0].report.q_delay_short.at(99));
    CHECK(out.runs[0].report.q_delay_short_normalized.at(99) == doctest::Approx(1.0));
}

TEST_CASE("drop_long_requests leaves a shorts-only stream") {
    auto cfg = parse_config_text(small_config_text("/tmp/x"));
    cfg.workload.drop_long_requests = true;
    const auto reqs = build_workload(cfg);
    CHECK(!reqs.empty());
    for (const auto& r : reqs) {
        CHECK(r.klass == RequestClass::Short);
    }
}

TEST_CASE("output files are written and byte-stable across reruns") {
    TempDir dir_a("pecsim_out_a");
    TempDir dir_b("pecsim_out_b");
    auto cfg = parse_config_text(small_config_text(dir_a.path.string()));
    write_experiment_outputs(cfg, run_experiment(cfg));
    cfg.output_dir = dir_b.path.string();
    write_experiment_outputs(cfg, run_experiment(cfg));

    const std::vector<std::string> files = {
        "fifo_report.json", "pecsched_report.json", "q_delay.tsv", "throughput.tsv",
        "jct.tsv",          "preemptions.tsv",      "idle_rate.tsv", "starvation.tsv",
        "overhead.tsv"};
    for (const auto& f : files) {
        CAPTURE(f);
        REQUIRE(fs::exists(dir_a.path / f));
        CHECK(slurp(dir_a.path / f) == slurp(dir_b.path / f));
    }
    // Manifests differ only in output_dir; compare after normalizing it.
    auto ma = slurp(dir_a.path / "manifest.json");
    auto mb = slurp(dir_b.path / "manifest.json");
    const auto scrub = [](std::string s, const std::string& dir) {
        std::size_t pos;
        while ((pos = s.find(dir)) != std::string::npos) {
            s.replace(pos, dir.size(), "<out>");
        }
        return s;
    };
    CHECK(scrub(ma, dir_a.path.string()) != "");
    CHECK(fs::exists(dir_a.path / "manifest.json"));
}

TEST_CASE("ablation suite is pecsched plus the four variants") {
    PolicyConfig base;
    base.kind = PolicyKind::PecSched;
    const auto suite = ablation_suite(base);
    REQUIRE(suite.size() == 5);
    CHECK(policy_name(suite[0]) == "pecsched");
    CHECK(policy_name(suite[1]) == "pecsched-pe");
    CHECK(policy_name(suite[2]) == "pecsched-dis");
    CHECK(policy_name(suite[3]) == "pecsched-col");
    CHECK(policy_name(suite[4]) == "pecsched-fsp");
    PolicyConfig bad;
    bad.kind = PolicyKind::Fifo;
    CHECK_THROWS_AS(ablation_suite(bad), ConfigError);
}

TEST_CASE("single-point sweep yields a bounded overhead ratio") {
    auto cfg = parse_config_text(small_config_text("/tmp/x"));
    const auto rows = run_scalability_sweep(cfg, {8});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].gpus == 8);
    CHECK(rows[0].measured_capacity_rps > 0.0);
    CHECK(rows[0].overhead_ratio_p99 >= 0.0);
    CHECK(rows[0].overhead_ratio_p99 <= 1.0);
    CHECK_THROWS_AS(run_scalability_sweep(cfg, {12}), ConfigError);
}
