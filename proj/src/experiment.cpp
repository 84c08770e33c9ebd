#include "pecsim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pecsim {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Request> build_workload(const ExperimentConfig& cfg) {
    std::vector<Request> requests;
    if (!cfg.workload.trace_path.empty()) {
        requests = load_trace(cfg.workload.trace_path);
    } else {
        const auto model = make_longtail_length_model();
        requests = synthesize_poisson(cfg.workload.synthesis_rate, cfg.workload.synthesis_duration,
                                      model, cfg.seed);
    }
    if (cfg.workload.arrival_scale != 1.0) {
        for (auto& r : requests) {
            r.arrival_time *= cfg.workload.arrival_scale;
        }
    }
    if (!requests.empty()) {
        auto transform = cfg.workload.transform;
        transform.seed = cfg.seed;
        requests = transform_long_tail(requests, transform);
    }
    if (cfg.workload.drop_long_requests) {
        std::vector<Request> shorts;
        shorts.reserve(requests.size());
        for (const auto& r : requests) {
            if (r.klass == RequestClass::Short) {
                shorts.push_back(r);
            }
        }
        for (std::size_t i = 0; i < shorts.size(); ++i) {
            shorts[i].id = static_cast<std::int64_t>(i);
        }
        requests = std::move(shorts);
    }
    return requests;
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentOutput out;
    out.workload = build_workload(cfg);
    for (const auto& policy : cfg.policies) {
        PolicyRunOutput run_out;
        run_out.policy = policy;
        run_out.name = policy_name(policy);
        RunOptions opts;
        opts.horizon = cfg.horizon;
        opts.seed = cfg.seed;
        run_out.result = run(out.workload, cfg.model, cfg.cluster, policy, opts);
        run_out.report = build_report(run_out.result);
        out.runs.push_back(std::move(run_out));
    }
    // Normalization baseline: the bundle's FIFO p99 per class.
    const PolicyRunOutput* fifo = nullptr;
    for (const auto& r : out.runs) {
        if (r.policy.kind == PolicyKind::Fifo && r.policy.ablations == 0) {
            fifo = &r;
            break;
        }
    }
    if (fifo != nullptr) {
        const auto div_short = fifo->report.q_delay_short.count(99)
                                   ? fifo->report.q_delay_short.at(99)
                                   : 0.0;
        const auto div_long =
            fifo->report.q_delay_long.count(99) ? fifo->report.q_delay_long.at(99) : 0.0;
        for (auto& r : out.runs) {
            r.report.normalization_divisor_short = div_short;
            r.report.normalization_divisor_long = div_long;
            if (div_short > 0.0) {
                for (const auto& [p, v] : r.report.q_delay_short) {
                    r.report.q_delay_short_normalized[p] = v / div_short;
                }
            }
            if (div_long > 0.0) {
                for (const auto& [p, v] : r.report.q_delay_long) {
                    r.report.q_delay_long_normalized[p] = v / div_long;
                }
            }
        }
    }
    return out;
}

std::vector<PolicyConfig> ablation_suite(const PolicyConfig& base) {
    if (base.kind != PolicyKind::PecSched || base.ablations != 0) {
        throw ConfigError("ablation suite derives from a plain pecsched policy");
    }
    std::vector<PolicyConfig> out;
    out.push_back(base);
    for (const auto a : {Ablation::NoPreempt, Ablation::NoDisagg, Ablation::NoColoc,
                         Ablation::NoFastSP}) {
        PolicyConfig p = base;
        p.ablations = static_cast<unsigned>(a);
        out.push_back(p);
    }
    return out;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
}

void atomic_write(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw SimulationError("cannot write output file: " + tmp.string());
        }
        out << content;
    }
    fs::rename(tmp, path);
}

json percentile_map_json(const std::map<int, double>& m) {
    json j = json::object();
    for (const auto& [p, v] : m) {
        j["p" + std::to_string(p)] = v;
    }
    return j;
}

}  // namespace

std::string report_to_json(const MetricsReport& r, const std::string& policy,
                           const ExperimentConfig& cfg) {
    json j;
    j["policy"] = policy;
    j["seed"] = cfg.seed;
    j["config_hash"] = config_hash(cfg);
    j["tool_version"] = kToolVersion;
    j["end_time_s"] = r.end_time;
    j["queueing_delay_s"] = {{"short", percentile_map_json(r.q_delay_short)},
                             {"long", percentile_map_json(r.q_delay_long)}};
    j["queueing_delay_normalized"] = {{"short", percentile_map_json(r.q_delay_short_normalized)},
                                      {"long", percentile_map_json(r.q_delay_long_normalized)},
                                      {"divisor_short_s", r.normalization_divisor_short},
                                      {"divisor_long_s", r.normalization_divisor_long}};
    j["throughput_rps"] = {{"short", r.throughput_rps_short}, {"long", r.throughput_rps_long}};
    j["avg_jct_long_s"] = r.avg_jct_long;
    j["gpu_idle_rate"] = r.gpu_idle_rate;
    j["starvation_rate_long"] = r.starvation_rate_long;
    j["total_preemptions"] = r.total_preemptions;
    j["sched_overhead_ratio_p99"] = {{"all", r.sched_overhead_ratio_p99},
                                     {"short", r.sched_overhead_ratio_p99_short},
                                     {"long", r.sched_overhead_ratio_p99_long}};
    j["counts"] = {{"arrived_short", r.arrived_short},
                   {"arrived_long", r.arrived_long},
                   {"completed_short", r.completed_short},
                   {"completed_long", r.completed_long},
                   {"starved_short", r.starved_short},
                   {"starved_long", r.starved_long}};
    return j.dump(2) + "\n";
}

void write_experiment_outputs(const ExperimentConfig& cfg, const ExperimentOutput& out) {
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);

    for (const auto& run_out : out.runs) {
        atomic_write(dir / (run_out.name + "_report.json"),
                     report_to_json(run_out.report, run_out.name, cfg));
    }

    const auto table = [&](const std::string& name, const std::string& header,
                           auto&& row_fn) {
        std::ostringstream ss;
        ss << header << "\n";
        for (const auto& run_out : out.runs) {
            ss << row_fn(run_out) << "\n";
        }
        atomic_write(dir / name, ss.str());
    };

    table("q_delay.tsv",
          "policy\tclass\tp1\tp25\tp50\tp75\tp99\tp99_normalized", [](const PolicyRunOutput& r) {
              const auto row = [&](const char* klass, const std::map<int, double>& m,
                                   const std::map<int, double>& norm) {
                  std::ostringstream ss;
                  ss << r.name << "\t" << klass;
                  for (const int p : kReportPercentiles) {
                      ss << "\t" << (m.count(p) ? format_double(m.at(p)) : "-");
                  }
                  ss << "\t" << (norm.count(99) ? format_double(norm.at(99)) : "-");
                  return ss.str();
              };
              return row("short", r.report.q_delay_short, r.report.q_delay_short_normalized) +
                     "\n" + row("long", r.report.q_delay_long, r.report.q_delay_long_normalized);
          });
    table("throughput.tsv", "policy\tshort_rps\tlong_rps", [](const PolicyRunOutput& r) {
        return r.name + "\t" + format_double(r.report.throughput_rps_short) + "\t" +
               format_double(r.report.throughput_rps_long);
    });
    table("jct.tsv", "policy\tavg_jct_long_s", [](const PolicyRunOutput& r) {
        return r.name + "\t" + format_double(r.report.avg_jct_long);
    });
    table("preemptions.tsv", "policy\ttotal_preemptions", [](const PolicyRunOutput& r) {
        return r.name + "\t" + std::to_string(r.report.total_preemptions);
    });
    table("idle_rate.tsv", "policy\tgpu_idle_rate", [](const PolicyRunOutput& r) {
        return r.name + "\t" + format_double(r.report.gpu_idle_rate);
    });
    table("starvation.tsv", "policy\tarrived_long\tstarved_long\tstarvation_rate",
          [](const PolicyRunOutput& r) {
              return r.name + "\t" + std::to_string(r.report.arrived_long) + "\t" +
                     std::to_string(r.report.starved_long) + "\t" +
                     format_double(r.report.starvation_rate_long);
          });
    table("overhead.tsv", "policy\tp99_short\tp99_long\tp99_all", [](const PolicyRunOutput& r) {
        return r.name + "\t" + format_double(r.report.sched_overhead_ratio_p99_short) + "\t" +
               format_double(r.report.sched_overhead_ratio_p99_long) + "\t" +
               format_double(r.report.sched_overhead_ratio_p99);
    });

    json manifest;
    manifest["config_hash"] = config_hash(cfg);
    manifest["seed"] = cfg.seed;
    manifest["tool_version"] = kToolVersion;
    manifest["config"] = json::parse(canonical_config(cfg));
    json policies = json::array();
    for (const auto& run_out : out.runs) {
        policies.push_back(run_out.name);
    }
    manifest["policies"] = policies;
    const auto* fifo_run = [&]() -> const PolicyRunOutput* {
        for (const auto& r : out.runs) {
            if (r.policy.kind == PolicyKind::Fifo && r.policy.ablations == 0) return &r;
        }
        return nullptr;
    }();
    manifest["normalization"] =
        fifo_run ? json{{"basis", "fifo_p99"},
                        {"divisor_short_s", out.runs.front().report.normalization_divisor_short},
                        {"divisor_long_s", out.runs.front().report.normalization_divisor_long}}
                 : json{{"basis", "none"}};
    manifest["arrival_scale"] = cfg.workload.arrival_scale;
    atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<SweepRow> run_scalability_sweep(const ExperimentConfig& cfg,
                                            const std::vector<std::int64_t>& gpu_counts) {
    std::vector<SweepRow> rows;
    for (const auto gpus : gpu_counts) {
        if (gpus < cfg.cluster.gpus_per_node || gpus % cfg.cluster.gpus_per_node != 0) {
            throw ConfigError("sweep GPU counts must be multiples of gpus_per_node");
        }
        ClusterSpec spec = cfg.cluster;
        spec.num_nodes = gpus / spec.gpus_per_node;
        const std::int64_t replicas = spec.total_replicas();
        const double decode_share = static_cast<double>(cfg.cluster.decode_replicas) /
                                    static_cast<double>(cfg.cluster.total_replicas());
        spec.decode_replicas = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::round(decode_share * static_cast<double>(replicas))));
        spec.validate();

        PolicyConfig pecsched;
        pecsched.kind = PolicyKind::PecSched;

        // Capacity probe: a fully backlogged burst of shorts; completions per
        // second at saturation are the measured maximum throughput.
        const auto lengths = make_longtail_length_model();
        const std::int64_t probe_n = std::min<std::int64_t>(400 * replicas, 6000);
        auto probe = synthesize_poisson(1000.0, static_cast<double>(probe_n) / 1000.0, lengths,
                                        cfg.seed + 17);
        for (auto& r : probe) {
            r.arrival_time = 0.0;
        }
        RunOptions probe_opts;
        probe_opts.seed = cfg.seed;
        const auto probe_result = run(probe, cfg.model, spec, pecsched, probe_opts);
        const double capacity = throughput_rps(probe_result.records, RequestClass::Short);
        if (capacity <= 0.0) {
            throw SimulationError("capacity probe produced no completions");
        }

        const std::int64_t main_n = std::min<std::int64_t>(600 * replicas, 9000);
        const double duration = static_cast<double>(main_n) / capacity;
        const auto load = synthesize_poisson(capacity, duration, lengths, cfg.seed + 31);
        RunOptions opts;
        opts.seed = cfg.seed;
        const auto result = run(load, cfg.model, spec, pecsched, opts);
        const auto report = build_report(result);

        SweepRow row;
        row.gpus = gpus;
        row.measured_capacity_rps = capacity;
        row.overhead_ratio_p99 = report.sched_overhead_ratio_p99;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace pecsim
