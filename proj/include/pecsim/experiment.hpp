#pragma once

#include <string>
#include <vector>

#include "pecsim/config.hpp"
#include "pecsim/engine.hpp"
#include "pecsim/metrics.hpp"

namespace pecsim {

inline constexpr const char* kToolVersion = "0.3.0";

struct PolicyRunOutput {
    PolicyConfig policy;
    std::string name;
    SimResult result;
    MetricsReport report;
};

struct ExperimentOutput {
    std::vector<Request> workload;
    std::vector<PolicyRunOutput> runs;
};

// Builds the request stream for a config: trace load or Poisson synthesis,
// arrival scaling, long-tail transform, optional long-request drop. All
// randomness derives from the config seed.
std::vector<Request> build_workload(const ExperimentConfig& cfg);

// One simulation per configured policy over the identical workload. FIFO's
// p99 queueing delay (when present) is the normalization divisor for every
// run's normalized percentiles.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);

// Per-policy report JSON plus one flat table per metric family, and a
// manifest capturing config hash, seed and tool version. Files are written
// atomically.
void write_experiment_outputs(const ExperimentConfig& cfg, const ExperimentOutput& out);

// PecSched plus its four single-ablation variants.
std::vector<PolicyConfig> ablation_suite(const PolicyConfig& base);

struct SweepRow {
    std::int64_t gpus = 0;
    double measured_capacity_rps = 0.0;
    double overhead_ratio_p99 = 0.0;
};

// Scales the cluster to each GPU count (8 GPUs per node), probes max short
// throughput, then replays Poisson load at that rate and reports the p99
// scheduling-overhead ratio.
std::vector<SweepRow> run_scalability_sweep(const ExperimentConfig& cfg,
                                            const std::vector<std::int64_t>& gpu_counts);

std::string report_to_json(const MetricsReport& report, const std::string& policy,
                           const ExperimentConfig& cfg);

}  // namespace pecsim
