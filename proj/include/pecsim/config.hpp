#pragma once

#include <string>
#include <vector>

#include "pecsim/cluster.hpp"
#include "pecsim/sched.hpp"
#include "pecsim/workload.hpp"

namespace pecsim {

struct WorkloadConfig {
    std::string trace_path;  // empty selects synthesis
    double synthesis_rate = 0.0;
    double synthesis_duration = 0.0;
    double arrival_scale = 1.0;
    TraceTransformConfig transform;
    bool drop_long_requests = false;
};

struct ExperimentConfig {
    WorkloadConfig workload;
    ModelSpec model;
    ClusterSpec cluster;
    std::vector<PolicyConfig> policies;
    double horizon = 0.0;  // 0 runs to full drain
    std::uint64_t seed = 1;
    std::string output_dir = "out";

    void validate() const;
};

// Strict parser: unknown keys are errors.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Canonical serialization used for the output manifest and config hash.
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace pecsim
