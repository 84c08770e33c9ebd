#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "pecsim/cluster.hpp"
#include "pecsim/sched.hpp"
#include "pecsim/workload.hpp"

namespace pecsim {

struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class EventKind {
    Arrival,
    PrefillDone,
    PrefillLayerDone,
    DecodeIterDone,
    KvMigrationDone,
    PreemptApplied,
    ResumeApplied,
};

enum class Phase { Queued, Prefilling, PrefillPaused, MigratingKV, Decoding, Done, Starved };

struct RequestRecord {
    std::int64_t id = 0;
    RequestClass klass = RequestClass::Short;
    double arrival_time = 0.0;
    std::int64_t input_len = 0;
    std::int64_t output_len = 0;
    Phase phase = Phase::Queued;
    double prefill_start = -1.0;
    double first_token = -1.0;
    double finish = -1.0;
    std::int64_t preemptions = 0;
    double suspension_total = 0.0;
    std::int64_t layers_done = 0;
    double paused_layer_progress = 0.0;
    double charged_prefill = 0.0;  // busy prefill compute, checkpoints excluded
    double planned_prefill = 0.0;  // unpreempted cost-model duration
    double sched_overhead = 0.0;   // modeled decision + context-switch time
};

struct SimResult {
    std::vector<RequestRecord> records;
    std::vector<GpuAccounting> gpus;
    std::int64_t total_preemptions = 0;
    double end_time = 0.0;
    std::uint64_t events_processed = 0;
};

struct RunOptions {
    double horizon = 0.0;  // dispatch freeze time; 0 runs to full drain
    std::uint64_t seed = 0;
    bool check_invariants = false;
    std::ostream* trace_log = nullptr;
};

// Modeled cost of one unit of scheduler work (one replica scan or one plan
// stage evaluation).
inline constexpr double kSchedWorkUnitSeconds = 50e-9;

SimResult run(const std::vector<Request>& requests, const ModelSpec& model,
              const ClusterSpec& spec, const PolicyConfig& policy, const RunOptions& opts);

}  // namespace pecsim
