#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pecsim/cluster.hpp"
#include "pecsim/costmodel.hpp"
#include "pecsim/workload.hpp"

namespace pecsim {

enum class PolicyKind { Fifo, Reservation, Priority, PecSched };

enum class Ablation : unsigned {
    NoPreempt = 1u << 0,  // /PE
    NoDisagg = 1u << 1,   // /Dis
    NoColoc = 1u << 2,    // /CoL
    NoFastSP = 1u << 3,   // /FSP
};

struct PolicyConfig {
    PolicyKind kind = PolicyKind::Fifo;
    unsigned ablations = 0;
    std::int64_t reservation_long_capacity = 500'000;
    std::int64_t coloc_token_threshold = 0;  // tokens per GPU; 0 derives from the model

    bool has(Ablation a) const { return (ablations & static_cast<unsigned>(a)) != 0; }
    bool disaggregates() const { return kind == PolicyKind::PecSched && !has(Ablation::NoDisagg); }
    void validate() const;
};

PolicyKind policy_from_name(const std::string& name);
std::string policy_name(const PolicyConfig& cfg);
unsigned ablation_from_name(const std::string& name);

enum class BusyState { Idle, ShortPrefill, LongPrefill, LongDecode, Colocated };

struct ReplicaSnapshot {
    std::int64_t id = 0;
    std::int64_t node_id = 0;
    ReplicaRole role = ReplicaRole::General;
    BusyState state = BusyState::Idle;
    std::int64_t queue_tokens = 0;  // tokens of running + queued work
    std::int64_t claimed_by = -1;   // owning long request, -1 if unclaimed
    std::int64_t decode_long = -1;  // long decoding here, -1 if none
    std::int64_t coloc_tokens = 0;  // colocated short prefill tokens
    std::int64_t pool = 0;          // reservation: 0 short pool, 1 long pool
};

struct QueueItem {
    std::int64_t id = 0;
    RequestClass klass = RequestClass::Short;
    std::int64_t input_len = 0;
};

// A long request occupying replicas; a preemption candidate.
struct PreemptibleLong {
    std::int64_t id = 0;
    double remaining_work = 0.0;
    std::vector<std::int64_t> replicas;
};

struct DispatchInput {
    std::span<const QueueItem> queue;  // global queue, FIFO order; id < 0 is a tombstone
    std::vector<ReplicaSnapshot> replicas;
    std::vector<PreemptibleLong> prefilling_longs;
    std::vector<PreemptibleLong> decoding_longs;  // victims only under NoColoc
};

enum class DecisionAction {
    DispatchPrefill,
    PreemptAndDispatch,
    ColocateWithLongDecode,
    Enqueue,
    Starve,
};

struct ScheduleDecision {
    std::int64_t request_id = -1;
    DecisionAction action = DecisionAction::Enqueue;
    std::vector<std::int64_t> target_replicas;
    std::int64_t victim_long = -1;
    std::optional<SpPlan> sp_plan;
};

struct DispatchResult {
    std::vector<ScheduleDecision> decisions;
    std::uint64_t work_units = 0;  // replica scans + plan evaluations
};

// Pure decision function: same (cfg, input, model, spec) always yields the
// same decision list.
DispatchResult dispatch(const PolicyConfig& cfg, const DispatchInput& input,
                        const ModelSpec& model, const ClusterSpec& spec);

// Greedy longest-first assignment of short prefill batches across the
// replicas freed by a preemption; minimizes the max per-replica token sum.
std::vector<std::vector<std::int64_t>> balance_preemption_batches(
    const std::vector<QueueItem>& shorts, std::int64_t replica_count);

// Replica count of the reservation long pool: minimal count able to hold the
// configured capacity.
std::int64_t reservation_long_pool_size(const PolicyConfig& cfg, const ClusterSpec& spec);

}  // namespace pecsim
