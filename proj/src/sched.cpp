#include "pecsim/sched.hpp"

#include <algorithm>
#include <map>

namespace pecsim {

void PolicyConfig::validate() const {
    if (ablations != 0 && kind != PolicyKind::PecSched) {
        throw ConfigError("ablations are only valid with the pecsched policy");
    }
    if (reservation_long_capacity <= 0) {
        throw ConfigError("reservation_long_capacity must be positive");
    }
    if (coloc_token_threshold < 0) {
        throw ConfigError("coloc_token_threshold must be non-negative");
    }
}

PolicyKind policy_from_name(const std::string& name) {
    if (name == "fifo") return PolicyKind::Fifo;
    if (name == "reservation") return PolicyKind::Reservation;
    if (name == "priority") return PolicyKind::Priority;
    if (name == "pecsched") return PolicyKind::PecSched;
    throw ConfigError("unknown policy: " + name);
}

unsigned ablation_from_name(const std::string& name) {
    if (name == "no-preempt") return static_cast<unsigned>(Ablation::NoPreempt);
    if (name == "no-disagg") return static_cast<unsigned>(Ablation::NoDisagg);
    if (name == "no-coloc") return static_cast<unsigned>(Ablation::NoColoc);
    if (name == "no-fast-sp") return static_cast<unsigned>(Ablation::NoFastSP);
    throw ConfigError("unknown ablation: " + name);
}

std::string policy_name(const PolicyConfig& cfg) {
    switch (cfg.kind) {
        case PolicyKind::Fifo: return "fifo";
        case PolicyKind::Reservation: return "reservation";
        case PolicyKind::Priority: return "priority";
        case PolicyKind::PecSched: break;
    }
    std::string name = "pecsched";
    if (cfg.has(Ablation::NoPreempt)) name += "-pe";
    if (cfg.has(Ablation::NoDisagg)) name += "-dis";
    if (cfg.has(Ablation::NoColoc)) name += "-col";
    if (cfg.has(Ablation::NoFastSP)) name += "-fsp";
    return name;
}

std::int64_t reservation_long_pool_size(const PolicyConfig& cfg, const ClusterSpec& spec) {
    const auto pool = replicas_needed(cfg.reservation_long_capacity, spec);
    if (pool >= spec.total_replicas()) {
        throw ConfigError("reservation long pool would consume every replica");
    }
    return pool;
}

std::vector<std::vector<std::int64_t>> balance_preemption_batches(
    const std::vector<QueueItem>& shorts, std::int64_t replica_count) {
    if (replica_count < 1) {
        throw ConfigError("balance_preemption_batches: no replicas");
    }
    std::vector<QueueItem> sorted = shorts;
    std::sort(sorted.begin(), sorted.end(), [](const QueueItem& a, const QueueItem& b) {
        return a.input_len != b.input_len ? a.input_len > b.input_len : a.id < b.id;
    });
    std::vector<std::vector<std::int64_t>> bins(static_cast<std::size_t>(replica_count));
    std::vector<std::int64_t> load(static_cast<std::size_t>(replica_count), 0);
    for (const auto& item : sorted) {
        std::size_t best = 0;
        for (std::size_t b = 1; b < load.size(); ++b) {
            if (load[b] < load[best]) best = b;
        }
        bins[best].push_back(item.id);
        load[best] += item.input_len;
    }
    return bins;
}

namespace {

// Queued requests the policy leaves untouched stay in the global queue;
// policies emit decisions only for requests they act on.

struct WorkingState {
    std::vector<ReplicaSnapshot> replicas;
    std::uint64_t work_units = 0;

    ReplicaSnapshot& by_id(std::int64_t id) {
        for (auto& r : replicas) {
            if (r.id == id) return r;
        }
        throw std::logic_error("replica id not in snapshot");
    }
};

std::vector<ReplicaCandidate> idle_general_candidates(WorkingState& ws, bool pool_split,
                                                      std::int64_t pool) {
    std::vector<ReplicaCandidate> out;
    for (const auto& r : ws.replicas) {
        ++ws.work_units;
        if (r.role != ReplicaRole::General) continue;
        if (r.state != BusyState::Idle) continue;
        if (r.claimed_by >= 0) continue;
        if (pool_split && r.pool != pool) continue;
        out.push_back({r.id, r.node_id, r.queue_tokens});
    }
    return out;
}

void mark_busy(WorkingState& ws, const std::vector<std::int64_t>& ids, BusyState state,
               std::int64_t tokens_each) {
    for (const auto id : ids) {
        auto& r = ws.by_id(id);
        r.state = state;
        r.queue_tokens += tokens_each;
    }
}

SpPlan plan_for_long(const QueueItem& item, const std::vector<std::int64_t>& targets,
                     const PolicyConfig& cfg, const ModelSpec& model, const ClusterSpec& spec,
                     WorkingState& ws) {
    ws.work_units += 8;  // four strategy combinations, two stages each
    if (cfg.kind == PolicyKind::PecSched && cfg.has(Ablation::NoFastSP)) {
        return forced_ring_plan(item.input_len, model, spec,
                                static_cast<std::int64_t>(targets.size()));
    }
    std::map<std::int64_t, std::int64_t> per_node;
    for (const auto id : targets) {
        per_node[ws.by_id(id).node_id] += 1;
    }
    std::int64_t max_group = 0;
    for (const auto& [node, count] : per_node) max_group = std::max(max_group, count);
    SpSpan span;
    span.ring_nodes = static_cast<std::int64_t>(per_node.size());
    span.gpus_per_group = max_group * spec.tp_size;
    span.total_gpus = static_cast<std::int64_t>(targets.size()) * spec.tp_size;
    return select_sp_plan(item.input_len, model, spec, span);
}

DispatchResult fifo_like_dispatch(const PolicyConfig& cfg, const DispatchInput& input,
                                  const ModelSpec& model, const ClusterSpec& spec,
                                  bool pool_split) {
    DispatchResult out;
    WorkingState ws{input.replicas, 0};
    // One FIFO lane per pool under reservation, a single lane otherwise. A
    // blocked lane head blocks everything behind it in that lane.
    bool lane_blocked[2] = {false, false};
    for (const auto& item : input.queue) {
        if (item.id < 0) continue;
        const std::size_t pool =
            pool_split && item.klass == RequestClass::Long ? 1 : 0;
        if (lane_blocked[pool]) {
            if (lane_blocked[0] && (!pool_split || lane_blocked[1])) break;
            continue;
        }
        const std::int64_t need =
            item.klass == RequestClass::Long ? replicas_needed(item.input_len, spec) : 1;
        auto ids = select_replicas(
            idle_general_candidates(ws, pool_split, static_cast<std::int64_t>(pool)), need);
        if (ids.empty()) {
            lane_blocked[pool] = true;
            if (lane_blocked[0] && (!pool_split || lane_blocked[1])) break;
            continue;
        }
        ScheduleDecision d;
        d.request_id = item.id;
        d.action = DecisionAction::DispatchPrefill;
        d.target_replicas = ids;
        if (item.klass == RequestClass::Long) {
            d.sp_plan = plan_for_long(item, ids, cfg, model, spec, ws);
            mark_busy(ws, ids, BusyState::LongPrefill, item.input_len / need);
        } else {
            mark_busy(ws, ids, BusyState::ShortPrefill, item.input_len);
        }
        out.decisions.push_back(std::move(d));
    }
    out.work_units = ws.work_units;
    return out;
}

DispatchResult priority_dispatch(const PolicyConfig& cfg, const DispatchInput& input,
                                 const ModelSpec& model, const ClusterSpec& spec) {
    DispatchResult out;
    WorkingState ws{input.replicas, 0};
    bool all_shorts_placed = true;
    for (const auto& item : input.queue) {
        if (item.id < 0 || item.klass != RequestClass::Short) continue;
        auto ids = select_replicas(idle_general_candidates(ws, false, 0), 1);
        if (ids.empty()) {
            all_shorts_placed = false;
            break;
        }
        mark_busy(ws, ids, BusyState::ShortPrefill, item.input_len);
        out.decisions.push_back(
            {item.id, DecisionAction::DispatchPrefill, std::move(ids), -1, std::nullopt});
    }
    if (all_shorts_placed) {
        for (const auto& item : input.queue) {
            if (item.id < 0 || item.klass != RequestClass::Long) continue;
            const auto need = replicas_needed(item.input_len, spec);
            auto ids = select_replicas(idle_general_candidates(ws, false, 0), need);
            if (ids.empty()) break;
            ScheduleDecision d;
            d.request_id = item.id;
            d.action = DecisionAction::DispatchPrefill;
            d.sp_plan = plan_for_long(item, ids, cfg, model, spec, ws);
            d.target_replicas = ids;
            mark_busy(ws, ids, BusyState::LongPrefill, item.input_len / need);
            out.decisions.push_back(std::move(d));
        }
    }
    out.work_units = ws.work_units;
    return out;
}

DispatchResult pecsched_dispatch(const PolicyConfig& cfg, const DispatchInput& input,
                                 const ModelSpec& model, const ClusterSpec& spec) {
    DispatchResult out;
    WorkingState ws{input.replicas, 0};
    const bool no_preempt = cfg.has(Ablation::NoPreempt);
    const bool no_coloc = cfg.has(Ablation::NoColoc);
    const std::int64_t threshold_per_gpu =
        cfg.coloc_token_threshold > 0 ? cfg.coloc_token_threshold
                                      : coloc_threshold_tokens_per_gpu(model, spec);
    const std::int64_t threshold_per_replica = threshold_per_gpu * spec.tp_size;

    // One preemption victim per invocation; preempt-path shorts batch onto it
    // and are balanced across its replicas at the end.
    std::int64_t victim = -1;
    bool victim_resolved = false;
    std::vector<std::int64_t> victim_replicas;
    std::vector<QueueItem> preempt_batch;
    bool longs_blocked = false;
    bool idle_exhausted = false;
    bool shorts_dead = false;

    const auto max_coloc_room = [&]() {
        std::int64_t room = 0;
        for (const auto& r : ws.replicas) {
            if (r.decode_long < 0) continue;
            if (r.state != BusyState::LongDecode && r.state != BusyState::Colocated) continue;
            room = std::max(room, threshold_per_replica - r.coloc_tokens);
        }
        return room;
    };
    std::int64_t coloc_room = no_coloc ? 0 : max_coloc_room();

    for (const auto& item : input.queue) {
        if (item.id < 0) continue;
        if (item.klass == RequestClass::Short) {
            if (shorts_dead) continue;
            if (!idle_exhausted) {
                auto ids = select_replicas(idle_general_candidates(ws, false, 0), 1);
                if (!ids.empty()) {
                    mark_busy(ws, ids, BusyState::ShortPrefill, item.input_len);
                    out.decisions.push_back({item.id, DecisionAction::DispatchPrefill,
                                             std::move(ids), -1, std::nullopt});
                    continue;
                }
                idle_exhausted = true;
            }
            if (!no_coloc && item.input_len <= coloc_room) {
                std::int64_t best = -1;
                std::int64_t best_tokens = 0;
                for (const auto& r : ws.replicas) {
                    ++ws.work_units;
                    if (r.decode_long < 0) continue;
                    if (r.state != BusyState::LongDecode && r.state != BusyState::Colocated)
                        continue;
                    if (r.coloc_tokens + item.input_len > threshold_per_replica) continue;
                    if (best < 0 || r.coloc_tokens < best_tokens) {
                        best = r.id;
                        best_tokens = r.coloc_tokens;
                    }
                }
                if (best >= 0) {
                    auto& r = ws.by_id(best);
                    r.coloc_tokens += item.input_len;
                    r.state = BusyState::Colocated;
                    coloc_room = max_coloc_room();
                    out.decisions.push_back({item.id, DecisionAction::ColocateWithLongDecode,
                                             {best}, -1, std::nullopt});
                    continue;
                }
            }
            if (!no_preempt) {
                if (!victim_resolved) {
                    victim_resolved = true;
                    double most_work = 0.0;
                    const auto consider = [&](const PreemptibleLong& lr) {
                        ++ws.work_units;
                        if (victim < 0 || lr.remaining_work > most_work ||
                            (lr.remaining_work == most_work && lr.id < victim)) {
                            victim = lr.id;
                            most_work = lr.remaining_work;
                            victim_replicas = lr.replicas;
                        }
                    };
                    for (const auto& lr : input.prefilling_longs) consider(lr);
                    if (no_coloc) {
                        for (const auto& lr : input.decoding_longs) consider(lr);
                    }
                }
                if (victim >= 0) {
                    preempt_batch.push_back(item);
                    continue;
                }
            }
            // No path for this short. Smaller shorts behind it may still
            // colocate; give up on shorts only once no path can open at all.
            if (idle_exhausted && coloc_room <= 0 &&
                (no_preempt || (victim_resolved && victim < 0))) {
                shorts_dead = true;
            }
        } else {
            if (longs_blocked) continue;
            const auto need = replicas_needed(item.input_len, spec);
            std::vector<ReplicaCandidate> claimable;
            for (const auto& r : ws.replicas) {
                ++ws.work_units;
                if (r.role != ReplicaRole::General) continue;
                if (r.claimed_by >= 0) continue;
                if (r.state == BusyState::LongPrefill || r.state == BusyState::LongDecode ||
                    r.state == BusyState::Colocated) {
                    continue;
                }
                claimable.push_back({r.id, r.node_id, r.queue_tokens});
            }
            auto ids = select_replicas(std::move(claimable), need);
            if (ids.empty()) {
                // FIFO among longs: later longs wait behind this one.
                longs_blocked = true;
                continue;
            }
            ScheduleDecision d;
            d.request_id = item.id;
            d.action = DecisionAction::DispatchPrefill;
            d.sp_plan = plan_for_long(item, ids, cfg, model, spec, ws);
            d.target_replicas = ids;
            for (const auto id : ids) {
                auto& r = ws.by_id(id);
                r.claimed_by = item.id;
                r.queue_tokens += item.input_len / need;
            }
            out.decisions.push_back(std::move(d));
        }
    }

    if (!preempt_batch.empty()) {
        const auto bins = balance_preemption_batches(
            preempt_batch, static_cast<std::int64_t>(victim_replicas.size()));
        for (std::size_t b = 0; b < bins.size(); ++b) {
            for (const auto req_id : bins[b]) {
                out.decisions.push_back({req_id, DecisionAction::PreemptAndDispatch,
                                         {victim_replicas[b]}, victim, std::nullopt});
            }
        }
    }
    out.work_units = ws.work_units;
    return out;
}

}  // namespace

DispatchResult dispatch(const PolicyConfig& cfg, const DispatchInput& input,
                        const ModelSpec& model, const ClusterSpec& spec) {
    switch (cfg.kind) {
        case PolicyKind::Fifo:
            return fifo_like_dispatch(cfg, input, model, spec, false);
        case PolicyKind::Reservation:
            return fifo_like_dispatch(cfg, input, model, spec, true);
        case PolicyKind::Priority:
            return priority_dispatch(cfg, input, model, spec);
        case PolicyKind::PecSched:
            return pecsched_dispatch(cfg, input, model, spec);
    }
    throw std::logic_error("unreachable policy kind");
}

}  // namespace pecsim
