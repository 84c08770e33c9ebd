#include "pecsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <ostream>
#include <queue>
#include <unordered_map>

#include "pecsim/costmodel.hpp"

namespace pecsim {

namespace {

const char* kind_name(EventKind k) {
    switch (k) {
        case EventKind::Arrival: return "arrival";
        case EventKind::PrefillDone: return "prefill_done";
        case EventKind::PrefillLayerDone: return "prefill_layer_done";
        case EventKind::DecodeIterDone: return "decode_iter_done";
        case EventKind::KvMigrationDone: return "kv_migration_done";
        case EventKind::PreemptApplied: return "preempt_applied";
        case EventKind::ResumeApplied: return "resume_applied";
    }
    return "?";
}

struct Event {
    double time = 0.0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Arrival;
    std::int64_t request = -1;
    std::int64_t replica = -1;
    std::uint64_t epoch = 0;
    std::int64_t aux = 0;
};

struct EventAfter {
    bool operator()(const Event& a, const Event& b) const {
        return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
};

struct ReplicaState {
    std::int64_t id = 0;
    std::int64_t node = 0;
    ReplicaRole role = ReplicaRole::General;
    std::int64_t pool = 0;

    BusyState state = BusyState::Idle;
    std::int64_t claimed_by = -1;
    std::int64_t running_short = -1;
    std::deque<std::int64_t> local_queue;
    std::int64_t queue_tokens = 0;
    std::vector<std::int64_t> coloc_shorts;
    std::int64_t coloc_tokens = 0;
    std::int64_t decode_long = -1;

    bool busy = false;
    double last_change = 0.0;
    double exec = 0.0;
    double idle = 0.0;
};

struct ShortRun {
    std::int64_t replica = -1;
    double layer_time = 0.0;
    std::int64_t layers_done = 0;
    double next_layer_at = 0.0;
    std::uint64_t epoch = 0;
    bool colocated = false;
    bool in_window = false;  // running as part of a preemption window
    std::int64_t tokens_generated = 0;
    // KV migration
    std::int64_t decode_replica = -1;
    double channel_free_at = 0.0;
    double per_layer_transfer = 0.0;
};

struct LongRun {
    std::vector<std::int64_t> replicas;
    SpPlan plan;
    double remaining = 0.0;
    double segment_start = -1.0;
    bool gang_started = false;
    std::uint64_t epoch = 0;
    // preemption window
    std::int64_t window_outstanding = 0;
    double pause_decision_time = 0.0;
    // decode
    bool decoding = false;
    std::int64_t tokens_generated = 0;
    bool decode_pause_pending = false;
    bool decode_paused = false;
};

struct DecodeReplica {
    std::int64_t replica = -1;
    std::vector<std::int64_t> residents;
    std::vector<std::int64_t> batch;  // members of the running iteration
    std::int64_t sum_context = 0;
    std::int64_t pending_tokens = 0;  // committed by in-flight prefills
    bool iterating = false;
};

class Sim {
public:
    Sim(const std::vector<Request>& requests, const ModelSpec& model, const ClusterSpec& spec,
        const PolicyConfig& policy, const RunOptions& opts)
        : requests_(requests), model_(model), spec_(spec), policy_(policy), opts_(opts) {
        model_.validate();
        policy_.validate();
        if (model_.num_heads % spec_.tp_size != 0) {
            throw ConfigError("tp_size must divide num_heads");
        }
        // Decode-only replicas exist only when the policy disaggregates.
        spec_.decode_replicas = policy_.disaggregates() ? spec_.decode_replicas : 0;
        if (policy_.disaggregates() && spec_.decode_replicas < 1) {
            throw ConfigError("pecsched with disaggregation needs at least one decode replica");
        }
        spec_.validate();
        cluster_ = build_cluster(spec_);

        const std::int64_t pool_size = policy_.kind == PolicyKind::Reservation
                                           ? reservation_long_pool_size(policy_, spec_)
                                           : 0;
        replicas_.resize(cluster_.replicas.size());
        for (std::size_t i = 0; i < cluster_.replicas.size(); ++i) {
            auto& r = replicas_[i];
            r.id = cluster_.replicas[i].id;
            r.node = cluster_.replicas[i].node_id;
            r.role = cluster_.replicas[i].role;
            r.pool = r.id < pool_size ? 1 : 0;
        }
        for (std::int64_t d = 0; d < spec_.decode_replicas; ++d) {
            DecodeReplica dr;
            dr.replica = d;
            decode_replicas_.push_back(dr);
        }

        records_.resize(requests_.size());
        shorts_.resize(requests_.size());
        double prev_arrival = 0.0;
        for (std::size_t i = 0; i < requests_.size(); ++i) {
            const auto& q = requests_[i];
            if (q.id != static_cast<std::int64_t>(i)) {
                throw SimulationError("request ids must be dense and in stream order");
            }
            if (q.arrival_time < prev_arrival) {
                throw SimulationError("requests must be sorted by arrival time");
            }
            prev_arrival = q.arrival_time;
            auto& rec = records_[i];
            rec.id = q.id;
            rec.klass = q.klass;
            rec.arrival_time = q.arrival_time;
            rec.input_len = q.input_len;
            rec.output_len = q.output_len;
            if (q.klass == RequestClass::Short && q.input_len > spec_.tokens_per_replica()) {
                throw ConfigError("short request exceeds one replica's token capacity");
            }
        }
    }

    SimResult run() {
        for (const auto& q : requests_) {
            schedule(q.arrival_time, EventKind::Arrival, q.id, -1, 0, 0);
        }
        while (!heap_.empty()) {
            const Event ev = heap_.top();
            heap_.pop();
            if (ev.time < now_ - 1e-9) {
                throw SimulationError("event scheduled before current clock");
            }
            now_ = std::max(now_, ev.time);
            if (stale(ev)) continue;
            ++events_processed_;
            log_event(ev);
            const bool boundary = handle(ev);
            if (boundary && dispatch_allowed()) {
                run_dispatch();
            }
            if (opts_.check_invariants) {
                check_accounting();
            }
        }
        now_ = std::max(now_, opts_.horizon);
        finalize();
        SimResult out;
        out.records = records_;
        out.gpus = gpu_table();
        out.total_preemptions = total_preemptions_;
        out.end_time = now_;
        out.events_processed = events_processed_;
        return out;
    }

private:
    // --- event plumbing ---------------------------------------------------

    void schedule(double t, EventKind kind, std::int64_t req, std::int64_t replica,
                  std::uint64_t epoch, std::int64_t aux) {
        if (t < now_ - 1e-9) {
            throw SimulationError("attempt to schedule an event in the past");
        }
        heap_.push(Event{t, next_seq_++, kind, req, replica, epoch, aux});
    }

    bool stale(const Event& ev) const {
        switch (ev.kind) {
            case EventKind::PrefillLayerDone:
                return shorts_[ev.request].epoch != ev.epoch;
            case EventKind::PrefillDone:
                if (records_[ev.request].klass == RequestClass::Long) {
                    const auto it = longs_.find(ev.request);
                    return it == longs_.end() || it->second.epoch != ev.epoch;
                }
                return shorts_[ev.request].epoch != ev.epoch;
            default:
                return false;
        }
    }

    void log_event(const Event& ev) {
        if (!opts_.trace_log) return;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%.9f %s req=%lld replica=%lld\n", ev.time,
                      kind_name(ev.kind), static_cast<long long>(ev.request),
                      static_cast<long long>(ev.replica));
        (*opts_.trace_log) << buf;
    }

    bool dispatch_allowed() const { return opts_.horizon <= 0.0 || now_ <= opts_.horizon; }

    // --- GPU accounting ---------------------------------------------------

    void set_busy(ReplicaState& r, bool busy) {
        if (r.busy == busy) return;
        accrue(r);
        r.busy = busy;
    }

    void accrue(ReplicaState& r) {
        const double dt = now_ - r.last_change;
        if (dt > 0.0) {
            (r.busy ? r.exec : r.idle) += dt;
        }
        r.last_change = now_;
    }

    std::vector<GpuAccounting> gpu_table() {
        std::vector<GpuAccounting> out;
        for (auto& r : replicas_) {
            accrue(r);
            for (std::int64_t g = 0; g < spec_.tp_size; ++g) {
                GpuAccounting a;
                a.gpu_id = r.id * spec_.tp_size + g;
                a.exec_time = r.exec;
                a.idle_time = r.idle;
                out.push_back(a);
            }
        }
        return out;
    }

    void check_accounting() {
        for (auto& r : replicas_) {
            accrue(r);
            if (std::abs(r.exec + r.idle - now_) > 1e-6 * std::max(1.0, now_)) {
                throw SimulationError("gpu accounting does not conserve elapsed time");
            }
        }
    }

    // --- event handlers ---------------------------------------------------

    bool handle(const Event& ev) {
        switch (ev.kind) {
            case EventKind::Arrival:
                on_arrival(ev);
                return true;
            case EventKind::PrefillLayerDone:
                on_short_layer(ev);
                return false;
            case EventKind::PrefillDone:
                if (records_[ev.request].klass == RequestClass::Long) {
                    on_long_prefill_done(ev);
                } else {
                    on_short_prefill_done(ev);
                }
                return true;
            case EventKind::KvMigrationDone:
                on_kv_arrival(ev);
                return false;
            case EventKind::DecodeIterDone:
                if (ev.request >= 0 && records_[ev.request].klass == RequestClass::Long) {
                    on_long_decode_iter(ev);
                    return true;
                }
                if (ev.request >= 0) {
                    on_short_inplace_decode_done(ev);
                    return true;
                }
                on_decode_replica_iter(ev);
                return false;
            case EventKind::PreemptApplied:
                on_preempt_applied(ev);
                return false;
            case EventKind::ResumeApplied:
                on_resume_applied(ev);
                return true;
        }
        return false;
    }

    void on_arrival(const Event& ev) {
        const auto& q = requests_[ev.request];
        queue_pos_[q.id] = queue_.size();
        queue_.push_back({q.id, q.klass, q.input_len});
        ++queued_count_;
    }

    void on_short_layer(const Event& ev) {
        auto& sr = shorts_[ev.request];
        sr.layers_done = ev.aux;
        records_[ev.request].layers_done = ev.aux;
        if (sr.decode_replica >= 0) {
            // This layer's KV leaves immediately; one transfer channel per
            // request, transfers serialize on it.
            const double start = std::max(now_, sr.channel_free_at);
            sr.channel_free_at = start + sr.per_layer_transfer;
        }
        const std::int64_t next = ev.aux + 1;
        sr.next_layer_at = now_ + sr.layer_time;
        ++sr.epoch;
        schedule(sr.next_layer_at,
                 next == model_.num_layers ? EventKind::PrefillDone : EventKind::PrefillLayerDone,
                 ev.request, sr.replica, sr.epoch, next);
    }

    void on_short_prefill_done(const Event& ev) {
        auto& sr = shorts_[ev.request];
        auto& rec = records_[ev.request];
        auto& r = replicas_[sr.replica];
        sr.layers_done = model_.num_layers;
        rec.layers_done = model_.num_layers;
        rec.charged_prefill = sr.layer_time * static_cast<double>(model_.num_layers);

        if (sr.decode_replica >= 0) {
            const double start = std::max(now_, sr.channel_free_at);
            const double arrival = start + sr.per_layer_transfer;
            sr.channel_free_at = arrival;
            rec.phase = Phase::MigratingKV;
            schedule(arrival, EventKind::KvMigrationDone, ev.request, sr.decode_replica, 0, 0);
            release_short_slot(ev.request, r);
        } else {
            // Decode runs in place on the same replica.
            rec.phase = Phase::Decoding;
            rec.first_token = now_;
            const double block = decode_block_time(rec.input_len, rec.output_len, model_, spec_);
            schedule(now_ + block, EventKind::DecodeIterDone, ev.request, sr.replica, 0,
                     rec.output_len);
        }
    }

    void on_kv_arrival(const Event& ev) {
        auto& rec = records_[ev.request];
        auto& sr = shorts_[ev.request];
        rec.phase = Phase::Decoding;
        rec.first_token = now_;
        auto& dr = decode_replicas_[static_cast<std::size_t>(sr.decode_replica)];
        dr.pending_tokens -= rec.input_len;
        dr.residents.push_back(ev.request);
        dr.sum_context += rec.input_len;
        if (!dr.iterating) {
            start_decode_replica_iteration(dr);
        }
    }

    void start_decode_replica_iteration(DecodeReplica& dr) {
        dr.batch = dr.residents;
        dr.iterating = true;
        set_busy(replicas_[dr.replica], true);
        const double iter = decode_iter_time(static_cast<std::int64_t>(dr.batch.size()),
                                             dr.sum_context, model_, spec_);
        schedule(now_ + iter, EventKind::DecodeIterDone, -1, dr.replica, 0, 0);
    }

    void on_decode_replica_iter(const Event& ev) {
        auto& dr = decode_replicas_[static_cast<std::size_t>(ev.replica)];
        dr.iterating = false;
        for (const auto id : dr.batch) {
            auto& rec = records_[id];
            auto& sr = shorts_[id];
            ++sr.tokens_generated;
            dr.sum_context += 1;
            if (sr.tokens_generated >= rec.output_len) {
                rec.phase = Phase::Done;
                rec.finish = now_;
                dr.sum_context -= rec.input_len + sr.tokens_generated;
                dr.residents.erase(std::find(dr.residents.begin(), dr.residents.end(), id));
            }
        }
        dr.batch.clear();
        if (!dr.residents.empty()) {
            start_decode_replica_iteration(dr);
        } else {
            set_busy(replicas_[dr.replica], false);
        }
    }

    void on_short_inplace_decode_done(const Event& ev) {
        auto& rec = records_[ev.request];
        rec.phase = Phase::Done;
        rec.finish = now_;
        release_short_slot(ev.request, replicas_[shorts_[ev.request].replica]);
    }

    // Removes a short from its replica (running slot or colocated list) and
    // advances the replica's local queue / gang / idle state.
    void release_short_slot(std::int64_t id, ReplicaState& r) {
        auto& sr = shorts_[id];
        r.queue_tokens -= records_[id].input_len;
        if (sr.colocated) {
            r.coloc_tokens -= records_[id].input_len;
            r.coloc_shorts.erase(std::find(r.coloc_shorts.begin(), r.coloc_shorts.end(), id));
            if (r.decode_long >= 0) {
                if (r.coloc_shorts.empty()) r.state = BusyState::LongDecode;
                return;  // long still decoding; replica stays busy
            }
            sr.colocated = false;
            advance_replica(r);
            return;
        }
        r.running_short = -1;
        if (sr.in_window) {
            window_short_finished(id, r);
            return;
        }
        advance_replica(r);
    }

    // Starts the next locally queued short, or goes idle (possibly waking a
    // claiming long's gang).
    void advance_replica(ReplicaState& r) {
        if (r.running_short < 0 && !r.local_queue.empty()) {
            const auto next = r.local_queue.front();
            r.local_queue.pop_front();
            begin_short_service(next, r, shorts_[next].in_window);
            return;
        }
        if (r.running_short < 0 && r.coloc_shorts.empty() && r.decode_long < 0) {
            r.state = BusyState::Idle;
            set_busy(r, false);
            if (r.claimed_by >= 0) {
                try_gang_start(r.claimed_by);
            }
        }
    }

    void window_short_finished(std::int64_t id, ReplicaState& r) {
        auto& lr = longs_.at(r.claimed_by);
        shorts_[id].in_window = false;
        --lr.window_outstanding;
        if (!r.local_queue.empty()) {
            const auto next = r.local_queue.front();
            r.local_queue.pop_front();
            begin_short_service(next, r, true);
        } else {
            r.state = BusyState::Idle;
            set_busy(r, false);
        }
        if (lr.window_outstanding == 0) {
            resume_long(r.claimed_by);
        }
    }

    void resume_long(std::int64_t long_id) {
        auto& lr = longs_.at(long_id);
        auto& rec = records_[long_id];
        if (lr.decoding) {
            // Decode pauses carry no staging cost: KV stays resident.
            schedule(now_, EventKind::ResumeApplied, long_id, lr.replicas.front(), 0, 0);
            return;
        }
        const double restore = checkpoint_overhead(rec.input_len, model_, spec_).seconds;
        rec.sched_overhead += restore;
        for (const auto rid : lr.replicas) {
            auto& r = replicas_[rid];
            r.state = BusyState::LongPrefill;
            set_busy(r, true);
        }
        schedule(now_ + restore, EventKind::ResumeApplied, long_id, lr.replicas.front(), 0, 0);
    }

    void on_resume_applied(const Event& ev) {
        auto& lr = longs_.at(ev.request);
        auto& rec = records_[ev.request];
        rec.suspension_total += now_ - lr.pause_decision_time;
        if (lr.decoding) {
            lr.decode_paused = false;
            for (const auto rid : lr.replicas) {
                auto& r = replicas_[rid];
                r.state = r.coloc_shorts.empty() ? BusyState::LongDecode : BusyState::Colocated;
                set_busy(r, true);
            }
            schedule_long_decode_iter(ev.request);
            return;
        }
        rec.phase = Phase::Prefilling;
        lr.segment_start = now_;
        ++lr.epoch;
        schedule(now_ + lr.remaining, EventKind::PrefillDone, ev.request, lr.replicas.front(),
                 lr.epoch, 0);
    }

    void on_long_prefill_done(const Event& ev) {
        auto& lr = longs_.at(ev.request);
        auto& rec = records_[ev.request];
        rec.charged_prefill += now_ - lr.segment_start;
        lr.remaining = 0.0;
        rec.layers_done = model_.num_layers;
        rec.paused_layer_progress = 0.0;
        rec.phase = Phase::Decoding;
        rec.first_token = now_;
        lr.decoding = true;
        lr.tokens_generated = 0;
        for (const auto rid : lr.replicas) {
            auto& r = replicas_[rid];
            r.state = BusyState::LongDecode;
            r.decode_long = ev.request;
        }
        schedule_long_decode_iter(ev.request);
    }

    void schedule_long_decode_iter(std::int64_t id) {
        auto& lr = longs_.at(id);
        const auto& rec = records_[id];
        const std::int64_t ctx = rec.input_len + lr.tokens_generated;
        double iter = decode_iter_time(1, ctx, model_, spec_);
        if (coloc_active(lr)) {
            const double overhead = coloc_decode_overhead(model_, spec_);
            if (overhead > 0.1 * iter) {
                throw SimulationError("colocation overhead breaches the 10% decode bound");
            }
            iter += overhead;
        }
        schedule(now_ + iter, EventKind::DecodeIterDone, id, lr.replicas.front(), 0, 0);
    }

    bool coloc_active(const LongRun& lr) const {
        for (const auto rid : lr.replicas) {
            if (!replicas_[rid].coloc_shorts.empty()) return true;
        }
        return false;
    }

    void on_long_decode_iter(const Event& ev) {
        auto& lr = longs_.at(ev.request);
        auto& rec = records_[ev.request];
        ++lr.tokens_generated;
        // Serialize this iteration's compute share into colocated prefills.
        const double share = decode_compute_share(model_, spec_);
        for (const auto rid : lr.replicas) {
            for (const auto sid : replicas_[rid].coloc_shorts) {
                inflate_short_prefill(sid, share);
            }
        }
        if (lr.tokens_generated >= rec.output_len) {
            finish_long(ev.request);
            return;
        }
        if (lr.decode_pause_pending) {
            apply_decode_pause(ev.request);
            return;
        }
        schedule_long_decode_iter(ev.request);
    }

    void inflate_short_prefill(std::int64_t id, double extra) {
        auto& sr = shorts_[id];
        if (sr.layers_done >= model_.num_layers) return;
        sr.next_layer_at += extra;
        ++sr.epoch;
        const std::int64_t next = sr.layers_done + 1;
        schedule(sr.next_layer_at,
                 next == model_.num_layers ? EventKind::PrefillDone : EventKind::PrefillLayerDone,
                 id, sr.replica, sr.epoch, next);
    }

    void apply_decode_pause(std::int64_t id) {
        auto& lr = longs_.at(id);
        auto& rec = records_[id];
        lr.decode_pause_pending = false;
        lr.decode_paused = true;
        lr.pause_decision_time = now_;
        ++rec.preemptions;
        ++total_preemptions_;
        for (const auto rid : lr.replicas) {
            auto& r = replicas_[rid];
            if (r.running_short < 0 && !r.local_queue.empty()) {
                const auto next = r.local_queue.front();
                r.local_queue.pop_front();
                begin_short_service(next, r, true);
            } else if (r.running_short < 0 && r.coloc_shorts.empty()) {
                r.state = BusyState::Idle;
                set_busy(r, false);
            }
        }
    }

    void finish_long(std::int64_t id) {
        auto& lr = longs_.at(id);
        auto& rec = records_[id];
        rec.phase = Phase::Done;
        rec.finish = now_;
        const std::int64_t need = static_cast<std::int64_t>(lr.replicas.size());
        // Any pending decode-preemption window dissolves with the long; its
        // shorts run as ordinary work on the freed replicas.
        for (const auto rid : lr.replicas) {
            auto& r = replicas_[rid];
            for (const auto sid : r.local_queue) {
                shorts_[sid].in_window = false;
            }
            r.claimed_by = -1;
            r.decode_long = -1;
            r.queue_tokens -= rec.input_len / need;
        }
        const auto freed = lr.replicas;
        longs_.erase(id);
        for (const auto rid : freed) {
            auto& r = replicas_[rid];
            if (!r.coloc_shorts.empty()) {
                r.state = BusyState::ShortPrefill;
            } else if (r.running_short >= 0) {
                r.state = BusyState::ShortPrefill;
            } else if (!r.local_queue.empty()) {
                advance_replica(r);
            } else {
                r.state = BusyState::Idle;
                set_busy(r, false);
            }
        }
    }

    void on_preempt_applied(const Event& ev) {
        auto& lr = longs_.at(ev.request);
        if (lr.window_outstanding == 0) {
            throw SimulationError("preemption window with no shorts");
        }
        for (const auto rid : lr.replicas) {
            auto& r = replicas_[rid];
            if (!r.local_queue.empty()) {
                const auto next = r.local_queue.front();
                r.local_queue.pop_front();
                begin_short_service(next, r, true);
            } else {
                r.state = BusyState::Idle;
                set_busy(r, false);
            }
        }
    }

    // --- dispatch ---------------------------------------------------------

    void run_dispatch() {
        if (queued_count_ == 0) return;
        compact_queue();
        DispatchInput input;
        input.queue = std::span<const QueueItem>(queue_.data(), queue_.size());
        input.replicas.reserve(replicas_.size());
        for (const auto& r : replicas_) {
            ReplicaSnapshot s;
            s.id = r.id;
            s.node_id = r.node;
            s.role = r.role;
            s.state = r.state;
            s.queue_tokens = r.queue_tokens;
            s.claimed_by = r.claimed_by;
            s.decode_long = r.decode_long;
            s.coloc_tokens = r.coloc_tokens;
            s.pool = r.pool;
            input.replicas.push_back(s);
        }
        for (const auto& [id, lr] : longs_) {
            if (lr.gang_started && !lr.decoding && records_[id].phase == Phase::Prefilling) {
                PreemptibleLong p;
                p.id = id;
                p.remaining_work = lr.remaining - (now_ - lr.segment_start);
                p.replicas = lr.replicas;
                input.prefilling_longs.push_back(std::move(p));
            } else if (lr.decoding && !lr.decode_paused && !lr.decode_pause_pending &&
                       policy_.has(Ablation::NoColoc)) {
                PreemptibleLong p;
                p.id = id;
                p.remaining_work =
                    static_cast<double>(records_[id].output_len - lr.tokens_generated) *
                    decode_iter_time(1, records_[id].input_len + lr.tokens_generated, model_,
                                     spec_);
                p.replicas = lr.replicas;
                input.decoding_longs.push_back(std::move(p));
            }
        }

        const auto result = dispatch(policy_, input, model_, spec_);
        const double decision_seconds =
            static_cast<double>(result.work_units) * kSchedWorkUnitSeconds;

        std::map<std::int64_t, std::vector<std::pair<std::int64_t, std::int64_t>>> preempt_groups;
        for (const auto& d : result.decisions) {
            switch (d.action) {
                case DecisionAction::DispatchPrefill:
                    records_[d.request_id].sched_overhead += decision_seconds;
                    if (records_[d.request_id].klass == RequestClass::Long) {
                        apply_long_dispatch(d);
                    } else {
                        apply_short_dispatch(d);
                    }
                    break;
                case DecisionAction::ColocateWithLongDecode:
                    records_[d.request_id].sched_overhead += decision_seconds;
                    apply_colocation(d);
                    break;
                case DecisionAction::PreemptAndDispatch:
                    records_[d.request_id].sched_overhead += decision_seconds;
                    preempt_groups[d.victim_long].push_back(
                        {d.request_id, d.target_replicas.at(0)});
                    break;
                case DecisionAction::Enqueue:
                case DecisionAction::Starve:
                    break;
            }
        }
        for (const auto& [victim, assignment] : preempt_groups) {
            apply_preemption(victim, assignment);
        }
    }

    void remove_from_queue(std::int64_t id) {
        const auto it = queue_pos_.find(id);
        if (it == queue_pos_.end() || queue_[it->second].id != id) {
            throw SimulationError("dispatched request not in global queue");
        }
        queue_[it->second].id = -1;
        queue_pos_.erase(it);
        --queued_count_;
    }

    void compact_queue() {
        if (queue_.size() > 64 && queued_count_ < static_cast<std::int64_t>(queue_.size() / 2)) {
            std::vector<QueueItem> packed;
            packed.reserve(static_cast<std::size_t>(queued_count_));
            queue_pos_.clear();
            for (const auto& item : queue_) {
                if (item.id >= 0) {
                    queue_pos_[item.id] = packed.size();
                    packed.push_back(item);
                }
            }
            queue_ = std::move(packed);
        }
    }

    void begin_short_service(std::int64_t id, ReplicaState& r, bool in_window) {
        auto& rec = records_[id];
        auto& sr = shorts_[id];
        sr.replica = r.id;
        sr.in_window = in_window;
        sr.colocated = false;
        rec.phase = Phase::Prefilling;
        if (rec.prefill_start < 0.0) rec.prefill_start = now_;
        rec.planned_prefill = prefill_time_single(rec.input_len, model_, spec_);
        r.running_short = id;
        r.state = BusyState::ShortPrefill;
        set_busy(r, true);
        start_short_prefill(id);
    }

    void start_short_prefill(std::int64_t id) {
        auto& rec = records_[id];
        auto& sr = shorts_[id];
        sr.layer_time = rec.planned_prefill / static_cast<double>(model_.num_layers);
        sr.layers_done = 0;
        if (policy_.disaggregates()) {
            sr.decode_replica = pick_decode_replica();
            decode_replicas_[static_cast<std::size_t>(sr.decode_replica)].pending_tokens +=
                rec.input_len;
            const auto& src = replicas_[sr.replica];
            const auto& dst = replicas_[sr.decode_replica];
            const double bw = src.node == dst.node ? spec_.intra_node_bw : spec_.inter_node_bw;
            sr.per_layer_transfer =
                static_cast<double>(
                    kv_layer_bytes(rec.input_len, model_, spec_.bytes_per_element)) /
                bw;
            sr.channel_free_at = now_;
        } else {
            sr.decode_replica = -1;
        }
        ++sr.epoch;
        if (policy_.kind == PolicyKind::PecSched) {
            // Per-layer chain so colocated decode shares can stretch it and
            // KV can stream out layer by layer.
            sr.next_layer_at = now_ + sr.layer_time;
            schedule(sr.next_layer_at,
                     model_.num_layers == 1 ? EventKind::PrefillDone : EventKind::PrefillLayerDone,
                     id, sr.replica, sr.epoch, 1);
        } else {
            schedule(now_ + rec.planned_prefill, EventKind::PrefillDone, id, sr.replica, sr.epoch,
                     model_.num_layers);
        }
    }

    std::int64_t pick_decode_replica() {
        std::int64_t best = -1;
        std::int64_t best_load = 0;
        for (const auto& dr : decode_replicas_) {
            const std::int64_t load = dr.sum_context + dr.pending_tokens;
            if (best < 0 || load < best_load) {
                best = dr.replica;
                best_load = load;
            }
        }
        if (best < 0) {
            throw SimulationError("no decode replica available");
        }
        return best;
    }

    void apply_short_dispatch(const ScheduleDecision& d) {
        auto& r = replicas_[d.target_replicas.at(0)];
        if (r.state != BusyState::Idle || r.running_short >= 0 || r.claimed_by >= 0 ||
            r.role != ReplicaRole::General) {
            throw SimulationError("short dispatched to an unavailable replica");
        }
        remove_from_queue(d.request_id);
        r.queue_tokens += records_[d.request_id].input_len;
        begin_short_service(d.request_id, r, false);
    }

    void apply_long_dispatch(const ScheduleDecision& d) {
        if (!d.sp_plan.has_value()) {
            throw SimulationError("long dispatch without an SP plan");
        }
        remove_from_queue(d.request_id);
        LongRun lr;
        lr.replicas = d.target_replicas;
        lr.plan = *d.sp_plan;
        lr.remaining = lr.plan.total_time;
        auto& rec = records_[d.request_id];
        rec.planned_prefill = lr.plan.total_time;
        const std::int64_t need = static_cast<std::int64_t>(lr.replicas.size());
        bool all_idle = true;
        for (const auto rid : lr.replicas) {
            auto& r = replicas_[rid];
            if (r.claimed_by >= 0 || r.role != ReplicaRole::General) {
                throw SimulationError("long claim on an unavailable replica");
            }
            r.claimed_by = d.request_id;
            r.queue_tokens += rec.input_len / need;
            if (r.state != BusyState::Idle) all_idle = false;
        }
        longs_.emplace(d.request_id, std::move(lr));
        if (all_idle) {
            gang_start(d.request_id);
        }
    }

    void try_gang_start(std::int64_t long_id) {
        const auto it = longs_.find(long_id);
        if (it == longs_.end() || it->second.gang_started) return;
        for (const auto rid : it->second.replicas) {
            if (replicas_[rid].state != BusyState::Idle) return;
        }
        gang_start(long_id);
    }

    void gang_start(std::int64_t long_id) {
        auto& lr = longs_.at(long_id);
        auto& rec = records_[long_id];
        lr.gang_started = true;
        lr.segment_start = now_;
        rec.phase = Phase::Prefilling;
        if (rec.prefill_start < 0.0) rec.prefill_start = now_;
        for (const auto rid : lr.replicas) {
            auto& r = replicas_[rid];
            r.state = BusyState::LongPrefill;
            set_busy(r, true);
        }
        ++lr.epoch;
        schedule(now_ + lr.remaining, EventKind::PrefillDone, long_id, lr.replicas.front(),
                 lr.epoch, 0);
    }

    void apply_colocation(const ScheduleDecision& d) {
        auto& r = replicas_[d.target_replicas.at(0)];
        auto& rec = records_[d.request_id];
        if (r.decode_long < 0) {
            throw SimulationError("colocation target is not decoding a long request");
        }
        const std::int64_t threshold =
            (policy_.coloc_token_threshold > 0 ? policy_.coloc_token_threshold
                                               : coloc_threshold_tokens_per_gpu(model_, spec_)) *
            spec_.tp_size;
        if (r.coloc_tokens + rec.input_len > threshold) {
            throw SimulationError("colocation breaches the per-GPU token threshold");
        }
        remove_from_queue(d.request_id);
        r.coloc_shorts.push_back(d.request_id);
        r.coloc_tokens += rec.input_len;
        r.queue_tokens += rec.input_len;
        r.state = BusyState::Colocated;
        auto& sr = shorts_[d.request_id];
        sr.replica = r.id;
        sr.in_window = false;
        rec.phase = Phase::Prefilling;
        if (rec.prefill_start < 0.0) rec.prefill_start = now_;
        rec.planned_prefill = prefill_time_single(rec.input_len, model_, spec_);
        start_short_prefill(d.request_id);
        sr.colocated = true;
    }

    void apply_preemption(std::int64_t victim,
                          const std::vector<std::pair<std::int64_t, std::int64_t>>& assignment) {
        auto& lr = longs_.at(victim);
        auto& rec = records_[victim];
        if (lr.decoding) {
            if (!policy_.has(Ablation::NoColoc)) {
                throw SimulationError("decode preemption outside the NoColoc ablation");
            }
            lr.decode_pause_pending = true;
            for (const auto& [sid, rid] : assignment) {
                remove_from_queue(sid);
                auto& r = replicas_[rid];
                r.local_queue.push_back(sid);
                r.queue_tokens += records_[sid].input_len;
                shorts_[sid].in_window = true;
                ++lr.window_outstanding;
            }
            return;
        }
        if (rec.phase != Phase::Prefilling || !lr.gang_started) {
            throw SimulationError("preemption of a long that is not prefilling");
        }
        const double consumed = now_ - lr.segment_start;
        rec.charged_prefill += consumed;
        lr.remaining -= consumed;
        ++lr.epoch;  // invalidates the pending PrefillDone
        rec.phase = Phase::PrefillPaused;
        ++rec.preemptions;
        ++total_preemptions_;
        lr.pause_decision_time = now_;
        const double layer = rec.planned_prefill / static_cast<double>(model_.num_layers);
        const double done = rec.planned_prefill - lr.remaining;
        rec.layers_done =
            std::min<std::int64_t>(model_.num_layers, static_cast<std::int64_t>(done / layer));
        rec.paused_layer_progress = done / layer - static_cast<double>(rec.layers_done);

        const double save = checkpoint_overhead(rec.input_len, model_, spec_).seconds;
        rec.sched_overhead += save;
        for (const auto& [sid, rid] : assignment) {
            remove_from_queue(sid);
            auto& r = replicas_[rid];
            r.local_queue.push_back(sid);
            r.queue_tokens += records_[sid].input_len;
            shorts_[sid].in_window = true;
            ++lr.window_outstanding;
        }
        // Replicas stay busy staging the checkpoint until the pause applies.
        schedule(now_ + save, EventKind::PreemptApplied, victim, lr.replicas.front(), 0, 0);
    }

    // --- teardown ---------------------------------------------------------

    void finalize() {
        for (auto& rec : records_) {
            if (rec.phase == Phase::Queued) {
                rec.phase = Phase::Starved;
            } else if (rec.phase != Phase::Done) {
                throw SimulationError("request left in flight after drain");
            }
        }
    }

    const std::vector<Request>& requests_;
    ModelSpec model_;
    ClusterSpec spec_;
    PolicyConfig policy_;
    RunOptions opts_;
    Cluster cluster_;

    std::priority_queue<Event, std::vector<Event>, EventAfter> heap_;
    std::uint64_t next_seq_ = 0;
    double now_ = 0.0;
    std::uint64_t events_processed_ = 0;

    std::vector<ReplicaState> replicas_;
    std::vector<DecodeReplica> decode_replicas_;
    std::vector<RequestRecord> records_;
    std::vector<ShortRun> shorts_;
    std::map<std::int64_t, LongRun> longs_;
    std::vector<QueueItem> queue_;
    std::unordered_map<std::int64_t, std::size_t> queue_pos_;
    std::int64_t queued_count_ = 0;
    std::int64_t total_preemptions_ = 0;
};

}  // namespace

SimResult run(const std::vector<Request>& requests, const ModelSpec& model,
              const ClusterSpec& spec, const PolicyConfig& policy, const RunOptions& opts) {
    Sim sim(requests, model, spec, policy, opts);
    return sim.run();
}

}  // namespace pecsim
