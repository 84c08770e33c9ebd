#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "pecsim/rng.hpp"
#include "pecsim/sched.hpp"

using namespace pecsim;

namespace {

ClusterSpec spec_70b() {
    auto s = cluster_preset_for("70b");
    return s;
}

ModelSpec model_70b() { return model_preset("70b"); }

ReplicaSnapshot general(std::int64_t id, std::int64_t node, BusyState state = BusyState::Idle) {
    ReplicaSnapshot r;
    r.id = id;
    r.node_id = node;
    r.role = ReplicaRole::General;
    r.state = state;
    return r;
}

std::vector<ReplicaSnapshot> eight_replicas(std::int64_t decode_only = 0) {
    std::vector<ReplicaSnapshot> out;
    for (std::int64_t i = 0; i < 8; ++i) {
        auto r = general(i, i / 2);
        if (i < decode_only) r.role = ReplicaRole::DecodeOnly;
        out.push_back(r);
    }
    return out;
}

std::int64_t max_bin_load(const std::vector<std::vector<std::int64_t>>& bins,
                          const std::vector<QueueItem>& items) {
    std::int64_t worst = 0;
    for (const auto& bin : bins) {
        std::int64_t load = 0;
        for (const auto id : bin) {
            const auto it = std::find_if(items.begin(), items.end(),
                                         [&](const QueueItem& q) { return q.id == id; });
            load += it->input_len;
        }
        worst = std::max(worst, load);
    }
    return worst;
}

// Exhaustive optimal max-load partition for small inputs.
std::int64_t brute_force_optimum(const std::vector<std::int64_t>& tokens, std::int64_t bins) {
    const std::size_t n = tokens.size();
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    std::vector<std::int64_t> load(static_cast<std::size_t>(bins), 0);
    const auto recurse = [&](auto&& self, std::size_t i) -> void {
        if (i == n) {
            best = std::min(best, *std::max_element(load.begin(), load.end()));
            return;
        }
        for (auto& l : load) {
            l += tokens[i];
            self(self, i + 1);
            l -= tokens[i];
        }
    };
    recurse(recurse, 0);
    return best;
}

bool same_decisions(const DispatchResult& a, const DispatchResult& b) {
    if (a.decisions.size() != b.decisions.size()) return false;
    for (std::size_t i = 0; i < a.decisions.size(); ++i) {
        const auto& x = a.decisions[i];
        const auto& y = b.decisions[i];
        if (x.request_id != y.request_id || x.action != y.action ||
            x.target_replicas != y.target_replicas || x.victim_long != y.victim_long) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("balance matches the brute-force optimum on the worked example") {
    std::vector<QueueItem> items = {{0, RequestClass::Short, 8},
                                    {1, RequestClass::Short, 7},
                                    {2, RequestClass::Short, 3},
                                    {3, RequestClass::Short, 2}};
    const auto bins = balance_preemption_batches(items, 2);
    REQUIRE(bins.size() == 2);
    CHECK(max_bin_load(bins, items) == brute_force_optimum({8, 7, 3, 2}, 2));
    CHECK(max_bin_load(bins, items) == 10);
}

TEST_CASE("balance trivial cases") {
    std::vector<QueueItem> items = {{0, RequestClass::Short, 8}, {1, RequestClass::Short, 3}};
    const auto one = balance_preemption_batches(items, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].size() == 2);

    std::vector<QueueItem> equal = {{0, RequestClass::Short, 4},
                                    {1, RequestClass::Short, 4},
                                    {2, RequestClass::Short, 4},
                                    {3, RequestClass::Short, 4}};
    const auto two = balance_preemption_batches(equal, 2);
    CHECK(two[0].size() == 2);
    CHECK(two[1].size() == 2);
    CHECK(max_bin_load(two, equal) == 8);
}

TEST_CASE("greedy longest-first stays within the Graham bound of optimum") {
    Rng rng(321);
    for (int trial = 0; trial < 120; ++trial) {
        const std::int64_t k = rng.uniform_int(2, 4);
        const std::int64_t n = rng.uniform_int(1, 8);
        std::vector<QueueItem> items;
        std::vector<std::int64_t> tokens;
        for (std::int64_t i = 0; i < n; ++i) {
            const auto t = rng.uniform_int(1, 400);
            items.push_back({i, RequestClass::Short, t});
            tokens.push_back(t);
        }
        const auto bins = balance_preemption_batches(items, k);
        const auto got = max_bin_load(bins, items);
        const auto opt = brute_force_optimum(tokens, k);
        CHECK(static_cast<double>(got) <=
              (4.0 / 3.0 - 1.0 / (3.0 * static_cast<double>(k))) * static_cast<double>(opt) + 1e-9);
    }
}

TEST_CASE("fifo dispatches queue prefix onto idle replicas") {
    DispatchInput input;
    std::vector<QueueItem> queue = {{0, RequestClass::Short, 500}, {1, RequestClass::Short, 700}};
    input.queue = queue;
    input.replicas = eight_replicas();
    PolicyConfig cfg;
    cfg.kind = PolicyKind::Fifo;
    const auto out = dispatch(cfg, input, model_70b(), spec_70b());
    REQUIRE(out.decisions.size() == 2);
    CHECK(out.decisions[0].action == DecisionAction::DispatchPrefill);
    CHECK(out.decisions[1].action == DecisionAction::DispatchPrefill);
    CHECK(out.decisions[0].target_replicas != out.decisions[1].target_replicas);
}

TEST_CASE("fifo head-of-line long blocks the shorts behind it") {
    DispatchInput input;
    // 500K long needs 7 replicas but only 4 are idle.
    std::vector<QueueItem> queue = {{0, RequestClass::Long, 500'000},
                                    {1, RequestClass::Short, 500}};
    input.queue = queue;
    input.replicas = eight_replicas();
    for (std::int64_t i = 4; i < 8; ++i) {
        input.replicas[static_cast<std::size_t>(i)].state = BusyState::ShortPrefill;
    }
    PolicyConfig cfg;
    cfg.kind = PolicyKind::Fifo;
    const auto out = dispatch(cfg, input, model_70b(), spec_70b());
    CHECK(out.decisions.empty());
}

TEST_CASE("fifo empty queue yields no decisions") {
    DispatchInput input;
    input.replicas = eight_replicas();
    PolicyConfig cfg;
    cfg.kind = PolicyKind::Fifo;
    CHECK(dispatch(cfg, input, model_70b(), spec_70b()).decisions.empty());
}

TEST_CASE("reservation keeps classes inside their pools") {
    DispatchInput input;
    std::vector<QueueItem> queue = {{0, RequestClass::Short, 500}, {1, RequestClass::Short, 600}};
    input.queue = queue;
    input.replicas = eight_replicas();
    // Long pool: replicas 0..6; short pool: replica 7 (busy).
    for (std::int64_t i = 0; i < 7; ++i) {
        input.replicas[static_cast<std::size_t>(i)].pool = 1;
    }
    input.replicas[7].state = BusyState::ShortPrefill;
    PolicyConfig cfg;
    cfg.kind = PolicyKind::Reservation;
    const auto blocked = dispatch(cfg, input, model_70b(), spec_70b());
    CHECK(blocked.decisions.empty());  // idle long pool is off limits to shorts

    input.replicas[7].state = BusyState::Idle;
    const auto ok = dispatch(cfg, input, model_70b(), spec_70b());
    REQUIRE(ok.decisions.size() == 1);
    CHECK(ok.decisions[0].request_id == 0);
    CHECK(ok.decisions[0].target_replicas == std::vector<std::int64_t>{7});
}

TEST_CASE("priority serves queued shorts before any long") {
    DispatchInput input;
    std::vector<QueueItem> queue = {{0, RequestClass::Long, 100'000},
                                    {1, RequestClass::Short, 400}};
    input.queue = queue;
    input.replicas = eight_replicas();
    for (std::int64_t i = 0; i < 7; ++i) {
        input.replicas[static_cast<std::size_t>(i)].state = BusyState::ShortPrefill;
    }
    PolicyConfig cfg;
    cfg.kind = PolicyKind::Priority;
    const auto out = dispatch(cfg, input, model_70b(), spec_70b());
    REQUIRE(out.decisions.size() == 1);
    CHECK(out.decisions[0].request_id == 1);
}

TEST_CASE("priority dispatches longs when no shorts are queued") {
    DispatchInput input;
    std::vector<QueueItem> queue = {{0, RequestClass::Long, 100'000}};
    input.queue = queue;
    input.replicas = eight_replicas();
    PolicyConfig cfg;
    cfg.kind = PolicyKind::Priority;
    const auto out = dispatch(cfg, input, model_70b(), spec_70b());
    REQUIRE(out.decisions.size() == 1);
    CHECK(out.decisions[0].request_id == 0);
    CHECK(out.decisions[0].sp_plan.has_value());
    // 100K tokens over 72K-token replicas: two replicas.
    CHECK(out.decisions[0].target_replicas.size() == 2);
}

TEST_CASE("pecsched prefers an idle general replica") {
    DispatchInput input;
    std::vector<QueueItem> queue = {{0, RequestClass::Short, 400}};
    input.queue = queue;
    input.replicas = eight_replicas(1);
    PolicyConfig cfg;
    cfg.kind = PolicyKind::PecSched;
    const auto out = dispatch(cfg, input, model_70b(), spec_70b());
    REQUIRE(out.decisions.size() == 1);
    CHECK(out.decisions[0].action == DecisionAction::DispatchPrefill);
    CHECK(out.decisions[0].target_replicas == std::vector<std::int64_t>{1});
}

TEST_CASE("pecsched preempts the long prefill with the most remaining work") {
    DispatchInput input;
    std::vector<QueueItem> queue = {{10, RequestClass::Short, 400},
                                    {11, RequestClass::Short, 300}};
    input.queue = queue;
    input.replicas = eight_replicas(1);
    for (std::int64_t i = 1; i < 8; ++i) {
        auto& r = input.replicas[static_cast<std::size_t>(i)];
        r.state = BusyState::LongPrefill;
        r.claimed_by = i < 4 ? 100 : 101;
    }
    input.prefilling_longs = {{100, 4.0, {1, 2, 3}}, {101, 9.0, {4, 5, 6, 7}}};
    PolicyConfig cfg;
    cfg.kind = PolicyKind::PecSched;
    const auto out = dispatch(cfg, input, model_70b(), spec_70b());
    REQUIRE(out.decisions.size() == 2);
    std::int64_t total_tokens[2] = {0, 0};
    for (const auto& d : out.decisions) {
        CHECK(d.action == DecisionAction::PreemptAndDispatch);
        CHECK(d.victim_long == 101);
        REQUIRE(d.target_replicas.size() == 1);
        const bool known = d.target_replicas[0] >= 4 && d.target_replicas[0] <= 7;
        CHECK(known);
    }
    (void)total_tokens;
}

TEST_CASE("pecsched colocates onto the decode replica with headroom") {
    DispatchInput input;
    std::vector<QueueItem> queue = {{10, RequestClass::Short, 400}};
    input.queue = queue;
    input.replicas = eight_replicas(1);
    for (std::int64_t i = 1; i < 8; ++i) {
        auto& r = input.replicas[static_cast<std::size_t>(i)];
        r.state = BusyState::LongDecode;
        r.claimed_by = 100;
        r.decode_long = 100;
    }
    input.replicas[3].coloc_tokens = 50;
    PolicyConfig cfg;
    cfg.kind = PolicyKind::PecSched;
    const auto out = dispatch(cfg, input, model_70b(), spec_70b());
    REQUIRE(out.decisions.size() == 1);
    CHECK(out.decisions[0].action == DecisionAction::ColocateWithLongDecode);
    CHECK(out.decisions[0].target_replicas == std::vector<std::int64_t>{1});

    // NoColoc turns the same situation into a decode preemption.
    cfg.ablations = static_cast<unsigned>(Ablation::NoColoc);
    input.decoding_longs = {{100, 3.0, {1, 2, 3, 4, 5, 6, 7}}};
    const auto preempted = dispatch(cfg, input, model_70b(), spec_70b());
    REQUIRE(preempted.decisions.size() == 1);
    CHECK(preempted.decisions[0].action == DecisionAction::PreemptAndDispatch);
    CHECK(preempted.decisions[0].victim_long == 100);
}

TEST_CASE("pecsched with NoPreempt leaves blocked shorts queued") {
    DispatchInput input;
    std::vector<QueueItem> queue = {{10, RequestClass::Short, 400}};
    input.queue = queue;
    input.replicas = eight_replicas(1);
    for (std::int64_t i = 1; i < 8; ++i) {
        auto& r = input.replicas[static_cast<std::size_t>(i)];
        r.state = BusyState::LongPrefill;
        r.claimed_by = 100;
    }
    input.prefilling_longs = {{100, 4.0, {1, 2, 3, 4, 5, 6, 7}}};
    PolicyConfig cfg;
    cfg.kind = PolicyKind::PecSched;
    cfg.ablations = static_cast<unsigned>(Ablation::NoPreempt);
    CHECK(dispatch(cfg, input, model_70b(), spec_70b()).decisions.empty());
}

TEST_CASE("dispatch never targets decode-only replicas for prefill") {
    Rng rng(99);
    for (int trial = 0; trial < 60; ++trial) {
        DispatchInput input;
        input.replicas = eight_replicas(2);
        std::vector<QueueItem> queue;
        for (int i = 0; i < 5; ++i) {
            queue.push_back({i, rng.next_unit() < 0.8 ? RequestClass::Short : RequestClass::Long,
                             rng.next_unit() < 0.8 ? rng.uniform_int(16, 8000)
                                                   : rng.uniform_int(100'000, 500'000)});
        }
        input.queue = queue;
        for (const auto kind :
             {PolicyKind::Fifo, PolicyKind::Priority, PolicyKind::PecSched}) {
            PolicyConfig cfg;
            cfg.kind = kind;
            const auto out = dispatch(cfg, input, model_70b(), spec_70b());
            for (const auto& d : out.decisions) {
                for (const auto rid : d.target_replicas) {
                    CHECK(rid >= 2);
                }
            }
        }
    }
}

TEST_CASE("decisions are a pure function of the snapshot") {
    Rng rng(1234);
    for (int trial = 0; trial < 40; ++trial) {
        DispatchInput input;
        input.replicas = eight_replicas(1);
        for (auto& r : input.replicas) {
            const auto roll = rng.uniform_int(0, 3);
            if (roll == 1) r.state = BusyState::ShortPrefill;
            if (roll == 2) {
                r.state = BusyState::LongPrefill;
                r.claimed_by = 777;
            }
            r.queue_tokens = rng.uniform_int(0, 2000);
        }
        input.prefilling_longs = {{777, rng.uniform_real(1.0, 20.0), {5, 6, 7}}};
        std::vector<QueueItem> queue;
        for (int i = 0; i < 6; ++i) {
            queue.push_back({i, rng.next_unit() < 0.7 ? RequestClass::Short : RequestClass::Long,
                             rng.next_unit() < 0.7 ? rng.uniform_int(16, 8000)
                                                   : rng.uniform_int(100'000, 500'000)});
        }
        input.queue = queue;
        for (const auto kind : {PolicyKind::Fifo, PolicyKind::Reservation, PolicyKind::Priority,
                                PolicyKind::PecSched}) {
            PolicyConfig cfg;
            cfg.kind = kind;
            CHECK(same_decisions(dispatch(cfg, input, model_70b(), spec_70b()),
                                 dispatch(cfg, input, model_70b(), spec_70b())));
        }
    }
}

TEST_CASE("policy config validation") {
    PolicyConfig p;
    p.kind = PolicyKind::Fifo;
    p.ablations = static_cast<unsigned>(Ablation::NoColoc);
    CHECK_THROWS_AS(p.validate(), ConfigError);
    CHECK(policy_from_name("pecsched") == PolicyKind::PecSched);
    CHECK_THROWS_AS(policy_from_name("lifo"), ConfigError);
    PolicyConfig named;
    named.kind = PolicyKind::PecSched;
    named.ablations = ablation_from_name("no-fast-sp");
    CHECK(policy_name(named) == "pecsched-fsp");
}

TEST_CASE("reservation pool sizing covers the configured capacity") {
    PolicyConfig p;
    p.kind = PolicyKind::Reservation;
    const auto spec = spec_70b();  // 18K per GPU, 72K per replica
    CHECK(reservation_long_pool_size(p, spec) == 7);
    p.reservation_long_capacity = 3'000'000;
    CHECK_THROWS_AS(reservation_long_pool_size(p, spec), ConfigError);
}
