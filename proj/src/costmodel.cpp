#include "pecsim/costmodel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace pecsim {

namespace {

using u128 = unsigned __int128;

std::uint64_t to_u64(u128 v) {
    if (v > static_cast<u128>(UINT64_MAX)) {
        throw std::overflow_error("cost volume overflows 64 bits");
    }
    return static_cast<std::uint64_t>(v);
}

void check_stage_args(std::int64_t s, std::int64_t tp, std::int64_t g, const ModelSpec& model) {
    model.validate();
    if (s < 1 || tp < 1 || g < 1) {
        throw ConfigError("stage costs: segment length, TP size and GPU count must be >= 1");
    }
    if (g % tp != 0) {
        throw ConfigError("stage costs: GPUs in node must be divisible by TP size");
    }
    if (model.num_heads % tp != 0) {
        throw ConfigError("stage costs: num_heads must be divisible by TP size");
    }
}

}  // namespace

SpSpan make_span(const std::vector<std::int64_t>& replica_ids, const Cluster& cluster) {
    if (replica_ids.empty()) {
        throw ConfigError("make_span: no replicas");
    }
    std::set<std::int64_t> nodes;
    std::map<std::int64_t, std::int64_t> per_node;
    for (const auto id : replica_ids) {
        const auto node = cluster.replicas.at(static_cast<std::size_t>(id)).node_id;
        nodes.insert(node);
        per_node[node] += 1;
    }
    std::int64_t max_replicas = 0;
    for (const auto& [node, count] : per_node) max_replicas = std::max(max_replicas, count);
    SpSpan span;
    span.ring_nodes = static_cast<std::int64_t>(nodes.size());
    span.gpus_per_group = max_replicas * cluster.spec.tp_size;
    span.total_gpus = static_cast<std::int64_t>(replica_ids.size()) * cluster.spec.tp_size;
    return span;
}

StageCosts attn_stage_costs(SpStrategy strategy, std::int64_t segment_len,
                            const ModelSpec& model, std::int64_t tp, std::int64_t gpus_in_node) {
    check_stage_args(segment_len, tp, gpus_in_node, model);
    const u128 s = static_cast<u128>(segment_len);
    const u128 d = static_cast<u128>(model.model_dim);
    const u128 heads = static_cast<u128>(model.num_heads + model.num_kv_heads);
    const u128 dh = static_cast<u128>(model.head_dim);
    const u128 T = static_cast<u128>(tp);
    const u128 G = static_cast<u128>(gpus_in_node);

    StageCosts out;
    if (strategy == SpStrategy::MegatronSP) {
        out.comm_elements = to_u64(2 * s * d * (T - 1) * G);
        // d = Nh*dh and T | Nh keep the first term integral.
        out.comp_flops = to_u64(2 * s * d * heads * dh / T + 4 * s * s * T * d + 2 * s * d * d);
    } else {
        out.comm_elements =
            to_u64(2 * s * heads * dh * (G - 1) + (d * heads * dh + d * d) * (G / T) * (T - 1));
        out.comp_flops = to_u64(2 * s * d * heads * dh + 4 * s * s * G * d + 2 * s * d * d);
    }
    return out;
}

StageCosts mlp_stage_costs(SpStrategy strategy, std::int64_t segment_len,
                           const ModelSpec& model, std::int64_t tp, std::int64_t gpus_in_node) {
    check_stage_args(segment_len, tp, gpus_in_node, model);
    const u128 s = static_cast<u128>(segment_len);
    const u128 d = static_cast<u128>(model.model_dim);
    const u128 T = static_cast<u128>(tp);
    const u128 G = static_cast<u128>(gpus_in_node);

    StageCosts out;
    if (strategy == SpStrategy::MegatronSP) {
        out.comm_elements = to_u64(2 * s * d * (T - 1) * G);
    } else {
        out.comm_elements = to_u64(8 * d * d * (T - 1) * (G / T));
    }
    out.comp_flops = to_u64(16 * s * d * d);
    return out;
}

namespace {

struct PlanTimes {
    double comm = 0.0;
    double comp = 0.0;
};

PlanTimes plan_layer_times(const StageCosts& attn, const StageCosts& mlp,
                           std::int64_t segment_len, std::int64_t gpus_in_group,
                           const ModelSpec& model, const ClusterSpec& spec,
                           std::int64_t ring_nodes) {
    PlanTimes t;
    t.comp = (static_cast<double>(attn.comp_flops) + static_cast<double>(mlp.comp_flops)) /
             spec.gpu_compute_rate;
    const double bpe = static_cast<double>(spec.bytes_per_element);
    // Node volumes drain over the group's aggregate links; intra_node_bw is
    // the per-GPU link bandwidth.
    t.comm = (static_cast<double>(attn.comm_elements) + static_cast<double>(mlp.comm_elements)) *
             bpe / (spec.intra_node_bw * static_cast<double>(gpus_in_group));
    if (ring_nodes > 1) {
        const double kv_elems =
            2.0 * static_cast<double>(segment_len) *
            static_cast<double>(model.num_kv_heads * model.head_dim);
        t.comm += kv_elems * bpe * static_cast<double>(ring_nodes - 1) / spec.inter_node_bw;
    }
    return t;
}

SpPlan build_plan(SpStrategy attn_s, SpStrategy mlp_s, std::int64_t segment_len,
                  const ModelSpec& model, const ClusterSpec& spec, std::int64_t tp,
                  std::int64_t gpus_in_group, std::int64_t ring_nodes) {
    const auto attn = attn_stage_costs(attn_s, segment_len, model, tp, gpus_in_group);
    const auto mlp = mlp_stage_costs(mlp_s, segment_len, model, tp, gpus_in_group);
    const auto layer =
        plan_layer_times(attn, mlp, segment_len, gpus_in_group, model, spec, ring_nodes);
    SpPlan plan;
    plan.attn_strategy = attn_s;
    plan.mlp_strategy = mlp_s;
    plan.ring_nodes = ring_nodes;
    plan.segment_len = segment_len;
    plan.comm_time = layer.comm * static_cast<double>(model.num_layers);
    plan.comp_time = layer.comp * static_cast<double>(model.num_layers);
    plan.total_time = plan.comm_time + plan.comp_time;
    return plan;
}

}  // namespace

SpPlan select_sp_plan(std::int64_t total_input_len, const ModelSpec& model,
                      const ClusterSpec& spec, const SpSpan& span) {
    if (total_input_len <= 0) {
        throw ConfigError("select_sp_plan: input length must be positive");
    }
    const std::int64_t segment_len =
        (total_input_len + span.total_gpus - 1) / span.total_gpus;
    constexpr std::array<SpStrategy, 2> kStrategies = {SpStrategy::MegatronSP,
                                                       SpStrategy::UlyssesSP};
    bool have = false;
    SpPlan best;
    for (const auto attn_s : kStrategies) {
        for (const auto mlp_s : kStrategies) {
            const auto plan = build_plan(attn_s, mlp_s, segment_len, model, spec, spec.tp_size,
                                         span.gpus_per_group, span.ring_nodes);
            if (!have || plan.total_time < best.total_time) {
                have = true;
                best = plan;
            }
        }
    }
    return best;
}

SpPlan forced_ring_plan(std::int64_t total_input_len, const ModelSpec& model,
                        const ClusterSpec& spec, std::int64_t replica_count) {
    if (total_input_len <= 0 || replica_count < 1) {
        throw ConfigError("forced_ring_plan: bad arguments");
    }
    const std::int64_t total_gpus = replica_count * spec.tp_size;
    const std::int64_t segment_len = (total_input_len + total_gpus - 1) / total_gpus;
    return build_plan(SpStrategy::MegatronSP, SpStrategy::MegatronSP, segment_len, model, spec,
                      spec.tp_size, spec.tp_size, replica_count);
}

double prefill_time_single(std::int64_t input_len, const ModelSpec& model,
                           const ClusterSpec& spec) {
    if (input_len <= 0) {
        throw ConfigError("prefill_time_single: input length must be positive");
    }
    const double s = static_cast<double>(input_len);
    const double d = static_cast<double>(model.model_dim);
    const double heads = static_cast<double>(model.num_heads + model.num_kv_heads);
    const double dh = static_cast<double>(model.head_dim);
    const double layer_flops =
        (2.0 * s * d * heads * dh + 4.0 * s * s * d + 18.0 * s * d * d) /
        static_cast<double>(spec.tp_size);
    return static_cast<double>(model.num_layers) * layer_flops / spec.gpu_compute_rate;
}

std::int64_t kv_layer_bytes(std::int64_t seq_len, const ModelSpec& model,
                            std::int64_t bytes_per_element) {
    if (seq_len < 0) {
        throw ConfigError("kv_layer_bytes: negative sequence length");
    }
    return 2 * seq_len * model.num_kv_heads * model.head_dim * bytes_per_element;
}

std::int64_t param_layer_bytes(const ModelSpec& model, std::int64_t bytes_per_element) {
    // QKV + output projection + both MLP projections.
    const std::int64_t d = model.model_dim;
    const std::int64_t kv = model.num_kv_heads * model.head_dim;
    return (10 * d * d + 2 * d * kv) * bytes_per_element;
}

double decode_iter_time(std::int64_t batch_size, std::int64_t total_context_tokens,
                        const ModelSpec& model, const ClusterSpec& spec) {
    if (batch_size < 1) {
        throw ConfigError("decode_iter_time: empty batch");
    }
    const double kv = static_cast<double>(
        kv_layer_bytes(total_context_tokens, model, spec.bytes_per_element));
    const double params = static_cast<double>(param_layer_bytes(model, spec.bytes_per_element)) /
                          static_cast<double>(spec.tp_size);
    return static_cast<double>(model.num_layers) * (kv + params) / spec.mem_bw_proxy;
}

double decode_block_time(std::int64_t input_len, std::int64_t output_len,
                         const ModelSpec& model, const ClusterSpec& spec) {
    double total = 0.0;
    for (std::int64_t i = 0; i < output_len; ++i) {
        total += decode_iter_time(1, input_len + i, model, spec);
    }
    return total;
}

CheckpointCost checkpoint_overhead(std::int64_t input_len, const ModelSpec& model,
                                   const ClusterSpec& spec) {
    if (input_len < 0) {
        throw ConfigError("checkpoint_overhead: negative input length");
    }
    CheckpointCost c;
    c.bytes = input_len * model.model_dim * spec.bytes_per_element;
    c.seconds = static_cast<double>(c.bytes) / spec.intra_node_bw;
    return c;
}

double checkpoint_kv_ratio(const ModelSpec& model) {
    return static_cast<double>(model.model_dim) /
           (2.0 * static_cast<double>(model.num_layers * model.num_kv_heads * model.head_dim));
}

std::int64_t coloc_threshold_tokens_per_gpu(const ModelSpec& model, const ClusterSpec& spec) {
    // Budget: the extra KV traffic of colocated prefill tokens may add at most
    // 10% to a decode iteration at the 100K reference context.
    constexpr std::int64_t kReferenceContext = 100'000;
    const double budget_bytes =
        0.1 * (static_cast<double>(kv_layer_bytes(kReferenceContext, model, spec.bytes_per_element)) +
               static_cast<double>(param_layer_bytes(model, spec.bytes_per_element)) /
                   static_cast<double>(spec.tp_size));
    const double per_token =
        static_cast<double>(kv_layer_bytes(1, model, spec.bytes_per_element));
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(budget_bytes / per_token));
}

double coloc_decode_overhead(const ModelSpec& model, const ClusterSpec& spec) {
    // One token's Q copy plus its output all-reduce, per layer.
    const double bytes = 3.0 * static_cast<double>(model.model_dim * spec.bytes_per_element);
    return static_cast<double>(model.num_layers) * bytes / spec.intra_node_bw;
}

double decode_compute_share(const ModelSpec& model, const ClusterSpec& spec) {
    const double d = static_cast<double>(model.model_dim);
    const double heads = static_cast<double>(model.num_heads + model.num_kv_heads);
    const double dh = static_cast<double>(model.head_dim);
    const double layer_flops =
        (2.0 * d * heads * dh + 4.0 * d + 18.0 * d * d) / static_cast<double>(spec.tp_size);
    return static_cast<double>(model.num_layers) * layer_flops / spec.gpu_compute_rate;
}

}  // namespace pecsim
