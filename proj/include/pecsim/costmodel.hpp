#pragma once

#include <cstdint>
#include <utility>

#include "pecsim/cluster.hpp"

namespace pecsim {

enum class SpStrategy { MegatronSP, UlyssesSP };

struct StageCosts {
    std::uint64_t comm_elements = 0;  // per node
    std::uint64_t comp_flops = 0;     // per GPU
};

struct SpPlan {
    SpStrategy attn_strategy = SpStrategy::MegatronSP;
    SpStrategy mlp_strategy = SpStrategy::MegatronSP;
    std::int64_t ring_nodes = 1;
    std::int64_t segment_len = 0;  // tokens per GPU
    double comm_time = 0.0;
    double comp_time = 0.0;
    double total_time = 0.0;
};

// Replica span a plan is computed for: ring_nodes ring positions of
// gpus_per_group GPUs each.
struct SpSpan {
    std::int64_t ring_nodes = 1;
    std::int64_t gpus_per_group = 1;
    std::int64_t total_gpus = 1;
};

SpSpan make_span(const std::vector<std::int64_t>& replica_ids, const Cluster& cluster);

// Attention-stage per-node communication volume and per-GPU compute volume.
// Megatron: comm 2sd(T-1)G; comp 2sd(Nh+Nkv)dh/T + 4(sT)^2 d/T + 2sd^2.
// Ulysses:  comm 2s(Nh+Nkv)dh(G-1) + (d(Nh+Nkv)dh + d^2) G(T-1)/T;
//           comp 2sd(Nh+Nkv)dh + 4(sG)^2 d/G + 2sd^2.
StageCosts attn_stage_costs(SpStrategy strategy, std::int64_t segment_len,
                            const ModelSpec& model, std::int64_t tp, std::int64_t gpus_in_node);

// MLP-stage volumes. Megatron: comm 2sd(T-1)G; Ulysses: comm 8d^2(T-1)G/T.
// Both compute 16sd^2 per GPU.
StageCosts mlp_stage_costs(SpStrategy strategy, std::int64_t segment_len,
                           const ModelSpec& model, std::int64_t tp, std::int64_t gpus_in_node);

// Evaluates the four (attn, mlp) strategy combinations over the span and
// returns the fastest; ties break toward Megatron.
SpPlan select_sp_plan(std::int64_t total_input_len, const ModelSpec& model,
                      const ClusterSpec& spec, const SpSpan& span);

// Ring-attention-only plan: Megatron inside each TP group, every replica a
// ring position (the NoFastSP baseline).
SpPlan forced_ring_plan(std::int64_t total_input_len, const ModelSpec& model,
                        const ClusterSpec& spec, std::int64_t replica_count);

// Single-replica prefill wall time.
double prefill_time_single(std::int64_t input_len, const ModelSpec& model,
                           const ClusterSpec& spec);

// One decode iteration over a batch with the given total context tokens.
double decode_iter_time(std::int64_t batch_size, std::int64_t total_context_tokens,
                        const ModelSpec& model, const ClusterSpec& spec);

// Whole decode phase of a lone request served in place: output_len iterations
// with the context growing by one token each iteration.
double decode_block_time(std::int64_t input_len, std::int64_t output_len,
                         const ModelSpec& model, const ClusterSpec& spec);

std::int64_t kv_layer_bytes(std::int64_t seq_len, const ModelSpec& model,
                            std::int64_t bytes_per_element);

std::int64_t param_layer_bytes(const ModelSpec& model, std::int64_t bytes_per_element);

// Pause/resume staging cost: one layer's token embeddings, moved over the
// intra-node link.
struct CheckpointCost {
    double seconds = 0.0;
    std::int64_t bytes = 0;
};
CheckpointCost checkpoint_overhead(std::int64_t input_len, const ModelSpec& model,
                                   const ClusterSpec& spec);

// Intermediate-data bytes over total KV bytes; independent of input length.
double checkpoint_kv_ratio(const ModelSpec& model);

// Largest per-GPU colocated prefill token load that keeps a long-decode
// iteration within 10% of its baseline at the 100K reference context.
std::int64_t coloc_threshold_tokens_per_gpu(const ModelSpec& model, const ClusterSpec& spec);

// Fixed per-iteration cost of colocated decode: the decoded token's Q copy
// plus the output all-reduce.
double coloc_decode_overhead(const ModelSpec& model, const ClusterSpec& spec);

// Compute share of one decode iteration, charged to a colocated prefill.
double decode_compute_share(const ModelSpec& model, const ClusterSpec& spec);

}  // namespace pecsim
