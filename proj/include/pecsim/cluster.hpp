#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pecsim {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelSpec {
    std::string name;
    std::int64_t model_dim = 0;     // d
    std::int64_t num_heads = 0;     // query heads
    std::int64_t num_kv_heads = 0;  // key-value heads (GQA)
    std::int64_t head_dim = 0;
    std::int64_t num_layers = 0;

    void validate() const;
};

struct ClusterSpec {
    std::int64_t num_nodes = 4;
    std::int64_t gpus_per_node = 8;
    std::int64_t tp_size = 4;
    std::int64_t decode_replicas = 1;  // replicas reserved for short-request decode
    double gpu_compute_rate = 6e14;    // FLOPs/s per GPU
    double intra_node_bw = 6e10;       // bytes/s
    double inter_node_bw = 2.5e10;     // bytes/s
    double mem_bw_proxy = 2e12;        // bytes/s, decode memory-read proxy
    std::int64_t bytes_per_element = 2;
    std::int64_t max_tokens_per_gpu = 18'000;  // per-GPU context capacity

    std::int64_t total_gpus() const { return num_nodes * gpus_per_node; }
    std::int64_t total_replicas() const { return total_gpus() / tp_size; }
    std::int64_t replicas_per_node() const { return gpus_per_node / tp_size; }
    std::int64_t tokens_per_replica() const { return max_tokens_per_gpu * tp_size; }

    void validate() const;
};

enum class ReplicaRole { General, DecodeOnly };

struct Replica {
    std::int64_t id = 0;
    std::int64_t node_id = 0;
    std::vector<std::int64_t> gpu_ids;
    ReplicaRole role = ReplicaRole::General;
};

struct GpuAccounting {
    std::int64_t gpu_id = 0;
    double exec_time = 0.0;
    double idle_time = 0.0;
};

struct Cluster {
    ClusterSpec spec;
    std::vector<Replica> replicas;
    std::vector<GpuAccounting> gpus;
};

// Lays out (num_nodes*gpus_per_node)/tp_size replicas; the first
// `decode_replicas` ids are DecodeOnly.
Cluster build_cluster(const ClusterSpec& spec);

// Number of replicas a request of this input length occupies, from per-GPU
// token capacity.
std::int64_t replicas_needed(std::int64_t input_len, const ClusterSpec& spec);

// Candidate replica as seen by the selector: current local-queue token load
// plus placement.
struct ReplicaCandidate {
    std::int64_t id = 0;
    std::int64_t node_id = 0;
    std::int64_t queue_tokens = 0;
};

// Picks `need` replicas minimizing total queue tokens. Combinations fully
// inside one node take hard priority over any cross-node combination; ties
// break on the lexicographically smallest id tuple. Empty result when there
// are not enough candidates.
std::vector<std::int64_t> select_replicas(std::vector<ReplicaCandidate> candidates,
                                          std::int64_t need);

// Shipped model presets: 7b, 14b, 34b, 70b.
ModelSpec model_preset(const std::string& name);
std::vector<std::string> model_preset_names();

// Calibrated cluster defaults matching a model preset (TP size, decode
// replicas, per-GPU token capacity).
ClusterSpec cluster_preset_for(const std::string& model_name);

}  // namespace pecsim
