#include "pecsim/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace pecsim {

void ModelSpec::validate() const {
    if (model_dim <= 0 || num_heads <= 0 || num_kv_heads <= 0 || head_dim <= 0 || num_layers <= 0) {
        throw ConfigError("model spec: all dimensions must be positive");
    }
    if (model_dim != num_heads * head_dim) {
        throw ConfigError("model spec: model_dim must equal num_heads * head_dim");
    }
    if (num_heads % num_kv_heads != 0) {
        throw ConfigError("model spec: num_heads must be divisible by num_kv_heads");
    }
}

void ClusterSpec::validate() const {
    if (num_nodes <= 0 || gpus_per_node <= 0 || tp_size <= 0) {
        throw ConfigError("cluster spec: node/GPU/TP counts must be positive");
    }
    if (gpus_per_node % tp_size != 0) {
        throw ConfigError("cluster spec: gpus_per_node must be divisible by tp_size");
    }
    if (decode_replicas < 0 || decode_replicas >= total_replicas()) {
        throw ConfigError("cluster spec: decode_replicas must be < total replicas");
    }
    if (gpu_compute_rate <= 0.0 || intra_node_bw <= 0.0 || inter_node_bw <= 0.0 ||
        mem_bw_proxy <= 0.0) {
        throw ConfigError("cluster spec: rates and bandwidths must be positive");
    }
    if (bytes_per_element <= 0 || max_tokens_per_gpu <= 0) {
        throw ConfigError("cluster spec: bytes_per_element and max_tokens_per_gpu must be positive");
    }
}

Cluster build_cluster(const ClusterSpec& spec) {
    spec.validate();
    Cluster c;
    c.spec = spec;
    const std::int64_t n_replicas = spec.total_replicas();
    c.replicas.reserve(n_replicas);
    for (std::int64_t r = 0; r < n_replicas; ++r) {
        Replica rep;
        rep.id = r;
        rep.node_id = r / spec.replicas_per_node();
        rep.role = r < spec.decode_replicas ? ReplicaRole::DecodeOnly : ReplicaRole::General;
        for (std::int64_t g = 0; g < spec.tp_size; ++g) {
            rep.gpu_ids.push_back(r * spec.tp_size + g);
        }
        c.replicas.push_back(std::move(rep));
    }
    c.gpus.resize(spec.total_gpus());
    for (std::int64_t g = 0; g < spec.total_gpus(); ++g) {
        c.gpus[g].gpu_id = g;
    }
    return c;
}

std::int64_t replicas_needed(std::int64_t input_len, const ClusterSpec& spec) {
    if (input_len <= 0) {
        throw ConfigError("replicas_needed: input_len must be positive");
    }
    const std::int64_t per_replica = spec.tokens_per_replica();
    return (input_len + per_replica - 1) / per_replica;
}

namespace {

// `need` lowest-load candidates out of a sorted-by-(tokens, id) pool.
std::vector<std::int64_t> take_lowest(const std::vector<ReplicaCandidate>& sorted,
                                      std::int64_t need) {
    std::vector<std::int64_t> ids;
    ids.reserve(need);
    for (std::int64_t i = 0; i < need; ++i) {
        ids.push_back(sorted[static_cast<std::size_t>(i)].id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::int64_t total_tokens(const std::vector<ReplicaCandidate>& sorted, std::int64_t need) {
    std::int64_t sum = 0;
    for (std::int64_t i = 0; i < need; ++i) {
        sum += sorted[static_cast<std::size_t>(i)].queue_tokens;
    }
    return sum;
}

}  // namespace

std::vector<std::int64_t> select_replicas(std::vector<ReplicaCandidate> candidates,
                                          std::int64_t need) {
    if (need < 1) {
        throw ConfigError("select_replicas: need must be >= 1");
    }
    if (static_cast<std::int64_t>(candidates.size()) < need) {
        return {};
    }
    const auto by_load = [](const ReplicaCandidate& a, const ReplicaCandidate& b) {
        return a.queue_tokens != b.queue_tokens ? a.queue_tokens < b.queue_tokens : a.id < b.id;
    };

    // Intra-node combinations take hard priority.
    std::map<std::int64_t, std::vector<ReplicaCandidate>> per_node;
    for (const auto& c : candidates) {
        per_node[c.node_id].push_back(c);
    }
    bool have_intra = false;
    std::int64_t best_tokens = 0;
    std::vector<std::int64_t> best_ids;
    for (auto& [node, pool] : per_node) {
        if (static_cast<std::int64_t>(pool.size()) < need) continue;
        std::sort(pool.begin(), pool.end(), by_load);
        const std::int64_t tok = total_tokens(pool, need);
        auto ids = take_lowest(pool, need);
        if (!have_intra || tok < best_tokens || (tok == best_tokens && ids < best_ids)) {
            have_intra = true;
            best_tokens = tok;
            best_ids = std::move(ids);
        }
    }
    if (have_intra) {
        return best_ids;
    }
    std::sort(candidates.begin(), candidates.end(), by_load);
    return take_lowest(candidates, need);
}

ModelSpec model_preset(const std::string& name) {
    ModelSpec m;
    m.name = name;
    if (name == "7b") {
        m.model_dim = 4096;
        m.num_heads = 32;
        m.num_kv_heads = 16;
        m.head_dim = 128;
        m.num_layers = 32;
    } else if (name == "14b") {
        m.model_dim = 5120;
        m.num_heads = 40;
        m.num_kv_heads = 10;
        m.head_dim = 128;
        m.num_layers = 40;
    } else if (name == "34b") {
        m.model_dim = 7168;
        m.num_heads = 56;
        m.num_kv_heads = 14;
        m.head_dim = 128;
        m.num_layers = 60;
    } else if (name == "70b") {
        m.model_dim = 8192;
        m.num_heads = 64;
        m.num_kv_heads = 8;
        m.head_dim = 128;
        m.num_layers = 80;
    } else {
        throw ConfigError("unknown model preset: " + name);
    }
    m.validate();
    return m;
}

std::vector<std::string> model_preset_names() { return {"7b", "14b", "34b", "70b"}; }

ClusterSpec cluster_preset_for(const std::string& model_name) {
    ClusterSpec s;
    if (model_name == "7b") {
        s.tp_size = 1;
        s.decode_replicas = 4;
        s.max_tokens_per_gpu = 24'000;
    } else if (model_name == "14b") {
        s.tp_size = 1;
        s.decode_replicas = 4;
        s.max_tokens_per_gpu = 23'000;
    } else if (model_name == "34b") {
        s.tp_size = 4;
        s.decode_replicas = 1;
        s.max_tokens_per_gpu = 21'500;
    } else if (model_name == "70b") {
        s.tp_size = 4;
        s.decode_replicas = 1;
        s.max_tokens_per_gpu = 18'000;
    } else {
        throw ConfigError("unknown model preset: " + model_name);
    }
    s.validate();
    return s;
}

}  // namespace pecsim
