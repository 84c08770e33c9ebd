#include "pecsim/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pecsim {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::string& where,
                  const std::set<std::string>& allowed) {
    if (!obj.is_object()) {
        throw ConfigError("config section '" + where + "' must be an object");
    }
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("unknown key '" + key + "' in config section '" + where + "'");
        }
    }
}

template <typename T>
void read_to(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        out = obj.at(key).get<T>();
    }
}

WorkloadConfig parse_workload(const json& j) {
    WorkloadConfig w;
    require_keys(j, "workload",
                 {"trace_path", "synthesis", "arrival_scale", "transform", "drop_long_requests"});
    read_to(j, "trace_path", w.trace_path);
    if (j.contains("synthesis")) {
        const auto& s = j.at("synthesis");
        require_keys(s, "workload.synthesis", {"rate_rps", "duration_s"});
        read_to(s, "rate_rps", w.synthesis_rate);
        read_to(s, "duration_s", w.synthesis_duration);
    }
    read_to(j, "arrival_scale", w.arrival_scale);
    if (j.contains("transform")) {
        const auto& t = j.at("transform");
        require_keys(t, "workload.transform", {"long_percentile", "long_min", "long_max"});
        read_to(t, "long_percentile", w.transform.long_percentile);
        read_to(t, "long_min", w.transform.long_min);
        read_to(t, "long_max", w.transform.long_max);
    }
    read_to(j, "drop_long_requests", w.drop_long_requests);
    if (w.trace_path.empty() && w.synthesis_rate <= 0.0) {
        throw ConfigError("workload needs either trace_path or a synthesis section");
    }
    if (!w.trace_path.empty() && w.synthesis_rate > 0.0) {
        throw ConfigError("workload cannot have both trace_path and synthesis");
    }
    if (w.arrival_scale < 0.0) {
        throw ConfigError("arrival_scale must be non-negative");
    }
    return w;
}

std::pair<ModelSpec, ClusterSpec> parse_model_cluster(const json& root) {
    ModelSpec model;
    ClusterSpec cluster;
    const auto& jm = root.at("model");
    require_keys(jm, "model",
                 {"preset", "name", "model_dim", "num_heads", "num_kv_heads", "head_dim",
                  "num_layers"});
    if (jm.contains("preset")) {
        const auto preset = jm.at("preset").get<std::string>();
        model = model_preset(preset);
        cluster = cluster_preset_for(preset);
    } else {
        read_to(jm, "name", model.name);
        read_to(jm, "model_dim", model.model_dim);
        read_to(jm, "num_heads", model.num_heads);
        read_to(jm, "num_kv_heads", model.num_kv_heads);
        read_to(jm, "head_dim", model.head_dim);
        read_to(jm, "num_layers", model.num_layers);
    }
    if (root.contains("cluster")) {
        const auto& jc = root.at("cluster");
        require_keys(jc, "cluster",
                     {"num_nodes", "gpus_per_node", "tp_size", "decode_replicas",
                      "gpu_compute_rate_flops", "intra_node_bw_bytes", "inter_node_bw_bytes",
                      "mem_bw_proxy_bytes", "bytes_per_element", "max_tokens_per_gpu"});
        read_to(jc, "num_nodes", cluster.num_nodes);
        read_to(jc, "gpus_per_node", cluster.gpus_per_node);
        read_to(jc, "tp_size", cluster.tp_size);
        read_to(jc, "decode_replicas", cluster.decode_replicas);
        read_to(jc, "gpu_compute_rate_flops", cluster.gpu_compute_rate);
        read_to(jc, "intra_node_bw_bytes", cluster.intra_node_bw);
        read_to(jc, "inter_node_bw_bytes", cluster.inter_node_bw);
        read_to(jc, "mem_bw_proxy_bytes", cluster.mem_bw_proxy);
        read_to(jc, "bytes_per_element", cluster.bytes_per_element);
        read_to(jc, "max_tokens_per_gpu", cluster.max_tokens_per_gpu);
    }
    return {model, cluster};
}

PolicyConfig parse_policy(const json& j) {
    PolicyConfig p;
    require_keys(j, "policies[]",
                 {"policy", "ablations", "reservation_long_capacity", "coloc_token_threshold"});
    p.kind = policy_from_name(j.at("policy").get<std::string>());
    if (j.contains("ablations")) {
        for (const auto& a : j.at("ablations")) {
            p.ablations |= ablation_from_name(a.get<std::string>());
        }
    }
    read_to(j, "reservation_long_capacity", p.reservation_long_capacity);
    read_to(j, "coloc_token_threshold", p.coloc_token_threshold);
    p.validate();
    return p;
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    cluster.validate();
    if (policies.empty()) {
        throw ConfigError("at least one policy is required");
    }
    for (const auto& p : policies) {
        p.validate();
        if (p.kind == PolicyKind::Reservation &&
            p.reservation_long_capacity < workload.transform.long_max) {
            throw ConfigError("reservation_long_capacity must cover the long_max input length");
        }
    }
    if (horizon < 0.0) {
        throw ConfigError("horizon_s must be non-negative");
    }
}

ExperimentConfig parse_config_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    require_keys(root, "<root>",
                 {"workload", "model", "cluster", "policies", "horizon_s", "seed", "output_dir"});
    ExperimentConfig cfg;
    if (!root.contains("workload") || !root.contains("model") || !root.contains("policies")) {
        throw ConfigError("config requires workload, model and policies sections");
    }
    cfg.workload = parse_workload(root.at("workload"));
    std::tie(cfg.model, cfg.cluster) = parse_model_cluster(root);
    for (const auto& jp : root.at("policies")) {
        cfg.policies.push_back(parse_policy(jp));
    }
    read_to(root, "horizon_s", cfg.horizon);
    read_to(root, "seed", cfg.seed);
    read_to(root, "output_dir", cfg.output_dir);
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string canonical_config(const ExperimentConfig& cfg) {
    json root;
    json w;
    if (!cfg.workload.trace_path.empty()) {
        w["trace_path"] = cfg.workload.trace_path;
    } else {
        w["synthesis"] = {{"rate_rps", cfg.workload.synthesis_rate},
                          {"duration_s", cfg.workload.synthesis_duration}};
    }
    w["arrival_scale"] = cfg.workload.arrival_scale;
    w["transform"] = {{"long_percentile", cfg.workload.transform.long_percentile},
                      {"long_min", cfg.workload.transform.long_min},
                      {"long_max", cfg.workload.transform.long_max}};
    w["drop_long_requests"] = cfg.workload.drop_long_requests;
    root["workload"] = w;
    root["model"] = {{"name", cfg.model.name},
                     {"model_dim", cfg.model.model_dim},
                     {"num_heads", cfg.model.num_heads},
                     {"num_kv_heads", cfg.model.num_kv_heads},
                     {"head_dim", cfg.model.head_dim},
                     {"num_layers", cfg.model.num_layers}};
    root["cluster"] = {{"num_nodes", cfg.cluster.num_nodes},
                       {"gpus_per_node", cfg.cluster.gpus_per_node},
                       {"tp_size", cfg.cluster.tp_size},
                       {"decode_replicas", cfg.cluster.decode_replicas},
                       {"gpu_compute_rate_flops", cfg.cluster.gpu_compute_rate},
                       {"intra_node_bw_bytes", cfg.cluster.intra_node_bw},
                       {"inter_node_bw_bytes", cfg.cluster.inter_node_bw},
                       {"mem_bw_proxy_bytes", cfg.cluster.mem_bw_proxy},
                       {"bytes_per_element", cfg.cluster.bytes_per_element},
                       {"max_tokens_per_gpu", cfg.cluster.max_tokens_per_gpu}};
    json policies = json::array();
    for (const auto& p : cfg.policies) {
        json jp;
        jp["policy"] = policy_name(PolicyConfig{p.kind, 0, p.reservation_long_capacity, 0});
        json abl = json::array();
        if (p.has(Ablation::NoPreempt)) abl.push_back("no-preempt");
        if (p.has(Ablation::NoDisagg)) abl.push_back("no-disagg");
        if (p.has(Ablation::NoColoc)) abl.push_back("no-coloc");
        if (p.has(Ablation::NoFastSP)) abl.push_back("no-fast-sp");
        jp["ablations"] = abl;
        jp["reservation_long_capacity"] = p.reservation_long_capacity;
        jp["coloc_token_threshold"] = p.coloc_token_threshold;
        policies.push_back(jp);
    }
    root["policies"] = policies;
    root["horizon_s"] = cfg.horizon;
    root["seed"] = cfg.seed;
    // output_dir is deliberately not part of the canonical form: the same
    // experiment written elsewhere stays byte-identical.
    return root.dump(2);
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = canonical_config(cfg);
    std::uint64_t h = 14695981039346656037ull;
    for (const char c : text) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace pecsim
