#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "eeserve/model_spec.hpp"

namespace eeserve {

struct MemoryConfig {
    std::int64_t capacity_bytes = 0;
    std::int64_t reserve_bytes = 0;   // runtime scratch carved out before weights/KV
    int max_seq_len = 0;              // KV is provisioned for this many tokens per slot
    double bandwidth_bytes_per_s = 0.0;
};

inline void validate_memory_config(const MemoryConfig& cfg) {
    if (cfg.capacity_bytes <= 0) throw ValidationError("memory: capacity_bytes must be positive");
    if (cfg.reserve_bytes < 0) throw ValidationError("memory: reserve_bytes must be non-negative");
    if (cfg.reserve_bytes >= cfg.capacity_bytes)
        throw ValidationError("memory: reserve_bytes must be below capacity_bytes");
    if (cfg.max_seq_len <= 0) throw ValidationError("memory: max_seq_len must be positive");
    if (cfg.bandwidth_bytes_per_s <= 0.0)
        throw ValidationError("memory: bandwidth_bytes_per_s must be positive");
}

/// Which prefix of each model currently sits in device memory (depth 0 = absent).
struct MemoryState {
    std::map<std::string, int> loaded_depth;

    int depth_of(const std::string& id) const {
        auto it = loaded_depth.find(id);
        return it == loaded_depth.end() ? 0 : it->second;
    }
};

/// Footprint of one model at a resident depth; depth 0 means fully absent
/// (not even the base weights are held).
inline std::int64_t resident_weights_bytes(const ModelSpec& spec, int depth) {
    return depth <= 0 ? 0 : weights_bytes_at_depth(spec, depth);
}

inline std::int64_t weights_loaded_bytes(const MemoryState& state, const ModelRepository& repo) {
    std::int64_t total = 0;
    for (const auto& [id, depth] : state.loaded_depth)
        total += resident_weights_bytes(repo.at(id), depth);
    return total;
}

/// Bytes left for KV cache after reserve and resident weights. May be negative
/// for a hypothetical state that does not fit.
inline std::int64_t kv_budget_bytes(const MemoryConfig& cfg, const MemoryState& state,
                                    const ModelRepository& repo) {
    return cfg.capacity_bytes - cfg.reserve_bytes - weights_loaded_bytes(state, repo);
}

inline std::int64_t kv_bytes_per_slot(const ModelSpec& spec, int depth, int max_seq_len) {
    return spec.kv_bytes_per_token_per_layer * static_cast<std::int64_t>(depth) * max_seq_len;
}

/// Largest batch whose per-slot KV allocations fit the budget; 0 when nothing fits.
inline int max_batch_size(const ModelSpec& spec, int depth, std::int64_t kv_budget,
                          int max_seq_len) {
    if (depth <= 0 || depth > spec.num_layers)
        throw DomainError("max_batch_size: depth " + std::to_string(depth) +
                          " invalid for model '" + spec.id + "'");
    if (kv_budget <= 0) return 0;
    const std::int64_t per_slot = kv_bytes_per_slot(spec, depth, max_seq_len);
    const std::int64_t n = kv_budget / per_slot;
    return n > 1'000'000'000 ? 1'000'000'000 : static_cast<int>(n);
}

/// Bytes that must move to grow a model from current_depth to target_depth.
/// Shrinking frees memory instantly, so it never costs bytes.
inline std::int64_t load_delta_bytes(const ModelSpec& spec, int current_depth, int target_depth) {
    if (target_depth <= current_depth) return 0;
    return resident_weights_bytes(spec, target_depth) - resident_weights_bytes(spec, current_depth);
}

inline double load_seconds(std::int64_t delta_bytes, const MemoryConfig& cfg) {
    return delta_bytes <= 0 ? 0.0 : static_cast<double>(delta_bytes) / cfg.bandwidth_bytes_per_s;
}

/// Set a model's resident depth, enforcing the weight budget.
inline void apply_load(MemoryState& state, const ModelRepository& repo, const MemoryConfig& cfg,
                       const std::string& id, int target_depth) {
    const ModelSpec& spec = repo.at(id);
    if (target_depth < 0 || target_depth > spec.num_layers)
        throw DomainError("apply_load: depth " + std::to_string(target_depth) +
                          " invalid for model '" + id + "'");
    MemoryState next = state;
    next.loaded_depth[id] = target_depth;
    const std::int64_t loaded = weights_loaded_bytes(next, repo);
    if (loaded > cfg.capacity_bytes - cfg.reserve_bytes)
        throw CapacityError("loading '" + id + "' to depth " + std::to_string(target_depth) +
                            " needs " + std::to_string(loaded) + " weight bytes but only " +
                            std::to_string(cfg.capacity_bytes - cfg.reserve_bytes) +
                            " are available");
    state = std::move(next);
}

inline void evict_model(MemoryState& state, const std::string& id) {
    state.loaded_depth.erase(id);
}

} // namespace eeserve
