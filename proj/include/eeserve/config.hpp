#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "eeserve/generator.hpp"
#include "eeserve/json_util.hpp"
#include "eeserve/memory_model.hpp"
#include "eeserve/policy.hpp"

namespace eeserve {

enum class Mode { vanilla, ee_single, helios };

/// Serving mode plus the model it pins (adaptive mode pins none).
struct ModeSpec {
    Mode kind = Mode::helios;
    std::string model; // required for vanilla / ee_single
};

inline std::string to_string(const ModeSpec& m) {
    switch (m.kind) {
        case Mode::vanilla: return m.model.empty() ? "vanilla" : "vanilla:" + m.model;
        case Mode::ee_single: return m.model.empty() ? "ee_single" : "ee_single:" + m.model;
        case Mode::helios: return "helios";
    }
    return "?";
}

/// Accepts "helios", "vanilla", "ee_single", or the latter two with an
/// inline model id as "ee_single:opt-1.3b".
inline ModeSpec mode_spec_from_string(const std::string& s) {
    ModeSpec m;
    std::string head = s;
    const auto colon = s.find(':');
    if (colon != std::string::npos) {
        head = s.substr(0, colon);
        m.model = s.substr(colon + 1);
    }
    if (head == "helios") m.kind = Mode::helios;
    else if (head == "vanilla") m.kind = Mode::vanilla;
    else if (head == "ee_single") m.kind = Mode::ee_single;
    else throw ValidationError("unknown mode '" + s + "'");
    if (m.kind == Mode::helios && !m.model.empty())
        throw ValidationError("mode 'helios' does not take a model id");
    return m;
}

inline Json memory_config_to_json(const MemoryConfig& m) {
    return Json{{"capacity_bytes", m.capacity_bytes},
                {"reserve_bytes", m.reserve_bytes},
                {"max_seq_len", m.max_seq_len},
                {"bandwidth_bytes_per_s", m.bandwidth_bytes_per_s}};
}

inline MemoryConfig memory_config_from_json(const Json& j) {
    MemoryConfig m;
    m.capacity_bytes = require_int(j, "capacity_bytes", "memory");
    m.reserve_bytes = j.contains("reserve_bytes") ? require_int(j, "reserve_bytes", "memory")
                                                  : std::int64_t{0};
    m.max_seq_len = static_cast<int>(require_int(j, "max_seq_len", "memory"));
    m.bandwidth_bytes_per_s = require_number(j, "bandwidth_bytes_per_s", "memory");
    return m;
}

/// A full experiment: repository + workload source + hardware + policy + mode.
/// The workload comes from exactly one of `workload_path` (a trace file) or
/// `generator` (an inline generator config).
struct ExperimentConfig {
    std::string repository_path;
    std::string workload_path;
    std::optional<GeneratorConfig> generator;
    MemoryConfig memory;
    PolicyConfig policy;
    ModeSpec mode;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
};

inline void validate_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.repository_path.empty())
        throw ValidationError("experiment: repository path is required");
    const bool has_path = !cfg.workload_path.empty();
    const bool has_gen = cfg.generator.has_value();
    if (has_path == has_gen)
        throw ValidationError(
            "experiment: exactly one of workload.path and workload.generator is required");
    if (cfg.mode.kind != Mode::helios && cfg.mode.model.empty())
        throw ValidationError("experiment: mode '" + to_string(cfg.mode) +
                              "' requires a model id");
    if (cfg.output_dir.empty())
        throw ValidationError("experiment: output_dir must not be empty");
    validate_memory_config(cfg.memory);
    validate_policy_config(cfg.policy);
    // generator configs are validated against the repository when the
    // workload is materialized
}

inline ExperimentConfig experiment_config_from_json(const Json& j) {
    ExperimentConfig cfg;
    cfg.repository_path = require_string(j, "repository", "experiment");
    const Json& workload = require_field(j, "workload", "experiment");
    if (workload.contains("path") && !workload.at("path").is_null())
        cfg.workload_path = require_string(workload, "path", "workload");
    if (workload.contains("generator") && !workload.at("generator").is_null())
        cfg.generator = generator_config_from_json(workload.at("generator"));
    cfg.memory = memory_config_from_json(require_field(j, "memory", "experiment"));
    if (j.contains("policy")) cfg.policy = policy_config_from_json(j.at("policy"));
    if (j.contains("mode")) cfg.mode = mode_spec_from_string(require_string(j, "mode", "experiment"));
    if (j.contains("model")) {
        if (!cfg.mode.model.empty())
            throw ValidationError("experiment: model given both inline in 'mode' and as 'model'");
        cfg.mode.model = require_string(j, "model", "experiment");
        if (cfg.mode.kind == Mode::helios)
            throw ValidationError("mode 'helios' does not take a model id");
    }
    if (j.contains("seed")) cfg.seed = static_cast<std::uint64_t>(require_int(j, "seed", "experiment"));
    if (j.contains("output_dir")) cfg.output_dir = require_string(j, "output_dir", "experiment");
    validate_experiment_config(cfg);
    return cfg;
}

/// Fully resolved form: every field explicit, so a rerun of the emitted JSON
/// reproduces the experiment bit for bit.
inline Json experiment_config_to_json(const ExperimentConfig& cfg) {
    Json workload = Json::object();
    if (!cfg.workload_path.empty()) workload["path"] = cfg.workload_path;
    if (cfg.generator) workload["generator"] = generator_config_to_json(*cfg.generator);
    Json j{{"repository", cfg.repository_path},
           {"workload", workload},
           {"memory", memory_config_to_json(cfg.memory)},
           {"policy", policy_config_to_json(cfg.policy)},
           {"mode", to_string(ModeSpec{cfg.mode.kind, ""})},
           {"seed", cfg.seed},
           {"output_dir", cfg.output_dir}};
    if (!cfg.mode.model.empty()) j["model"] = cfg.mode.model;
    return j;
}

/// Set `root[path]` for a dotted path like "policy.th", creating intermediate
/// objects as needed. The value string is parsed as JSON when possible
/// (numbers, booleans, null, arrays) and taken verbatim as a string otherwise.
inline void apply_override(Json& root, const std::string& path, const std::string& value) {
    if (path.empty()) throw ValidationError("override: empty key path");
    Json* node = &root;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw ValidationError("override: bad key path '" + path + "'");
        if (dot == std::string::npos) {
            Json parsed = Json::parse(value, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? Json(value) : parsed;
            return;
        }
        if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = Json::object();
        node = &(*node)[key];
        start = dot + 1;
    }
}

/// Load a config file, apply `key=value` overrides, and resolve input paths
/// (repository, workload.path) relative to the config file's directory.
/// output_dir stays relative to the working directory.
inline ExperimentConfig load_experiment_config(
    const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open experiment config '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const std::exception& e) {
        throw ValidationError("experiment config '" + path + "': " + e.what());
    }
    for (const auto& [key, value] : overrides) apply_override(j, key, value);
    ExperimentConfig cfg = experiment_config_from_json(j);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty())
            p = std::filesystem::absolute(base / p).lexically_normal().string();
    };
    resolve(cfg.repository_path);
    resolve(cfg.workload_path);
    return cfg;
}

} // namespace eeserve
