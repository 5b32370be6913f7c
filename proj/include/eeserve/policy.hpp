#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eeserve/log.hpp"
#include "eeserve/memory_model.hpp"
#include "eeserve/pht.hpp"

namespace eeserve {

enum class Slo { throughput, response_time, accuracy, energy };

inline const char* to_string(Slo s) {
    switch (s) {
        case Slo::throughput: return "throughput";
        case Slo::response_time: return "response_time";
        case Slo::accuracy: return "accuracy";
        case Slo::energy: return "energy";
    }
    return "?";
}

inline Slo slo_from_string(const std::string& s) {
    if (s == "throughput") return Slo::throughput;
    if (s == "response_time") return Slo::response_time;
    if (s == "accuracy") return Slo::accuracy;
    if (s == "energy") return Slo::energy;
    throw ValidationError("unknown slo '" + s + "'");
}

/// Repository metric consulted before any evaluation data exists.
inline const char* slo_metric_name(Slo s) {
    switch (s) {
        case Slo::throughput: return "throughput";
        case Slo::response_time: return "ttft_s";
        case Slo::accuracy: return "perplexity";
        case Slo::energy: return "energy_mwh_per_prompt";
    }
    return "?";
}

inline bool slo_higher_better(Slo s) { return s == Slo::throughput; }

struct PolicyConfig {
    int k = 3;
    int n_eval_requests = 5;
    double th = 0.7;
    int cbc_max = 50;
    int window = 100;
    int ri = 150;
    double coverage_target = 0.70;
    int horizon_tokens = 1000;
    Slo slo = Slo::throughput;
};

inline void validate_policy_config(const PolicyConfig& cfg) {
    if (cfg.k < 1) throw ValidationError("policy.k must be at least 1");
    if (cfg.n_eval_requests < 1) throw ValidationError("policy.n_eval_requests must be at least 1");
    if (!(cfg.th >= 0.0 && cfg.th <= 1.0)) throw ValidationError("policy.th must be in [0,1]");
    if (cfg.cbc_max <= 0 || cfg.cbc_max > cfg.window)
        throw ValidationError("policy.cbc_max must satisfy 0 < cbc_max <= window");
    if (cfg.ri < 1) throw ValidationError("policy.ri must be at least 1");
    if (!(cfg.coverage_target > 0.0 && cfg.coverage_target <= 1.0))
        throw ValidationError("policy.coverage_target must be in (0,1]");
    if (cfg.horizon_tokens < 1) throw ValidationError("policy.horizon_tokens must be at least 1");
    if (cfg.ri <= cfg.k * cfg.n_eval_requests)
        log::warn("policy.ri <= k * n_eval_requests: every interval is spent re-evaluating");
}

inline PolicyConfig policy_config_from_json(const Json& j) {
    PolicyConfig cfg;
    if (j.contains("k")) cfg.k = j.at("k").get<int>();
    if (j.contains("n_eval_requests")) cfg.n_eval_requests = j.at("n_eval_requests").get<int>();
    if (j.contains("th")) cfg.th = j.at("th").get<double>();
    if (j.contains("cbc_max")) cfg.cbc_max = j.at("cbc_max").get<int>();
    if (j.contains("window")) cfg.window = j.at("window").get<int>();
    if (j.contains("ri")) cfg.ri = j.at("ri").get<int>();
    if (j.contains("coverage_target")) cfg.coverage_target = j.at("coverage_target").get<double>();
    if (j.contains("horizon_tokens")) cfg.horizon_tokens = j.at("horizon_tokens").get<int>();
    if (j.contains("slo")) cfg.slo = slo_from_string(j.at("slo").get<std::string>());
    return cfg;
}

inline Json policy_config_to_json(const PolicyConfig& cfg) {
    return Json{{"k", cfg.k},
                {"n_eval_requests", cfg.n_eval_requests},
                {"th", cfg.th},
                {"cbc_max", cfg.cbc_max},
                {"window", cfg.window},
                {"ri", cfg.ri},
                {"coverage_target", cfg.coverage_target},
                {"horizon_tokens", cfg.horizon_tokens},
                {"slo", to_string(cfg.slo)}};
}

/// Models ranked on the advertised SLO metric, restricted to those whose
/// full-depth weights fit the hardware, truncated to the top k.
inline std::vector<std::string> select_candidates(const ModelRepository& repo, Slo slo,
                                                  const MemoryConfig& hw, int k) {
    if (k <= 0) throw DomainError("candidate count must be positive");
    const std::string metric = slo_metric_name(slo);
    auto dir_it = repo.metric_directions.find(metric);
    if (dir_it == repo.metric_directions.end())
        throw DomainError("metric '" + metric + "' has no declared direction");
    const bool higher = dir_it->second == MetricDirection::higher_better;

    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& [id, spec] : repo.models) {
        auto it = spec.repo_metrics.find(metric);
        if (it == spec.repo_metrics.end())
            throw DomainError("model '" + id + "' does not advertise metric '" + metric + "'");
        if (weights_bytes_at_depth(spec, spec.num_layers) >
            hw.capacity_bytes - hw.reserve_bytes)
            continue;
        ranked.emplace_back(it->second, id);
    }
    if (ranked.empty()) throw CapacityError("no repository model fits within memory capacity");
    std::sort(ranked.begin(), ranked.end(), [higher](const auto& a, const auto& b) {
        if (a.first != b.first) return higher ? a.first > b.first : a.first < b.first;
        return a.second < b.second;
    });
    if (static_cast<int>(ranked.size()) > k) ranked.resize(static_cast<std::size_t>(k));
    std::vector<std::string> ids;
    ids.reserve(ranked.size());
    for (auto& [v, id] : ranked) ids.push_back(id);
    return ids;
}

/// Confidence-breach counter over a tumbling token window.
struct BreachTracker {
    int cbc = 0;
    int tokens_in_window = 0;

    void reset() {
        cbc = 0;
        tokens_in_window = 0;
    }
};

/// Returns true when the breach count exceeds the allowance — the caller must
/// take a corrective action. The window tumbles: counters clear when it fills
/// or right after a trigger.
inline bool observe_token(BreachTracker& t, bool breached, const PolicyConfig& cfg) {
    ++t.tokens_in_window;
    if (breached) ++t.cbc;
    if (t.cbc > cfg.cbc_max) {
        t.reset();
        return true;
    }
    if (t.tokens_in_window >= cfg.window) t.reset();
    return false;
}

inline bool should_reassess(std::int64_t requests_since_eval, const PolicyConfig& cfg) {
    return requests_since_eval >= cfg.ri;
}

/// Mean per-token decode time when serving capped at `depth_policy`: profiled
/// exits beyond it are forced to stop there, shallower ones keep their exit.
inline double expected_token_latency(const ExitHistogram& hist, const ModelSpec& spec,
                                     int depth_policy) {
    if (hist.total == 0) throw DomainError("expected_token_latency on an empty histogram");
    double mean_layers = 0.0;
    for (const auto& [d, c] : hist.counts)
        mean_layers += static_cast<double>(std::min(d, depth_policy)) *
                       (static_cast<double>(c) / static_cast<double>(hist.total));
    return mean_layers * spec.t_decode_per_layer_s;
}

/// Same clamping, in modeled energy per token.
inline double expected_token_energy(const ExitHistogram& hist, const ModelSpec& spec,
                                    int depth_policy) {
    if (hist.total == 0) throw DomainError("expected_token_energy on an empty histogram");
    double mean_layers = 0.0;
    for (const auto& [d, c] : hist.counts)
        mean_layers += static_cast<double>(std::min(d, depth_policy)) *
                       (static_cast<double>(c) / static_cast<double>(hist.total));
    return mean_layers * spec.energy_per_layer_per_token_mwh;
}

enum class ActionKind { stay, load_more, switch_model };

inline const char* to_string(ActionKind k) {
    switch (k) {
        case ActionKind::stay: return "stay";
        case ActionKind::load_more: return "load_more";
        case ActionKind::switch_model: return "switch_model";
    }
    return "?";
}

struct ActionPlan {
    ActionKind kind = ActionKind::stay;
    std::string model_id;
    int serving_depth = 0;
    std::vector<std::string> evict;  // dropped to make the load fit
    std::int64_t load_bytes = 0;
    double cost_s = 0.0;  // amortized load time plus expected per-token service cost
};

namespace detail {

/// Check that model `id` can serve at `depth` in `state` (weights fit and at
/// least one sequence's KV fits); if not, retry with every other model
/// evicted. Returns false when even that fails.
inline bool fit_option(const ModelRepository& repo, const MemoryConfig& cfg,
                       const MemoryState& state, const std::string& id, int depth,
                       MemoryState& out_state, std::vector<std::string>& out_evict) {
    const ModelSpec& spec = repo.at(id);
    for (int attempt = 0; attempt < 2; ++attempt) {
        MemoryState trial;
        std::vector<std::string> evict;
        if (attempt == 0) {
            trial = state;
        } else {
            for (const auto& [other, d] : state.loaded_depth)
                if (other != id && d > 0) evict.push_back(other);
        }
        trial.loaded_depth[id] = depth;
        const std::int64_t weights = weights_loaded_bytes(trial, repo);
        if (weights > cfg.capacity_bytes - cfg.reserve_bytes) continue;
        if (max_batch_size(spec, depth, kv_budget_bytes(cfg, trial, repo), cfg.max_seq_len) < 1)
            continue;
        out_state = std::move(trial);
        out_evict = std::move(evict);
        return true;
    }
    return false;
}

} // namespace detail

/// React to a confidence-breach trigger: deepen the current model to its next
/// exit, or switch to an evaluated candidate at its covering depth. Each
/// option is costed as load time amortized over the horizon plus the profiled
/// per-token service cost at the option's depth (divided by the achievable
/// batch under a throughput SLO). Infeasible options are skipped; when nothing
/// feasible remains the plan is to stay put.
inline ActionPlan decide_action(const ModelRepository& repo, const Pht& pht,
                                const std::vector<std::string>& candidates,
                                const std::string& current_model, int current_depth,
                                const MemoryConfig& mem_cfg, const MemoryState& mem_state,
                                const PolicyConfig& cfg) {
    ActionPlan best;
    best.kind = ActionKind::stay;
    best.model_id = current_model;
    best.serving_depth = current_depth;
    best.cost_s = 0.0;
    bool have = false;

    auto consider = [&](ActionKind kind, const std::string& id, int depth) {
        const ModelSpec& spec = repo.at(id);
        MemoryState st;
        std::vector<std::string> evict;
        if (!detail::fit_option(repo, mem_cfg, mem_state, id, depth, st, evict)) return;
        const std::int64_t delta = load_delta_bytes(spec, mem_state.depth_of(id), depth);
        double service = expected_token_latency(pht.entry_of(id).exit_hist, spec, depth);
        if (cfg.slo == Slo::throughput) {
            const std::int64_t batch =
                max_batch_size(spec, depth, kv_budget_bytes(mem_cfg, st, repo), mem_cfg.max_seq_len);
            service /= static_cast<double>(batch);
        }
        const double cost =
            load_seconds(delta, mem_cfg) / static_cast<double>(cfg.horizon_tokens) + service;
        if (!have || cost < best.cost_s || (cost == best.cost_s && delta < best.load_bytes)) {
            best = ActionPlan{kind, id, depth, std::move(evict), delta, cost};
            have = true;
        }
    };

    const ModelSpec& cur = repo.at(current_model);
    if (current_depth < cur.num_layers)
        consider(ActionKind::load_more, current_model, cur.next_exit_after(current_depth));
    for (const std::string& id : candidates) {
        if (id == current_model) continue;
        if (!pht.has(id))
            throw StalenessError("candidate '" + id + "' has no evaluation profile");
        consider(ActionKind::switch_model, id,
                 choose_depth(pht.entry_of(id).exit_hist, repo.at(id), cfg.coverage_target));
    }
    return best;
}

/// Estimated value of the SLO metric for one evaluated candidate serving at
/// its covering depth.
inline double estimated_metric(const ModelRepository& repo, const Pht& pht, const std::string& id,
                               Slo slo, double coverage_target) {
    const ModelSpec& spec = repo.at(id);
    const PhtEntry& e = pht.entry_of(id);
    const int depth = choose_depth(e.exit_hist, spec, coverage_target);
    switch (slo) {
        case Slo::throughput: return 1.0 / expected_token_latency(e.exit_hist, spec, depth);
        case Slo::response_time: return e.measured_ttft_s();
        case Slo::accuracy: return *e.perplexity();
        case Slo::energy: return expected_token_energy(e.exit_hist, spec, depth);
    }
    throw DomainError("unhandled slo");
}

/// Best evaluated candidate under the SLO; metric ties favor the smaller
/// full-weights footprint, then the lexically first id.
inline std::string best_model(const ModelRepository& repo, const Pht& pht,
                              const std::vector<std::string>& candidates, Slo slo,
                              double coverage_target) {
    if (candidates.empty()) throw StalenessError("no candidates to choose a model from");
    const bool higher = slo_higher_better(slo);
    std::string best_id;
    double best_val = 0.0;
    std::int64_t best_fp = 0;
    for (const std::string& id : candidates) {
        if (!pht.has(id))
            throw StalenessError("candidate '" + id + "' has no evaluation profile");
        const double v = estimated_metric(repo, pht, id, slo, coverage_target);
        const std::int64_t fp = weights_bytes_at_depth(repo.at(id), repo.at(id).num_layers);
        const bool better = best_id.empty() || (higher ? v > best_val : v < best_val) ||
                            (v == best_val && fp < best_fp);
        if (better) {
            best_id = id;
            best_val = v;
            best_fp = fp;
        }
    }
    return best_id;
}

struct ReplanResult {
    std::string serving_model;
    int serving_depth = 0;
    // Residency targets in load order, serving model first. Candidates that
    // did not fit are absent and must be evicted.
    std::vector<std::pair<std::string, int>> residency;
};

/// After an evaluation round, pick the serving model and lay out every
/// evaluated candidate at its covering depth, keeping as many resident as
/// memory allows.
inline ReplanResult replan_after_eval(const ModelRepository& repo, const Pht& pht,
                                      const std::vector<std::string>& candidates,
                                      const PolicyConfig& cfg, const MemoryConfig& mem_cfg) {
    std::vector<std::string> profiled;
    for (const std::string& id : candidates)
        if (pht.has(id)) profiled.push_back(id);

    ReplanResult plan;
    plan.serving_model = best_model(repo, pht, profiled, cfg.slo, cfg.coverage_target);
    const ModelSpec& serving = repo.at(plan.serving_model);
    plan.serving_depth =
        choose_depth(pht.entry_of(plan.serving_model).exit_hist, serving, cfg.coverage_target);

    MemoryState trial;
    trial.loaded_depth[plan.serving_model] = plan.serving_depth;
    if (weights_loaded_bytes(trial, repo) > mem_cfg.capacity_bytes - mem_cfg.reserve_bytes ||
        max_batch_size(serving, plan.serving_depth, kv_budget_bytes(mem_cfg, trial, repo),
                       mem_cfg.max_seq_len) < 1)
        throw CapacityError("serving model '" + plan.serving_model + "' at depth " +
                            std::to_string(plan.serving_depth) + " does not fit in memory");
    plan.residency.emplace_back(plan.serving_model, plan.serving_depth);

    for (const std::string& id : profiled) {
        if (id == plan.serving_model) continue;
        const ModelSpec& spec = repo.at(id);
        const int depth = choose_depth(pht.entry_of(id).exit_hist, spec, cfg.coverage_target);
        MemoryState with = trial;
        with.loaded_depth[id] = depth;
        if (weights_loaded_bytes(with, repo) > mem_cfg.capacity_bytes - mem_cfg.reserve_bytes)
            continue;
        if (max_batch_size(serving, plan.serving_depth, kv_budget_bytes(mem_cfg, with, repo),
                           mem_cfg.max_seq_len) < 1)
            continue;
        trial = std::move(with);
        plan.residency.emplace_back(id, depth);
    }
    return plan;
}

} // namespace eeserve
