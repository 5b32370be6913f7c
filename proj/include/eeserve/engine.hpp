#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eeserve/config.hpp"
#include "eeserve/events.hpp"
#include "eeserve/log.hpp"
#include "eeserve/memory_model.hpp"
#include "eeserve/metrics.hpp"
#include "eeserve/pht.hpp"
#include "eeserve/policy.hpp"
#include "eeserve/trace.hpp"

namespace eeserve {

struct SimulationResult {
    std::vector<Event> events;
    MetricsReport report;
    Pht pht; // final profile state (empty outside the adaptive mode)
};

namespace detail {

/// Inline metric accumulation, updated at the moment each event is emitted.
/// aggregate() recomputes the same report from the log alone; the two must
/// agree field for field, so the arithmetic here mirrors it exactly.
struct MetricsBuilder {
    MetricsReport r;
    double decode_wall_s = 0.0;
    double sum_logprob = 0.0;
    double energy_mwh = 0.0;
    double ttft_sum = 0.0;
    double tpot_sum = 0.0;
    std::int64_t tokens = 0;
    std::int64_t unchanged = 0;
    std::map<std::string, std::map<int, std::int64_t>> exit_counts;
    double step_t = 0.0;
    bool have_step = false;
    int step_width = 0;

    void on_token(double t, const std::string& model, int exit_layer, bool was_unchanged,
                  double logprob, double token_energy_mwh, double duration_s) {
        ++tokens;
        exit_counts[model][exit_layer] += 1;
        if (was_unchanged) ++unchanged;
        sum_logprob += logprob;
        energy_mwh += token_energy_mwh;
        if (have_step && t == step_t) {
            ++step_width;
        } else {
            decode_wall_s += duration_s;
            step_t = t;
            step_width = 1;
            have_step = true;
        }
        if (step_width > r.achieved_batch_size) r.achieved_batch_size = step_width;
    }

    void on_load(double t, std::int64_t loaded_bytes_after, double load_energy_mwh,
                 const std::string& reason) {
        r.memory_timeline.push_back({t, loaded_bytes_after});
        energy_mwh += load_energy_mwh;
        if (reason == "breach_load_more") ++r.ld_count;
    }

    void on_switch(const std::string& reason) {
        if (reason == "breach_action") ++r.sw_count;
    }

    void on_complete(const RequestMetrics& m) {
        ttft_sum += m.ttft_s;
        tpot_sum += m.tpot_mean_s;
        r.per_request.push_back(m);
    }

    MetricsReport finalize() {
        const std::int64_t n_req = static_cast<std::int64_t>(r.per_request.size());
        if (tokens > 0) {
            r.throughput_tok_s = static_cast<double>(tokens) / decode_wall_s;
            r.perplexity = std::exp(-sum_logprob / static_cast<double>(tokens));
            r.unchanged_fraction =
                static_cast<double>(unchanged) / static_cast<double>(tokens);
            for (const auto& [model, per_layer] : exit_counts)
                for (const auto& [layer, count] : per_layer)
                    r.exit_table[model][layer] =
                        100.0 * static_cast<double>(count) / static_cast<double>(tokens);
        }
        if (n_req > 0) {
            r.mean_ttft_s = ttft_sum / static_cast<double>(n_req);
            r.mean_tpot_s = tpot_sum / static_cast<double>(n_req);
            r.energy_mwh_per_prompt = energy_mwh / static_cast<double>(n_req);
        }
        return r;
    }
};

} // namespace detail

/// Trace-driven serving simulator. Decoding is strictly sequential (batch 1):
/// batch growth enters through the analytic memory model, which prices the
/// action planner's options and the capacity checks, not through concurrent
/// request interleaving.
class Simulator {
public:
    Simulator(const ModelRepository& repo, const Trace& trace, const MemoryConfig& mem_cfg,
              const PolicyConfig& policy, const ModeSpec& mode)
        : repo_(repo), trace_(trace), mem_cfg_(mem_cfg), policy_(policy), mode_(mode) {}

    SimulationResult run() {
        validate_memory_config(mem_cfg_);
        validate_policy_config(policy_);
        validate_workload(trace_, repo_);

        if (mode_.kind == Mode::helios) {
            candidates_ = select_candidates(repo_, policy_.slo, mem_cfg_, policy_.k);
            check_coverage(candidates_);
        } else {
            if (!repo_.has(mode_.model))
                throw ValidationError("mode model '" + mode_.model + "' is not in the repository");
            check_coverage({mode_.model});
        }
        if (trace_.requests.empty()) return {std::move(events_), acc_.finalize(), std::move(pht_)};

        if (mode_.kind == Mode::helios) {
            since_eval_ = policy_.ri; // force an evaluation before any serving
        } else {
            serving_model_ = mode_.model;
            serving_depth_ = repo_.at(mode_.model).num_layers;
            do_load(serving_model_, serving_depth_, "startup");
        }

        const std::size_t total = trace_.requests.size();
        while (cursor_ < total) {
            if (mode_.kind == Mode::helios && should_reassess(since_eval_, policy_)) {
                run_eval_cycle();
                continue;
            }
            if (pending_) apply_pending();
            const TraceRequest& req = trace_.requests[cursor_++];
            if (mode_.kind == Mode::vanilla)
                serve_one(req, serving_model_, serving_depth_, TokenPolicy::full_depth, false);
            else if (mode_.kind == Mode::ee_single)
                serve_one(req, serving_model_, serving_depth_, TokenPolicy::introspective, false);
            else
                serve_one(req, serving_model_, serving_depth_, TokenPolicy::flat, false);
        }
        return {std::move(events_), acc_.finalize(), std::move(pht_)};
    }

private:
    enum class TokenPolicy { flat, introspective, full_depth };

    const ModelRepository& repo_;
    const Trace& trace_;
    MemoryConfig mem_cfg_;
    PolicyConfig policy_;
    ModeSpec mode_;

    double clock_ = 0.0;
    double pending_stall_s_ = 0.0; // load time charged to the next prefill's TTFT
    MemoryState mem_;
    std::string serving_model_;
    int serving_depth_ = 0;
    std::vector<std::string> candidates_;
    Pht pht_;
    BreachTracker breach_;
    std::optional<ActionPlan> pending_;
    std::int64_t admitted_ = 0;
    std::int64_t since_eval_ = 0;
    std::int64_t cycle_ = 0;
    std::size_t cursor_ = 0;

    std::vector<Event> events_;
    detail::MetricsBuilder acc_;

    void check_coverage(const std::vector<std::string>& models) const {
        for (const TraceRequest& req : trace_.requests)
            for (const TokenRecord& tok : req.tokens)
                for (const std::string& m : models)
                    if (!tok.per_model.count(m))
                        throw ValidationError("workload does not cover model '" + m +
                                              "' (request " + std::to_string(req.request_id) +
                                              ")");
    }

    void emit(EventKind kind, Json payload) {
        events_.push_back(Event{clock_, kind, std::move(payload)});
    }

    /// Move a model to `target` depth. Growth pays bytes over the link and
    /// stalls the clock; shrink and eviction are free and instantaneous.
    void do_load(const std::string& id, int target, const std::string& reason) {
        const int from = mem_.depth_of(id);
        if (from == target) return;
        const ModelSpec& spec = repo_.at(id);
        const std::int64_t bytes = load_delta_bytes(spec, from, target);
        const double dur = load_seconds(bytes, mem_cfg_);
        apply_load(mem_, repo_, mem_cfg_, id, target);
        clock_ += dur;
        pending_stall_s_ += dur;
        const std::int64_t after = weights_loaded_bytes(mem_, repo_);
        emit(EventKind::weights_load, Json{{"model", id},
                                           {"from_depth", from},
                                           {"to_depth", target},
                                           {"bytes", bytes},
                                           {"duration_s", dur},
                                           {"reason", reason},
                                           {"loaded_bytes_after", after},
                                           {"energy_mwh", 0.0}});
        acc_.on_load(clock_, after, 0.0, reason);
    }

    /// Bring a candidate to full depth for profiling, evicting everything else
    /// if keeping residents would not fit.
    void load_for_eval(const std::string& id) {
        const ModelSpec& spec = repo_.at(id);
        MemoryState trial = mem_;
        trial.loaded_depth[id] = spec.num_layers;
        if (weights_loaded_bytes(trial, repo_) > mem_cfg_.capacity_bytes - mem_cfg_.reserve_bytes) {
            std::vector<std::string> others;
            for (const auto& [other, d] : mem_.loaded_depth)
                if (other != id && d > 0) others.push_back(other);
            for (const std::string& other : others) do_load(other, 0, "evict");
        }
        do_load(id, spec.num_layers, "eval");
        if (max_batch_size(spec, spec.num_layers, kv_budget_bytes(mem_cfg_, mem_, repo_),
                           mem_cfg_.max_seq_len) < 1)
            throw CapacityError("cannot fit one sequence while profiling '" + id + "'");
    }

    std::vector<std::string> profiled_candidates() const {
        std::vector<std::string> out;
        for (const std::string& id : candidates_)
            if (id == serving_model_ || pht_.has(id)) out.push_back(id);
        return out;
    }

    void run_eval_cycle() {
        ++cycle_;
        pending_.reset(); // fresh profiles supersede any queued breach action
        breach_.reset();
        since_eval_ = 0;
        emit(EventKind::reassess_start, Json{{"cycle", cycle_}});
        const std::size_t total = trace_.requests.size();
        for (const std::string& id : candidates_) {
            if (cursor_ >= total) {
                log::warn("evaluation truncated: workload exhausted before profiling '" + id +
                          "'");
                break;
            }
            emit(EventKind::eval_phase_start, Json{{"model", id}});
            pht_.reset(id);
            load_for_eval(id);
            const ModelSpec& spec = repo_.at(id);
            int served = 0;
            while (served < policy_.n_eval_requests && cursor_ < total) {
                serve_one(trace_.requests[cursor_++], id, spec.num_layers,
                          TokenPolicy::introspective, true);
                ++served;
            }
            if (served < policy_.n_eval_requests)
                log::warn("evaluation of '" + id + "' truncated to " + std::to_string(served) +
                          " of " + std::to_string(policy_.n_eval_requests) + " requests");
            pht_.entry_for(id).last_updated = admitted_;
            emit(EventKind::eval_phase_end, Json{{"model", id}});
        }

        std::vector<std::string> profiled;
        for (const std::string& id : candidates_)
            if (pht_.has(id)) profiled.push_back(id);
        if (!profiled.empty()) apply_replan(replan_after_eval(repo_, pht_, profiled, policy_, mem_cfg_));
        emit(EventKind::reassess_end, Json{{"cycle", cycle_}});
    }

    void apply_replan(const ReplanResult& plan) {
        std::vector<std::string> drop;
        for (const auto& [id, d] : mem_.loaded_depth) {
            if (d <= 0) continue;
            bool keep = false;
            for (const auto& [rid, rdepth] : plan.residency)
                if (rid == id) keep = true;
            if (!keep) drop.push_back(id);
        }
        for (const std::string& id : drop) do_load(id, 0, "reassess");
        for (const auto& [id, depth] : plan.residency) do_load(id, depth, "reassess");
        if (!serving_model_.empty() && serving_model_ != plan.serving_model) {
            emit(EventKind::model_switch, Json{{"from", serving_model_},
                                               {"to", plan.serving_model},
                                               {"reason", "reassess"}});
            acc_.on_switch("reassess");
        }
        serving_model_ = plan.serving_model;
        serving_depth_ = plan.serving_depth;
    }

    void apply_pending() {
        const ActionPlan plan = *pending_;
        pending_.reset();
        if (plan.kind == ActionKind::stay) {
            breach_.reset();
            return;
        }
        for (const std::string& id : plan.evict) do_load(id, 0, "breach_evict");
        if (plan.kind == ActionKind::load_more) {
            do_load(plan.model_id, plan.serving_depth, "breach_load_more");
            serving_depth_ = plan.serving_depth;
        } else {
            if (mem_.depth_of(plan.model_id) < plan.serving_depth)
                do_load(plan.model_id, plan.serving_depth, "breach_switch");
            emit(EventKind::model_switch, Json{{"from", serving_model_},
                                               {"to", plan.model_id},
                                               {"reason", "breach_action"}});
            acc_.on_switch("breach_action");
            serving_model_ = plan.model_id;
            serving_depth_ = plan.serving_depth;
        }
        breach_.reset();
    }

    void serve_one(const TraceRequest& req, const std::string& model, int depth,
                   TokenPolicy token_policy, bool record_profile) {
        const ModelSpec& spec = repo_.at(model);
        if (clock_ < req.arrival_time_s) clock_ = req.arrival_time_s;
        ++admitted_;
        ++since_eval_;
        emit(EventKind::request_start, Json{{"request_id", req.request_id}});

        const double prefill_s = static_cast<double>(req.prompt_len) * depth *
                                 spec.t_prefill_per_layer_per_token_s;
        clock_ += prefill_s;
        const double ttft_s = pending_stall_s_ + prefill_s;
        pending_stall_s_ = 0.0;
        emit(EventKind::prefill, Json{{"request_id", req.request_id},
                                      {"model", model},
                                      {"depth", depth},
                                      {"duration_s", prefill_s}});

        double tpot_acc = 0.0;
        for (const TokenRecord& tok : req.tokens) {
            const ModelTokenRecord& rec = tok.for_model(model);
            int exit_layer = 0;
            const ExitObservation* obs = nullptr;
            bool breached = false;
            switch (token_policy) {
                case TokenPolicy::flat:
                    obs = &observation_for_depth(rec, depth);
                    exit_layer = depth;
                    breached = obs->confidence < policy_.th;
                    break;
                case TokenPolicy::introspective:
                    obs = &earliest_confident_obs(rec, policy_.th);
                    exit_layer = obs->layer;
                    breached = obs->confidence < policy_.th;
                    break;
                case TokenPolicy::full_depth:
                    obs = &rec.observations.back();
                    exit_layer = spec.num_layers;
                    breached = false;
                    break;
            }
            const bool unchanged = obs->token_id == rec.final_token_id;
            const double dur = exit_layer * spec.t_decode_per_layer_s;
            const double energy = exit_layer * spec.energy_per_layer_per_token_mwh;
            clock_ += dur;
            tpot_acc += dur;
            emit(EventKind::token_emitted, Json{{"request_id", req.request_id},
                                                {"model", model},
                                                {"exit_layer", exit_layer},
                                                {"breached", breached},
                                                {"unchanged", unchanged},
                                                {"duration_s", dur},
                                                {"logprob", obs->logprob},
                                                {"energy_mwh", energy}});
            acc_.on_token(clock_, model, exit_layer, unchanged, obs->logprob, energy, dur);
            if (record_profile) record_token(pht_, spec, exit_layer, obs->logprob, dur);
            if (token_policy == TokenPolicy::flat && mode_.kind == Mode::helios) {
                if (observe_token(breach_, breached, policy_) && !pending_)
                    pending_ = decide_action(repo_, pht_, profiled_candidates(), serving_model_,
                                             serving_depth_, mem_cfg_, mem_, policy_);
            }
        }

        const std::int64_t n = req.num_tokens();
        const double tpot_mean_s = tpot_acc / static_cast<double>(n);
        const double latency_s = ttft_s + tpot_mean_s * static_cast<double>(n);
        emit(EventKind::request_complete, Json{{"request_id", req.request_id},
                                               {"ttft_s", ttft_s},
                                               {"tpot_mean_s", tpot_mean_s},
                                               {"latency_s", latency_s},
                                               {"tokens", n}});
        acc_.on_complete(RequestMetrics{req.request_id, ttft_s, tpot_mean_s, latency_s, n});
        if (record_profile) record_request(pht_, spec, ttft_s);
    }
};

/// Run one experiment over an in-memory workload. `seed` is accepted for
/// interface symmetry with the generator but the simulation itself is fully
/// deterministic, so it is unused.
inline SimulationResult simulate(const ModelRepository& repo, const Trace& trace,
                                 const MemoryConfig& mem_cfg, const PolicyConfig& policy,
                                 const ModeSpec& mode, std::uint64_t /*seed*/ = 0) {
    return Simulator(repo, trace, mem_cfg, policy, mode).run();
}

} // namespace eeserve
