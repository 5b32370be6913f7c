// Shared test helpers: fixture loaders, the straight-line evaluation oracle,
// and event-log replay checks. Used by the unit and acceptance suites.
#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "eeserve/engine.hpp"
#include "eeserve/generator.hpp"

namespace testsupport {

using namespace eeserve;

inline std::string fx(const char* name) {
    return std::string(FIXTURES_DIR "/") + name;
}

inline const ModelRepository& opt_repo() {
    static ModelRepository repo = load_repository(fx("repo_opt.json"));
    return repo;
}

inline const Trace& small_trace() {
    static Trace trace =
        generate_workload(load_generator_config(fx("gen_small.json")), opt_repo());
    return trace;
}

inline MemoryConfig small_mem() {
    return MemoryConfig{40'000'000'000, 1'000'000'000, 256, 8.4e9};
}

inline PolicyConfig small_policy() {
    PolicyConfig cfg;
    cfg.k = 2;
    cfg.n_eval_requests = 5;
    cfg.ri = 150;
    return cfg;
}

inline Trace slice(const Trace& t, std::size_t n) {
    Trace out;
    out.requests.assign(t.requests.begin(), t.requests.begin() + n);
    return out;
}

inline void require_reports_equal(const MetricsReport& a, const MetricsReport& b,
                                  bool compare_timeline = true) {
    REQUIRE(a.per_request.size() == b.per_request.size());
    for (std::size_t i = 0; i < a.per_request.size(); ++i) {
        CAPTURE(i);
        REQUIRE(a.per_request[i].request_id == b.per_request[i].request_id);
        REQUIRE(a.per_request[i].ttft_s == b.per_request[i].ttft_s);
        REQUIRE(a.per_request[i].tpot_mean_s == b.per_request[i].tpot_mean_s);
        REQUIRE(a.per_request[i].latency_s == b.per_request[i].latency_s);
        REQUIRE(a.per_request[i].tokens == b.per_request[i].tokens);
    }
    REQUIRE(a.throughput_tok_s == b.throughput_tok_s);
    REQUIRE(a.mean_ttft_s == b.mean_ttft_s);
    REQUIRE(a.mean_tpot_s == b.mean_tpot_s);
    REQUIRE(a.perplexity == b.perplexity);
    REQUIRE(a.energy_mwh_per_prompt == b.energy_mwh_per_prompt);
    REQUIRE(a.achieved_batch_size == b.achieved_batch_size);
    REQUIRE(a.unchanged_fraction == b.unchanged_fraction);
    REQUIRE(a.exit_table == b.exit_table);
    REQUIRE(a.ld_count == b.ld_count);
    REQUIRE(a.sw_count == b.sw_count);
    if (compare_timeline) {
        REQUIRE(a.memory_timeline.size() == b.memory_timeline.size());
        for (std::size_t i = 0; i < a.memory_timeline.size(); ++i) {
            REQUIRE(a.memory_timeline[i].t_s == b.memory_timeline[i].t_s);
            REQUIRE(a.memory_timeline[i].bytes == b.memory_timeline[i].bytes);
        }
    }
}

/// Straight-line re-derivation of an evaluation-only run: the workload is
/// short enough that every request is consumed while profiling, so the whole
/// report follows from the trace and the parameters with no serving loop.
struct StraightLineRef {
    MetricsReport report;
    Pht pht;
    std::vector<std::string> profiled;
};

inline StraightLineRef straight_line_eval(const Trace& trace, const ModelRepository& repo,
                                          const MemoryConfig& mem, const PolicyConfig& cfg) {
    StraightLineRef ref;
    std::vector<std::string> candidates = select_candidates(repo, cfg.slo, mem, cfg.k);

    double stall = 0.0;
    double decode_wall = 0.0, sum_logprob = 0.0, energy = 0.0, ttft_sum = 0.0, tpot_sum = 0.0;
    std::int64_t tokens = 0, unchanged_count = 0;
    std::map<std::string, std::map<int, std::int64_t>> exit_counts;
    MemoryState mem_state;

    std::size_t cursor = 0;
    for (const std::string& id : candidates) {
        if (cursor >= trace.requests.size()) break;
        const ModelSpec& spec = repo.at(id);
        stall += load_seconds(load_delta_bytes(spec, mem_state.depth_of(id), spec.num_layers), mem);
        mem_state.loaded_depth[id] = spec.num_layers;
        int served = 0;
        while (served < cfg.n_eval_requests && cursor < trace.requests.size()) {
            const TraceRequest& req = trace.requests[cursor++];
            const double prefill_s = static_cast<double>(req.prompt_len) * spec.num_layers *
                                     spec.t_prefill_per_layer_per_token_s;
            const double ttft_s = stall + prefill_s;
            stall = 0.0;
            double tpot_acc = 0.0;
            for (const TokenRecord& tok : req.tokens) {
                const ModelTokenRecord& rec = tok.for_model(id);
                const ExitObservation& obs = earliest_confident_obs(rec, cfg.th);
                const int exit_layer = obs.layer;
                const double dur = exit_layer * spec.t_decode_per_layer_s;
                decode_wall += dur;
                tpot_acc += dur;
                ++tokens;
                exit_counts[id][exit_layer] += 1;
                if (obs.token_id == rec.final_token_id) ++unchanged_count;
                sum_logprob += obs.logprob;
                energy += exit_layer * spec.energy_per_layer_per_token_mwh;
                record_token(ref.pht, spec, exit_layer, obs.logprob, dur);
            }
            const std::int64_t n = req.num_tokens();
            const double tpot_mean_s = tpot_acc / static_cast<double>(n);
            const double latency_s = ttft_s + tpot_mean_s * static_cast<double>(n);
            ttft_sum += ttft_s;
            tpot_sum += tpot_mean_s;
            ref.report.per_request.push_back(
                RequestMetrics{req.request_id, ttft_s, tpot_mean_s, latency_s, n});
            record_request(ref.pht, spec, ttft_s);
            ++served;
        }
    }

    for (const std::string& id : candidates)
        if (ref.pht.has(id)) ref.profiled.push_back(id);

    MetricsReport& r = ref.report;
    const std::int64_t n_req = static_cast<std::int64_t>(r.per_request.size());
    if (tokens > 0) {
        r.throughput_tok_s = static_cast<double>(tokens) / decode_wall;
        r.perplexity = std::exp(-sum_logprob / static_cast<double>(tokens));
        r.unchanged_fraction =
            static_cast<double>(unchanged_count) / static_cast<double>(tokens);
        for (const auto& [model, per_layer] : exit_counts)
            for (const auto& [layer, count] : per_layer)
                r.exit_table[model][layer] =
                    100.0 * static_cast<double>(count) / static_cast<double>(tokens);
        r.achieved_batch_size = 1;
    }
    if (n_req > 0) {
        r.mean_ttft_s = ttft_sum / static_cast<double>(n_req);
        r.mean_tpot_s = tpot_sum / static_cast<double>(n_req);
        r.energy_mwh_per_prompt = energy / static_cast<double>(n_req);
    }
    return ref;
}

inline std::string dump_log(const std::vector<Event>& events) {
    std::string out;
    for (const Event& e : events) {
        out += event_to_json(e).dump();
        out += '\n';
    }
    return out;
}

/// Replay weights_load events and check byte bookkeeping at every step.
inline void check_memory_conservation(const std::vector<Event>& events,
                                      const ModelRepository& repo, const MemoryConfig& mem) {
    std::map<std::string, int> depth;
    for (const Event& e : events) {
        if (e.kind != EventKind::weights_load) continue;
        const Json& p = e.payload;
        const std::string model = p.at("model").get<std::string>();
        const int from = p.at("from_depth").get<int>();
        const int to = p.at("to_depth").get<int>();
        REQUIRE(from == (depth.count(model) ? depth[model] : 0));
        REQUIRE(p.at("bytes").get<std::int64_t>() ==
                load_delta_bytes(repo.at(model), from, to));
        REQUIRE(p.at("duration_s").get<double>() >= 0.0);
        depth[model] = to;
        std::int64_t loaded = 0;
        for (const auto& [id, d] : depth)
            loaded += resident_weights_bytes(repo.at(id), d);
        REQUIRE(p.at("loaded_bytes_after").get<std::int64_t>() == loaded);
        REQUIRE(loaded <= mem.capacity_bytes - mem.reserve_bytes);
        REQUIRE(loaded >= 0);
    }
}

} // namespace testsupport
