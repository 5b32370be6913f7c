#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "eeserve/json_util.hpp"
#include "eeserve/model_spec.hpp"

namespace eeserve {

/// Empirical distribution of exit depths taken by one model's tokens.
struct ExitHistogram {
    std::map<int, std::int64_t> counts;
    std::int64_t total = 0;

    void add(int depth, std::int64_t n = 1) {
        counts[depth] += n;
        total += n;
    }

    double frac(int depth) const {
        if (total == 0) throw StalenessError("exit histogram is empty");
        auto it = counts.find(depth);
        return it == counts.end() ? 0.0 : static_cast<double>(it->second) / total;
    }

    /// Fraction of tokens that exited at or before `depth`.
    double cum_frac(int depth) const {
        if (total == 0) throw StalenessError("exit histogram is empty");
        std::int64_t n = 0;
        for (const auto& [d, c] : counts)
            if (d <= depth) n += c;
        return static_cast<double>(n) / total;
    }
};

inline ExitHistogram point_mass(int depth) {
    ExitHistogram h;
    h.add(depth);
    return h;
}

/// Telemetry gathered for one model during its most recent evaluation round.
struct PhtEntry {
    ExitHistogram exit_hist;
    double sum_neg_logprob = 0.0;
    std::int64_t token_count = 0;
    double tpot_sum_s = 0.0;
    double ttft_sum_s = 0.0;
    std::int64_t request_count = 0;
    std::int64_t last_updated = 0;  // global request counter at last refresh

    double measured_tpot_s() const {
        return token_count == 0 ? 0.0 : tpot_sum_s / static_cast<double>(token_count);
    }

    double measured_ttft_s() const {
        return request_count == 0 ? 0.0 : ttft_sum_s / static_cast<double>(request_count);
    }

    std::optional<double> perplexity() const {
        if (token_count == 0) return std::nullopt;
        return std::exp(sum_neg_logprob / static_cast<double>(token_count));
    }
};

/// Performance history table: per-model telemetry refreshed on reassessment.
struct Pht {
    std::map<std::string, PhtEntry> entries;

    PhtEntry& entry_for(const std::string& id) { return entries[id]; }

    const PhtEntry& entry_of(const std::string& id) const {
        auto it = entries.find(id);
        if (it == entries.end() || it->second.token_count == 0)
            throw StalenessError("performance history for model '" + id + "' is empty");
        return it->second;
    }

    bool has(const std::string& id) const {
        auto it = entries.find(id);
        return it != entries.end() && it->second.token_count > 0;
    }

    void reset(const std::string& id) { entries[id] = PhtEntry{}; }
};

/// Record one full-depth evaluation token for `spec`.
inline void record_token(Pht& pht, const ModelSpec& spec, int exit_layer, double logprob,
                         double tpot_s) {
    if (!spec.is_exit_layer(exit_layer))
        throw DomainError("layer " + std::to_string(exit_layer) + " is not an exit of model '" +
                          spec.id + "'");
    PhtEntry& e = pht.entry_for(spec.id);
    e.exit_hist.add(exit_layer);
    e.sum_neg_logprob -= logprob;
    e.token_count += 1;
    e.tpot_sum_s += tpot_s;
}

/// Record one completed evaluation request's time to first token.
inline void record_request(Pht& pht, const ModelSpec& spec, double ttft_s) {
    PhtEntry& e = pht.entry_for(spec.id);
    e.ttft_sum_s += ttft_s;
    e.request_count += 1;
}

inline std::optional<double> perplexity(const Pht& pht, const std::string& id) {
    auto it = pht.entries.find(id);
    if (it == pht.entries.end()) return std::nullopt;
    return it->second.perplexity();
}

/// Shallowest exit that already covers the requested fraction of tokens; falls
/// back to the final layer when no earlier exit does.
inline int choose_depth(const ExitHistogram& hist, const ModelSpec& spec, double coverage_target) {
    if (coverage_target <= 0.0 || coverage_target > 1.0)
        throw DomainError("coverage_target must be in (0, 1]");
    if (hist.total == 0) throw DomainError("choose_depth on an empty histogram");
    for (int e : spec.exit_layers)
        if (hist.cum_frac(e) >= coverage_target) return e;
    return spec.num_layers;
}

inline Json pht_to_json(const Pht& pht) {
    Json j = Json::object();
    for (const auto& [id, e] : pht.entries) {
        Json counts = Json::object();
        for (const auto& [layer, c] : e.exit_hist.counts) counts[std::to_string(layer)] = c;
        Json entry{{"exit_hist", Json{{"counts", std::move(counts)}, {"total", e.exit_hist.total}}},
                   {"sum_neg_logprob", e.sum_neg_logprob},
                   {"token_count", e.token_count},
                   {"measured_tpot_s", e.measured_tpot_s()},
                   {"measured_ttft_s", e.measured_ttft_s()},
                   {"last_updated", e.last_updated}};
        const auto ppl = e.perplexity();
        entry["perplexity"] = ppl ? Json(*ppl) : Json(nullptr);
        j[id] = std::move(entry);
    }
    return j;
}

} // namespace eeserve
