#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "eeserve/events.hpp"
#include "eeserve/json_util.hpp"

namespace eeserve {

struct RequestMetrics {
    std::int64_t request_id = 0;
    double ttft_s = 0.0;
    double tpot_mean_s = 0.0;
    double latency_s = 0.0; // == ttft_s + tpot_mean_s * tokens, stored as computed
    std::int64_t tokens = 0;
};

struct MemorySample {
    double t_s = 0.0;
    std::int64_t bytes = 0;
};

struct MetricsReport {
    std::vector<RequestMetrics> per_request;

    double throughput_tok_s = 0.0;      // decode tokens / decode wall-clock
    double mean_ttft_s = 0.0;           // unweighted over requests
    double mean_tpot_s = 0.0;           // unweighted over per-request means
    double perplexity = 1.0;            // exp(-mean logprob at taken exits)
    double energy_mwh_per_prompt = 0.0;
    int achieved_batch_size = 0;        // max concurrent decode width observed
    double unchanged_fraction = 1.0;    // tokens matching the full-depth token

    // model id -> exit layer -> percent of all emitted tokens
    std::map<std::string, std::map<int, double>> exit_table;

    std::int64_t ld_count = 0; // confidence-breach deepen actions applied
    std::int64_t sw_count = 0; // confidence-breach model switches applied

    std::vector<MemorySample> memory_timeline; // loaded weight bytes after each load event
};

/// Rebuild the full report from an event log alone. The simulator keeps its
/// own running counters; equality of the two is a correctness check, so this
/// must not peek at any simulator state.
inline MetricsReport aggregate(const std::vector<Event>& events) {
    MetricsReport r;
    double last_t = 0.0;
    bool first = true;

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

    for (const Event& e : events) {
        if (!first && e.t_s < last_t)
            throw ValidationError("event log is out of order at t_s=" + std::to_string(e.t_s));
        first = false;
        last_t = e.t_s;

        switch (e.kind) {
            case EventKind::token_emitted: {
                const Json& p = e.payload;
                ++tokens;
                exit_counts[require_string(p, "model", "token_emitted")]
                           [require_int(p, "exit_layer", "token_emitted")] += 1;
                if (p.at("unchanged").get<bool>()) ++unchanged;
                sum_logprob += require_number(p, "logprob", "token_emitted");
                energy_mwh += require_number(p, "energy_mwh", "token_emitted");
                double dur = require_number(p, "duration_s", "token_emitted");
                if (have_step && e.t_s == step_t) {
                    ++step_width;
                } else {
                    decode_wall_s += dur;
                    step_t = e.t_s;
                    step_width = 1;
                    have_step = true;
                }
                if (step_width > r.achieved_batch_size) r.achieved_batch_size = step_width;
                break;
            }
            case EventKind::weights_load: {
                const Json& p = e.payload;
                r.memory_timeline.push_back(
                    {e.t_s, p.at("loaded_bytes_after").get<std::int64_t>()});
                energy_mwh += p.value("energy_mwh", 0.0);
                if (require_string(p, "reason", "weights_load") == "breach_load_more")
                    ++r.ld_count;
                break;
            }
            case EventKind::model_switch: {
                if (require_string(e.payload, "reason", "model_switch") == "breach_action")
                    ++r.sw_count;
                break;
            }
            case EventKind::request_complete: {
                const Json& p = e.payload;
                RequestMetrics m;
                m.request_id = require_int(p, "request_id", "request_complete");
                m.ttft_s = require_number(p, "ttft_s", "request_complete");
                m.tpot_mean_s = require_number(p, "tpot_mean_s", "request_complete");
                m.latency_s = require_number(p, "latency_s", "request_complete");
                m.tokens = require_int(p, "tokens", "request_complete");
                ttft_sum += m.ttft_s;
                tpot_sum += m.tpot_mean_s;
                r.per_request.push_back(m);
                break;
            }
            default:
                break;
        }
    }

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

inline Json metrics_report_to_json(const MetricsReport& r) {
    Json per_request = Json::array();
    for (const RequestMetrics& m : r.per_request) {
        per_request.push_back({{"request_id", m.request_id},
                               {"ttft_s", m.ttft_s},
                               {"tpot_mean_s", m.tpot_mean_s},
                               {"latency_s", m.latency_s},
                               {"tokens", m.tokens}});
    }
    Json exit_table = Json::object();
    for (const auto& [model, per_layer] : r.exit_table) {
        Json row = Json::object();
        for (const auto& [layer, pct] : per_layer) row[std::to_string(layer)] = pct;
        exit_table[model] = row;
    }
    Json timeline = Json::array();
    for (const MemorySample& s : r.memory_timeline)
        timeline.push_back({{"t_s", s.t_s}, {"bytes", s.bytes}});
    return Json{{"per_request", per_request},
                {"aggregates",
                 {{"throughput_tok_s", r.throughput_tok_s},
                  {"mean_ttft_s", r.mean_ttft_s},
                  {"mean_tpot_s", r.mean_tpot_s},
                  {"perplexity", r.perplexity},
                  {"energy_mwh_per_prompt", r.energy_mwh_per_prompt},
                  {"achieved_batch_size", r.achieved_batch_size},
                  {"unchanged_fraction", r.unchanged_fraction}}},
                {"exit_table", exit_table},
                {"action_counts", {{"ld", r.ld_count}, {"sw", r.sw_count}}},
                {"memory_timeline", timeline}};
}

inline MetricsReport metrics_report_from_json(const Json& j) {
    MetricsReport r;
    const Json& agg = require_field(j, "aggregates", "metrics report");
    r.throughput_tok_s = require_number(agg, "throughput_tok_s", "aggregates");
    r.mean_ttft_s = require_number(agg, "mean_ttft_s", "aggregates");
    r.mean_tpot_s = require_number(agg, "mean_tpot_s", "aggregates");
    r.perplexity = require_number(agg, "perplexity", "aggregates");
    r.energy_mwh_per_prompt = require_number(agg, "energy_mwh_per_prompt", "aggregates");
    r.achieved_batch_size = static_cast<int>(require_int(agg, "achieved_batch_size", "aggregates"));
    r.unchanged_fraction = require_number(agg, "unchanged_fraction", "aggregates");
    for (const Json& row : require_field(j, "per_request", "metrics report")) {
        RequestMetrics m;
        m.request_id = require_int(row, "request_id", "per_request");
        m.ttft_s = require_number(row, "ttft_s", "per_request");
        m.tpot_mean_s = require_number(row, "tpot_mean_s", "per_request");
        m.latency_s = require_number(row, "latency_s", "per_request");
        m.tokens = require_int(row, "tokens", "per_request");
        r.per_request.push_back(m);
    }
    const Json& table = require_field(j, "exit_table", "metrics report");
    for (auto it = table.begin(); it != table.end(); ++it)
        for (auto jt = it.value().begin(); jt != it.value().end(); ++jt)
            r.exit_table[it.key()][std::stoi(jt.key())] = jt.value().get<double>();
    const Json& actions = require_field(j, "action_counts", "metrics report");
    r.ld_count = require_int(actions, "ld", "action_counts");
    r.sw_count = require_int(actions, "sw", "action_counts");
    for (const Json& s : require_field(j, "memory_timeline", "metrics report"))
        r.memory_timeline.push_back({require_number(s, "t_s", "memory_timeline"),
                                     require_int(s, "bytes", "memory_timeline")});
    return r;
}

namespace detail {

inline std::string fmt_double(double v) {
    return Json(v).dump(); // shortest round-trip representation
}

} // namespace detail

/// format: "json" or "csv". CSV carries the fixed per-request header plus a
/// key/value summary block; anything else is a usage error.
inline void write_report(const MetricsReport& r, const std::string& path,
                         const std::string& format) {
    if (format != "json" && format != "csv")
        throw ValidationError("unknown report format '" + format + "' (expected json or csv)");
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open report '" + path + "' for writing");
    if (format == "json") {
        out << metrics_report_to_json(r).dump(2) << '\n';
    } else {
        out << "request_id,ttft_s,tpot_mean_s,latency_s,tokens\n";
        for (const RequestMetrics& m : r.per_request)
            out << m.request_id << ',' << detail::fmt_double(m.ttft_s) << ','
                << detail::fmt_double(m.tpot_mean_s) << ','
                << detail::fmt_double(m.latency_s) << ',' << m.tokens << '\n';
        out << "\nmetric,value\n";
        out << "throughput_tok_s," << detail::fmt_double(r.throughput_tok_s) << '\n';
        out << "mean_ttft_s," << detail::fmt_double(r.mean_ttft_s) << '\n';
        out << "mean_tpot_s," << detail::fmt_double(r.mean_tpot_s) << '\n';
        out << "perplexity," << detail::fmt_double(r.perplexity) << '\n';
        out << "energy_mwh_per_prompt," << detail::fmt_double(r.energy_mwh_per_prompt) << '\n';
        out << "achieved_batch_size," << r.achieved_batch_size << '\n';
        out << "unchanged_fraction," << detail::fmt_double(r.unchanged_fraction) << '\n';
        out << "ld," << r.ld_count << '\n';
        out << "sw," << r.sw_count << '\n';
        for (const auto& [model, per_layer] : r.exit_table)
            for (const auto& [layer, pct] : per_layer)
                out << "exit_pct." << model << '.' << layer << ','
                    << detail::fmt_double(pct) << '\n';
    }
    if (!out) throw ValidationError("failed while writing report '" + path + "'");
}

inline void write_memory_timeline(const MetricsReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open timeline '" + path + "' for writing");
    out << "t_s,bytes\n";
    for (const MemorySample& s : r.memory_timeline)
        out << detail::fmt_double(s.t_s) << ',' << s.bytes << '\n';
    if (!out) throw ValidationError("failed while writing timeline '" + path + "'");
}

} // namespace eeserve
