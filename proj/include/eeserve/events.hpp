#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "eeserve/json_util.hpp"

namespace eeserve {

enum class EventKind {
    request_start,
    prefill,
    token_emitted,
    weights_load,
    model_switch,
    eval_phase_start,
    eval_phase_end,
    reassess_start,
    reassess_end,
    request_complete,
};

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::request_start: return "request_start";
        case EventKind::prefill: return "prefill";
        case EventKind::token_emitted: return "token_emitted";
        case EventKind::weights_load: return "weights_load";
        case EventKind::model_switch: return "model_switch";
        case EventKind::eval_phase_start: return "eval_phase_start";
        case EventKind::eval_phase_end: return "eval_phase_end";
        case EventKind::reassess_start: return "reassess_start";
        case EventKind::reassess_end: return "reassess_end";
        case EventKind::request_complete: return "request_complete";
    }
    return "?";
}

inline EventKind event_kind_from_string(const std::string& s) {
    if (s == "request_start") return EventKind::request_start;
    if (s == "prefill") return EventKind::prefill;
    if (s == "token_emitted") return EventKind::token_emitted;
    if (s == "weights_load") return EventKind::weights_load;
    if (s == "model_switch") return EventKind::model_switch;
    if (s == "eval_phase_start") return EventKind::eval_phase_start;
    if (s == "eval_phase_end") return EventKind::eval_phase_end;
    if (s == "reassess_start") return EventKind::reassess_start;
    if (s == "reassess_end") return EventKind::reassess_end;
    if (s == "request_complete") return EventKind::request_complete;
    throw ValidationError("unknown event kind '" + s + "'");
}

/// One simulator event. Payload fields are flat and stable per kind:
///   request_start   {request_id}
///   prefill         {request_id, model, depth, duration_s}
///   token_emitted   {request_id, model, exit_layer, breached, unchanged,
///                    duration_s, logprob, energy_mwh}
///   weights_load    {model, from_depth, to_depth, bytes, duration_s, reason,
///                    loaded_bytes_after, energy_mwh}
///   model_switch    {from, to, reason}
///   eval_phase_*    {model}
///   reassess_*      {cycle}
///   request_complete{request_id, ttft_s, tpot_mean_s, latency_s, tokens}
struct Event {
    double t_s = 0.0;
    EventKind kind = EventKind::request_start;
    Json payload;
};

inline Json event_to_json(const Event& e) {
    Json j = e.payload.is_object() ? e.payload : Json::object();
    j["t_s"] = e.t_s;
    j["kind"] = to_string(e.kind);
    return j;
}

inline Event event_from_json(const Json& j) {
    Event e;
    e.t_s = require_number(j, "t_s", "event");
    e.kind = event_kind_from_string(require_string(j, "kind", "event"));
    e.payload = j;
    e.payload.erase("t_s");
    e.payload.erase("kind");
    return e;
}

inline void write_event_log(const std::vector<Event>& events, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open event log '" + path + "' for writing");
    for (const Event& e : events) out << event_to_json(e).dump() << '\n';
    if (!out) throw ValidationError("failed while writing event log '" + path + "'");
}

inline std::vector<Event> read_event_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open event log '" + path + "'");
    std::vector<Event> events;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            events.push_back(event_from_json(Json::parse(line)));
        } catch (const std::exception& e) {
            throw ValidationError("event log '" + path + "' line " + std::to_string(lineno) +
                                  ": " + e.what());
        }
    }
    return events;
}

} // namespace eeserve
