#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "eeserve/json_util.hpp"
#include "eeserve/log.hpp"
#include "eeserve/model_spec.hpp"

namespace eeserve {

/// What one exit head observed for one decoded token: the head's argmax token,
/// its confidence, and the log-probability of that token at this head.
struct ExitObservation {
    int layer = 0;
    int token_id = 0;
    double confidence = 0.0;
    double logprob = 0.0;
};

/// Per-model view of a single decode step: one observation per exit head of
/// that model, sorted by layer, plus the token the full model settles on.
struct ModelTokenRecord {
    int final_token_id = 0;
    std::vector<ExitObservation> observations;

    const ExitObservation& at_layer(int layer) const {
        for (const ExitObservation& o : observations)
            if (o.layer == layer) return o;
        throw DomainError("no observation at layer " + std::to_string(layer));
    }
};

struct TokenRecord {
    std::map<std::string, ModelTokenRecord> per_model;

    const ModelTokenRecord& for_model(const std::string& model_id) const {
        auto it = per_model.find(model_id);
        if (it == per_model.end())
            throw DomainError("token record has no entry for model '" + model_id + "'");
        return it->second;
    }
};

struct TraceRequest {
    std::int64_t request_id = 0;
    double arrival_time_s = 0.0;
    int prompt_len = 0;
    std::vector<TokenRecord> tokens;

    int num_tokens() const { return static_cast<int>(tokens.size()); }
};

struct Trace {
    std::vector<TraceRequest> requests;
};

inline std::size_t exit_index(const std::vector<int>& exit_layers, int depth) {
    for (std::size_t i = 0; i < exit_layers.size(); ++i)
        if (exit_layers[i] == depth) return i;
    throw DomainError("depth " + std::to_string(depth) + " is not an exit layer");
}

/// Shallowest head whose confidence clears the threshold; the final head is a
/// forced exit when none does.
inline const ExitObservation& earliest_confident_obs(const ModelTokenRecord& rec,
                                                     double threshold) {
    if (rec.observations.empty())
        throw DomainError("token record has no observations");
    for (const ExitObservation& o : rec.observations)
        if (o.confidence >= threshold) return o;
    return rec.observations.back();
}

inline int earliest_confident_exit(const TokenRecord& rec, const std::string& model_id,
                                   double threshold) {
    return earliest_confident_obs(rec.for_model(model_id), threshold).layer;
}

/// Observation used when serving capped at `depth`: the head at exactly that
/// depth, or the deepest head at or below it (with a warning) when the trace
/// does not carry one.
inline const ExitObservation& observation_for_depth(const ModelTokenRecord& rec, int depth) {
    const ExitObservation* best = nullptr;
    for (const ExitObservation& o : rec.observations) {
        if (o.layer == depth) return o;
        if (o.layer < depth) best = &o;
    }
    if (best == nullptr)
        throw DomainError("no observation at or below layer " + std::to_string(depth));
    log::warn("no observation at layer " + std::to_string(depth) + "; using layer " +
             std::to_string(best->layer));
    return *best;
}

inline Json token_record_to_json(const TokenRecord& tok) {
    Json per_model = Json::object();
    for (const auto& [model_id, rec] : tok.per_model) {
        Json obs = Json::array();
        for (const ExitObservation& o : rec.observations)
            obs.push_back(Json{{"layer", o.layer},
                               {"token_id", o.token_id},
                               {"confidence", o.confidence},
                               {"logprob", o.logprob}});
        per_model[model_id] = Json{{"final_token_id", rec.final_token_id},
                                   {"observations", std::move(obs)}};
    }
    return Json{{"per_model", std::move(per_model)}};
}

inline Json trace_request_to_json(const TraceRequest& req) {
    Json toks = Json::array();
    for (const TokenRecord& t : req.tokens) toks.push_back(token_record_to_json(t));
    return Json{{"request_id", req.request_id},
                {"arrival_time_s", req.arrival_time_s},
                {"prompt_len", req.prompt_len},
                {"tokens", std::move(toks)}};
}

inline TokenRecord token_record_from_json(const Json& j, const std::string& ctx) {
    const Json& per_model = require_field(j, "per_model", ctx);
    if (!per_model.is_object() || per_model.empty())
        throw ValidationError(ctx + ": 'per_model' must be a non-empty object");
    TokenRecord tok;
    for (auto& [model_id, body] : per_model.items()) {
        const std::string mctx = ctx + " model '" + model_id + "'";
        ModelTokenRecord rec;
        rec.final_token_id = static_cast<int>(require_int(body, "final_token_id", mctx));
        const Json& obs = require_field(body, "observations", mctx);
        if (!obs.is_array() || obs.empty())
            throw ValidationError(mctx + ": 'observations' must be a non-empty array");
        for (const Json& o : obs) {
            ExitObservation e;
            e.layer = static_cast<int>(require_int(o, "layer", mctx));
            e.token_id = static_cast<int>(require_int(o, "token_id", mctx));
            e.confidence = require_number(o, "confidence", mctx);
            e.logprob = require_number(o, "logprob", mctx);
            rec.observations.push_back(e);
        }
        tok.per_model[model_id] = std::move(rec);
    }
    return tok;
}

inline TraceRequest trace_request_from_json(const Json& j) {
    TraceRequest req;
    req.request_id = require_int(j, "request_id", "trace request");
    const std::string ctx = "request " + std::to_string(req.request_id);
    req.arrival_time_s = require_number(j, "arrival_time_s", ctx);
    req.prompt_len = static_cast<int>(require_int(j, "prompt_len", ctx));
    const Json& toks = require_field(j, "tokens", ctx);
    if (!toks.is_array())
        throw ValidationError(ctx + ": 'tokens' must be an array");
    int idx = 0;
    for (const Json& t : toks)
        req.tokens.push_back(token_record_from_json(t, ctx + " token " + std::to_string(idx++)));
    return req;
}

inline void write_workload(const Trace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open workload file '" + path + "' for writing");
    for (const TraceRequest& req : trace.requests)
        out << trace_request_to_json(req).dump() << '\n';
    if (!out) throw ValidationError("failed while writing workload file '" + path + "'");
}

inline Trace read_workload(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open workload file '" + path + "'");
    Trace trace;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const std::exception& e) {
            throw ValidationError("workload '" + path + "' line " + std::to_string(lineno) +
                                  ": " + e.what());
        }
        try {
            trace.requests.push_back(trace_request_from_json(j));
        } catch (const std::exception& e) {
            throw ValidationError("workload '" + path + "' line " + std::to_string(lineno) +
                                  ": " + e.what());
        }
    }
    return trace;
}

/// Structural validation against a repository. Hard failures throw; the
/// confidence-monotonicity check only warns, since externally produced traces
/// may legitimately violate it.
inline void validate_workload(const Trace& trace, const ModelRepository& repo) {
    std::map<std::int64_t, bool> seen;
    double prev_arrival = 0.0;
    std::size_t monotonicity_violations = 0;
    for (const TraceRequest& req : trace.requests) {
        const std::string ctx = "request " + std::to_string(req.request_id);
        if (seen.count(req.request_id))
            throw ValidationError("duplicate request_id " + std::to_string(req.request_id));
        seen[req.request_id] = true;
        if (req.prompt_len <= 0) throw ValidationError(ctx + ": prompt_len must be positive");
        if (req.tokens.empty()) throw ValidationError(ctx + ": tokens must be nonempty");
        if (req.arrival_time_s < 0.0)
            throw ValidationError(ctx + ": arrival_time_s must be non-negative");
        if (req.arrival_time_s < prev_arrival)
            throw ValidationError(ctx + ": arrival times must be non-decreasing");
        prev_arrival = req.arrival_time_s;
        for (const TokenRecord& tok : req.tokens) {
            for (const auto& [model_id, rec] : tok.per_model) {
                if (!repo.has(model_id))
                    throw ValidationError(ctx + ": unknown model id '" + model_id + "'");
                const ModelSpec& spec = repo.at(model_id);
                if (rec.observations.size() != spec.exit_layers.size())
                    throw ValidationError(ctx + ": model '" + model_id + "' carries " +
                                          std::to_string(rec.observations.size()) +
                                          " observations, expected one per exit layer");
                double prev_conf = -1.0;
                for (std::size_t i = 0; i < rec.observations.size(); ++i) {
                    const ExitObservation& o = rec.observations[i];
                    if (o.layer != spec.exit_layers[i])
                        throw ValidationError(ctx + ": model '" + model_id +
                                              "' observation layers must match its exit layers "
                                              "in ascending order");
                    if (!(o.confidence >= 0.0 && o.confidence <= 1.0))
                        throw ValidationError(ctx + ": confidence out of [0,1]");
                    if (o.token_id < 0) throw ValidationError(ctx + ": negative token id");
                    if (!(o.logprob <= 0.0))
                        throw ValidationError(ctx + ": logprob must be <= 0");
                    if (o.confidence < prev_conf) ++monotonicity_violations;
                    prev_conf = o.confidence;
                }
                if (rec.observations.back().token_id != rec.final_token_id)
                    throw ValidationError(ctx + ": model '" + model_id +
                                          "' final-layer token must equal final_token_id");
            }
        }
    }
    if (monotonicity_violations > 0)
        log::warn(std::to_string(monotonicity_violations) +
                 " observations with confidence decreasing in depth (accepted)");
}

} // namespace eeserve
