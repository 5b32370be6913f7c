#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "eeserve/rng.hpp"
#include "eeserve/trace.hpp"

namespace eeserve {

/// Integer sampling law for per-request sizes.
struct IntLaw {
    enum class Kind { fixed, uniform_int };
    Kind kind = Kind::fixed;
    int lo = 0;
    int hi = 0;

    int sample(Rng& rng) const {
        if (kind == Kind::fixed) return lo;
        return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    }
};

inline IntLaw int_law_from_json(const Json& j, const std::string& ctx) {
    IntLaw law;
    if (j.is_object() && j.contains("fixed")) {
        law.kind = IntLaw::Kind::fixed;
        law.lo = law.hi = j.at("fixed").get<int>();
    } else if (j.is_object() && j.contains("uniform_int")) {
        const auto range = j.at("uniform_int").get<std::vector<int>>();
        if (range.size() != 2 || range[0] > range[1])
            throw ValidationError(ctx + ": uniform_int law needs [lo, hi] with lo <= hi");
        law.kind = IntLaw::Kind::uniform_int;
        law.lo = range[0];
        law.hi = range[1];
    } else {
        throw ValidationError(ctx + ": law must be {\"fixed\": n} or {\"uniform_int\": [lo, hi]}");
    }
    if (law.lo <= 0) throw ValidationError(ctx + ": law values must be positive");
    return law;
}

inline Json int_law_to_json(const IntLaw& law) {
    if (law.kind == IntLaw::Kind::fixed) return Json{{"fixed", law.lo}};
    return Json{{"uniform_int", {law.lo, law.hi}}};
}

/// One phase of the synthetic workload: how often the reference model's
/// tokens settle at each of its exits, and — conditioned on that — how the
/// other models' tokens settle at theirs.
struct SegmentSpec {
    std::string name;
    int num_requests = 0;
    std::vector<double> reference_exit_probs;  // aligned with the reference model's exits
    // per coupled model: row per reference exit, column per coupled exit
    std::map<std::string, std::vector<std::vector<double>>> coupling;
};

struct GeneratorConfig {
    std::uint64_t seed = 1;
    int num_requests = 0;
    IntLaw prompt_len_law;
    IntLaw tokens_per_request_law;
    int vocab_size = 50257;
    std::string reference_model;
    std::vector<std::string> coupled_models;
    std::vector<SegmentSpec> segments;
    // confidence law: heads before the settled exit draw from [below_lo,
    // below_hi], the settled exit and deeper heads from [above_lo, above_hi]
    double conf_below_lo = 0.05;
    double conf_below_hi = 0.45;
    double conf_above_lo = 0.895;
    double conf_above_hi = 1.0;
    // chance that a head before the settled exit already emits the final
    // token, overridable per (model, exit layer)
    double default_unchanged_prob = 0.921;
    std::map<std::string, std::map<int, double>> unchanged_prob;

    double unchanged_for(const std::string& model_id, int layer) const {
        auto mit = unchanged_prob.find(model_id);
        if (mit != unchanged_prob.end()) {
            auto lit = mit->second.find(layer);
            if (lit != mit->second.end()) return lit->second;
        }
        return default_unchanged_prob;
    }
};

inline GeneratorConfig generator_config_from_json(const Json& j) {
    GeneratorConfig cfg;
    const std::string ctx = "generator config";
    cfg.seed = static_cast<std::uint64_t>(require_int(j, "seed", ctx));
    cfg.num_requests = static_cast<int>(require_int(j, "num_requests", ctx));
    cfg.prompt_len_law = int_law_from_json(require_field(j, "prompt_len_law", ctx),
                                           ctx + " prompt_len_law");
    cfg.tokens_per_request_law = int_law_from_json(require_field(j, "tokens_per_request_law", ctx),
                                                   ctx + " tokens_per_request_law");
    if (j.contains("vocab_size")) cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.reference_model = require_string(j, "reference_model", ctx);
    if (j.contains("coupled_models"))
        cfg.coupled_models = j.at("coupled_models").get<std::vector<std::string>>();
    if (j.contains("confidence_law")) {
        const Json& law = j.at("confidence_law");
        const auto below = require_field(law, "below", ctx).get<std::vector<double>>();
        const auto above = require_field(law, "above", ctx).get<std::vector<double>>();
        if (below.size() != 2 || above.size() != 2)
            throw ValidationError(ctx + ": confidence_law needs [lo, hi] pairs");
        cfg.conf_below_lo = below[0];
        cfg.conf_below_hi = below[1];
        cfg.conf_above_lo = above[0];
        cfg.conf_above_hi = above[1];
    }
    if (j.contains("unchanged_prob")) {
        for (auto& [key, val] : j.at("unchanged_prob").items()) {
            if (key == "default") {
                cfg.default_unchanged_prob = val.get<double>();
            } else {
                for (auto& [layer, p] : val.items())
                    cfg.unchanged_prob[key][std::stoi(layer)] = p.get<double>();
            }
        }
    }
    for (const Json& s : require_field(j, "segments", ctx)) {
        SegmentSpec seg;
        seg.name = require_string(s, "name", ctx + " segment");
        seg.num_requests = static_cast<int>(require_int(s, "num_requests", seg.name));
        seg.reference_exit_probs =
            require_field(s, "reference_exit_probs", seg.name).get<std::vector<double>>();
        if (s.contains("coupling"))
            for (auto& [model_id, rows] : s.at("coupling").items())
                seg.coupling[model_id] = rows.get<std::vector<std::vector<double>>>();
        cfg.segments.push_back(std::move(seg));
    }
    return cfg;
}

inline Json generator_config_to_json(const GeneratorConfig& cfg) {
    Json j{{"seed", cfg.seed},
           {"num_requests", cfg.num_requests},
           {"prompt_len_law", int_law_to_json(cfg.prompt_len_law)},
           {"tokens_per_request_law", int_law_to_json(cfg.tokens_per_request_law)},
           {"vocab_size", cfg.vocab_size},
           {"reference_model", cfg.reference_model},
           {"coupled_models", cfg.coupled_models},
           {"confidence_law",
            Json{{"below", {cfg.conf_below_lo, cfg.conf_below_hi}},
                 {"above", {cfg.conf_above_lo, cfg.conf_above_hi}}}}};
    Json up = Json::object();
    up["default"] = cfg.default_unchanged_prob;
    for (const auto& [model_id, layers] : cfg.unchanged_prob) {
        Json m = Json::object();
        for (const auto& [layer, p] : layers) m[std::to_string(layer)] = p;
        up[model_id] = std::move(m);
    }
    j["unchanged_prob"] = std::move(up);
    Json segs = Json::array();
    for (const SegmentSpec& seg : cfg.segments) {
        Json s{{"name", seg.name},
               {"num_requests", seg.num_requests},
               {"reference_exit_probs", seg.reference_exit_probs}};
        if (!seg.coupling.empty()) {
            Json c = Json::object();
            for (const auto& [model_id, rows] : seg.coupling) c[model_id] = rows;
            s["coupling"] = std::move(c);
        }
        segs.push_back(std::move(s));
    }
    j["segments"] = std::move(segs);
    return j;
}

inline GeneratorConfig load_generator_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open generator config '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ValidationError("generator config '" + path + "': " + e.what());
    }
    return generator_config_from_json(j);
}

namespace detail {

inline void check_distribution(const std::vector<double>& probs, std::size_t want,
                               const std::string& ctx) {
    if (probs.size() != want)
        throw ValidationError(ctx + ": expected " + std::to_string(want) + " probabilities, got " +
                              std::to_string(probs.size()));
    double sum = 0.0;
    for (double p : probs) {
        if (p < 0.0 || p > 1.0) throw ValidationError(ctx + ": probability out of [0,1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError(ctx + ": probabilities sum to " + std::to_string(sum) + ", not 1");
}

inline std::size_t sample_cdf(double u, const std::vector<double>& probs) {
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return i;
    }
    return probs.size() - 1;
}

} // namespace detail

inline void validate_generator_config(const GeneratorConfig& cfg, const ModelRepository& repo) {
    if (cfg.num_requests <= 0) throw ValidationError("generator: num_requests must be positive");
    if (cfg.vocab_size < 2) throw ValidationError("generator: vocab_size must be at least 2");
    if (!(cfg.default_unchanged_prob >= 0.0 && cfg.default_unchanged_prob <= 1.0))
        throw ValidationError("generator: default unchanged_prob must be in [0,1]");
    for (const auto& [model_id, layers] : cfg.unchanged_prob) {
        if (!repo.has(model_id))
            throw ValidationError("generator: unchanged_prob for unknown model '" + model_id + "'");
        for (const auto& [layer, p] : layers)
            if (!(p >= 0.0 && p <= 1.0))
                throw ValidationError("generator: unchanged_prob out of [0,1] for '" + model_id +
                                      "' layer " + std::to_string(layer));
    }
    if (!(0.0 <= cfg.conf_below_lo && cfg.conf_below_lo <= cfg.conf_below_hi &&
          cfg.conf_below_hi < cfg.conf_above_lo && cfg.conf_above_lo <= cfg.conf_above_hi &&
          cfg.conf_above_hi <= 1.0))
        throw ValidationError("generator: confidence law must satisfy "
                              "0 <= below_lo <= below_hi < above_lo <= above_hi <= 1");

    const ModelSpec& ref = repo.at(cfg.reference_model);
    if (cfg.segments.empty()) throw ValidationError("generator: at least one segment required");
    int total = 0;
    for (const SegmentSpec& seg : cfg.segments) {
        if (seg.num_requests <= 0)
            throw ValidationError("segment '" + seg.name + "': num_requests must be positive");
        total += seg.num_requests;
        detail::check_distribution(seg.reference_exit_probs, ref.exit_layers.size(),
                                   "segment '" + seg.name + "' reference_exit_probs");
        for (const std::string& id : cfg.coupled_models) {
            auto it = seg.coupling.find(id);
            if (it == seg.coupling.end())
                throw ValidationError("segment '" + seg.name + "': missing coupling for model '" +
                                      id + "'");
            const ModelSpec& spec = repo.at(id);
            if (it->second.size() != ref.exit_layers.size())
                throw ValidationError("segment '" + seg.name + "': coupling for '" + id +
                                      "' needs one row per reference exit");
            for (std::size_t r = 0; r < it->second.size(); ++r)
                detail::check_distribution(it->second[r], spec.exit_layers.size(),
                                           "segment '" + seg.name + "' coupling row " +
                                               std::to_string(r) + " for '" + id + "'");
        }
        for (const auto& [id, rows] : seg.coupling)
            if (std::find(cfg.coupled_models.begin(), cfg.coupled_models.end(), id) ==
                cfg.coupled_models.end())
                throw ValidationError("segment '" + seg.name + "': coupling for '" + id +
                                      "' which is not in coupled_models");
    }
    if (total != cfg.num_requests)
        throw ValidationError("generator: segment request counts sum to " + std::to_string(total) +
                              " but num_requests is " + std::to_string(cfg.num_requests));
}

namespace detail {

inline const SegmentSpec& segment_for(const GeneratorConfig& cfg, int request_index) {
    int cum = 0;
    for (const SegmentSpec& seg : cfg.segments) {
        cum += seg.num_requests;
        if (request_index < cum) return seg;
    }
    throw DomainError("request index " + std::to_string(request_index) + " beyond configured " +
                      std::to_string(cfg.num_requests));
}

/// One model's view of one token whose destiny is to settle at exit
/// `dest_idx`: uncommitted heads before it, committed heads from it on.
inline ModelTokenRecord make_record(Rng& rng, const GeneratorConfig& cfg, const ModelSpec& spec,
                                    std::size_t dest_idx, int final_token) {
    const std::size_t n = spec.exit_layers.size();
    std::vector<double> confs(n);
    for (std::size_t i = 0; i < dest_idx; ++i)
        confs[i] = rng.uniform(cfg.conf_below_lo, cfg.conf_below_hi);
    std::sort(confs.begin(), confs.begin() + static_cast<std::ptrdiff_t>(dest_idx));
    for (std::size_t i = dest_idx; i < n; ++i)
        confs[i] = rng.uniform(cfg.conf_above_lo, cfg.conf_above_hi);
    std::sort(confs.begin() + static_cast<std::ptrdiff_t>(dest_idx), confs.end());

    ModelTokenRecord rec;
    rec.final_token_id = final_token;
    rec.observations.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ExitObservation& o = rec.observations[i];
        o.layer = spec.exit_layers[i];
        o.confidence = confs[i];
        o.logprob = std::max(std::log(confs[i]), std::log(1e-6));
        if (i >= dest_idx) {
            o.token_id = final_token;
        } else if (rng.next_double() < cfg.unchanged_for(spec.id, o.layer)) {
            o.token_id = final_token;
        } else {
            int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
            if (other == final_token) other = (other + 1) % cfg.vocab_size;
            o.token_id = other;
        }
    }
    return rec;
}

} // namespace detail

/// Generate one request from its own random substream, so any subset of
/// requests can be produced independently and in parallel.
inline TraceRequest generate_request(const GeneratorConfig& cfg, const ModelRepository& repo,
                                     int request_index) {
    const SegmentSpec& seg = detail::segment_for(cfg, request_index);
    const ModelSpec& ref = repo.at(cfg.reference_model);
    Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(request_index));

    TraceRequest req;
    req.request_id = request_index;
    req.arrival_time_s = 0.0;
    req.prompt_len = cfg.prompt_len_law.sample(rng);
    const int num_tokens = cfg.tokens_per_request_law.sample(rng);
    req.tokens.reserve(static_cast<std::size_t>(num_tokens));

    for (int t = 0; t < num_tokens; ++t) {
        const std::size_t ref_dest = detail::sample_cdf(rng.next_double(), seg.reference_exit_probs);
        const int final_token = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
        TokenRecord tok;
        tok.per_model[cfg.reference_model] = detail::make_record(rng, cfg, ref, ref_dest, final_token);
        for (const std::string& id : cfg.coupled_models) {
            const std::vector<std::vector<double>>& rows = seg.coupling.at(id);
            const std::size_t dest = detail::sample_cdf(rng.next_double(), rows[ref_dest]);
            tok.per_model[id] = detail::make_record(rng, cfg, repo.at(id), dest, final_token);
        }
        req.tokens.push_back(std::move(tok));
    }
    return req;
}

inline Trace generate_workload(const GeneratorConfig& cfg, const ModelRepository& repo) {
    validate_generator_config(cfg, repo);
    Trace trace;
    trace.requests.reserve(static_cast<std::size_t>(cfg.num_requests));
    for (int r = 0; r < cfg.num_requests; ++r)
        trace.requests.push_back(generate_request(cfg, repo, r));
    return trace;
}

/// Empirical distribution of earliest confident exits, for calibration
/// summaries.
inline std::map<int, double> empirical_exit_marginals(const Trace& trace, const std::string& model_id,
                                                      double th) {
    std::map<int, double> counts;
    double total = 0.0;
    for (const TraceRequest& req : trace.requests)
        for (const TokenRecord& tok : req.tokens) {
            auto it = tok.per_model.find(model_id);
            if (it == tok.per_model.end()) continue;
            counts[earliest_confident_obs(it->second, th).layer] += 1.0;
            total += 1.0;
        }
    if (total > 0.0)
        for (auto& [layer, c] : counts) c /= total;
    return counts;
}

} // namespace eeserve
