#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "eeserve/generator.hpp"

using namespace eeserve;

static std::string fx(const char* name) {
    return std::string(FIXTURES_DIR "/") + name;
}

namespace {

struct Generated {
    ModelRepository repo;
    GeneratorConfig cfg;
    Trace trace;
};

const Generated& calibration() {
    static Generated g = [] {
        Generated out;
        out.repo = load_repository(fx("repo_opt.json"));
        out.cfg = load_generator_config(fx("gen_calibration.json"));
        out.trace = generate_workload(out.cfg, out.repo);
        return out;
    }();
    return g;
}

double exit_mass(const Trace& trace, const std::string& id, int depth, double threshold,
                 int first = 0, int last = -1) {
    if (last < 0) last = static_cast<int>(trace.requests.size());
    std::int64_t hit = 0, total = 0;
    for (int r = first; r < last; ++r)
        for (const TokenRecord& tok : trace.requests[r].tokens) {
            hit += earliest_confident_exit(tok, id, threshold) == depth;
            ++total;
        }
    return static_cast<double>(hit) / static_cast<double>(total);
}

} // namespace

TEST_CASE("generator config validation") {
    ModelRepository repo = load_repository(fx("repo_opt.json"));
    GeneratorConfig cfg = load_generator_config(fx("gen_calibration.json"));
    CHECK_NOTHROW(validate_generator_config(cfg, repo));

    SECTION("segment counts must cover num_requests exactly") {
        cfg.segments[0].num_requests += 1;
        CHECK_THROWS_AS(validate_generator_config(cfg, repo), ValidationError);
    }
    SECTION("reference probabilities must sum to one") {
        cfg.segments[0].reference_exit_probs = {0.5, 0.4, 0.2};
        CHECK_THROWS_AS(validate_generator_config(cfg, repo), ValidationError);
    }
    SECTION("coupling required for every coupled model") {
        cfg.segments[0].coupling.erase("opt-6.7b");
        CHECK_THROWS_AS(validate_generator_config(cfg, repo), ValidationError);
    }
    SECTION("coupling rows must match the coupled model's exits") {
        cfg.segments[0].coupling["opt-6.7b"][0] = {0.5, 0.5};
        CHECK_THROWS_AS(validate_generator_config(cfg, repo), ValidationError);
    }
    SECTION("confidence laws must leave a gap") {
        cfg.conf_below_hi = 0.9;
        CHECK_THROWS_AS(validate_generator_config(cfg, repo), ValidationError);
    }
    SECTION("unchanged_prob must name known models and stay in range") {
        cfg.unchanged_prob["opt-13b"][6] = 0.5;
        CHECK_THROWS_AS(validate_generator_config(cfg, repo), ValidationError);
        cfg.unchanged_prob.clear();
        cfg.default_unchanged_prob = 1.25;
        CHECK_THROWS_AS(validate_generator_config(cfg, repo), ValidationError);
    }
    SECTION("unknown reference model") {
        cfg.reference_model = "opt-13b";
        CHECK_THROWS_AS(validate_generator_config(cfg, repo), DomainError);
    }
    SECTION("size laws reject non-positive values") {
        CHECK_THROWS_AS(int_law_from_json(Json{{"fixed", 0}}, "t"), ValidationError);
        CHECK_THROWS_AS(int_law_from_json(Json{{"uniform_int", {9, 3}}, }, "t"), ValidationError);
        CHECK_THROWS_AS(int_law_from_json(Json{{"gaussian", 4}}, "t"), ValidationError);
        IntLaw law = int_law_from_json(Json{{"uniform_int", {3, 9}}}, "t");
        Rng rng(7);
        for (int i = 0; i < 200; ++i) {
            const int v = law.sample(rng);
            CHECK(v >= 3);
            CHECK(v <= 9);
        }
    }
    SECTION("config survives a serialization round trip") {
        const Json j = generator_config_to_json(cfg);
        CHECK(generator_config_to_json(generator_config_from_json(j)) == j);
    }
}

TEST_CASE("generation is deterministic and per-request addressable") {
    const Generated& g = calibration();
    REQUIRE(g.trace.requests.size() == 3000);

    Trace again = generate_workload(g.cfg, g.repo);
    for (int r : {0, 1, 750, 1800, 2999})
        CHECK(trace_request_to_json(again.requests[r]).dump() ==
              trace_request_to_json(g.trace.requests[r]).dump());

    TraceRequest solo = generate_request(g.cfg, g.repo, 1234);
    CHECK(trace_request_to_json(solo).dump() ==
          trace_request_to_json(g.trace.requests[1234]).dump());

    GeneratorConfig other = g.cfg;
    other.seed += 1;
    TraceRequest reseeded = generate_request(other, g.repo, 1234);
    CHECK(trace_request_to_json(reseeded).dump() != trace_request_to_json(solo).dump());
}

TEST_CASE("generated workloads validate and have well-formed records") {
    const Generated& g = calibration();
    CHECK_NOTHROW(validate_workload(g.trace, g.repo));

    for (int r : {3, 900, 1850, 2400}) {
        const TraceRequest& req = g.trace.requests[r];
        CHECK(req.arrival_time_s == 0.0);
        CHECK(req.prompt_len == 128);
        CHECK(req.num_tokens() == 100);
        for (const TokenRecord& tok : req.tokens) {
            REQUIRE(tok.per_model.size() == 2);
            const ModelTokenRecord& rec = tok.for_model("opt-1.3b");
            CHECK(rec.observations.back().token_id == rec.final_token_id);
            // confidences never decrease with depth
            for (std::size_t i = 1; i < rec.observations.size(); ++i)
                CHECK(rec.observations[i - 1].confidence <= rec.observations[i].confidence);
            const std::size_t di =
                exit_index(g.repo.at("opt-1.3b").exit_layers,
                           earliest_confident_obs(rec, 0.5).layer);
            for (std::size_t i = 0; i < rec.observations.size(); ++i) {
                const ExitObservation& o = rec.observations[i];
                CHECK(o.logprob == std::log(o.confidence));
                // the settled exit and everything deeper emit the final token
                if (i >= di) CHECK(o.token_id == rec.final_token_id);
                CHECK(o.token_id >= 0);
                CHECK(o.token_id < 50257);
            }
        }
    }
}

TEST_CASE("token mixtures match the configured marginals") {
    const Generated& g = calibration();

    CHECK(exit_mass(g.trace, "opt-1.3b", 6, 0.7) == Catch::Approx(0.73).margin(0.01));
    CHECK(exit_mass(g.trace, "opt-1.3b", 12, 0.7) == Catch::Approx(0.047).margin(0.01));
    CHECK(exit_mass(g.trace, "opt-1.3b", 24, 0.7) == Catch::Approx(0.223).margin(0.01));

    CHECK(exit_mass(g.trace, "opt-6.7b", 9, 0.7) == Catch::Approx(0.736).margin(0.01));
    CHECK(exit_mass(g.trace, "opt-6.7b", 17, 0.7) == Catch::Approx(0.048).margin(0.01));
    CHECK(exit_mass(g.trace, "opt-6.7b", 32, 0.7) == Catch::Approx(0.216).margin(0.01));

    SECTION("the marginal helper agrees") {
        const auto m = empirical_exit_marginals(g.trace, "opt-1.3b", 0.7);
        CHECK(m.at(6) == Catch::Approx(exit_mass(g.trace, "opt-1.3b", 6, 0.7)));
        CHECK(m.at(12) + m.at(24) == Catch::Approx(1.0 - m.at(6)));
    }
    SECTION("per-segment difficulty shifts the reference mixture") {
        CHECK(exit_mass(g.trace, "opt-1.3b", 6, 0.7, 0, 750) == Catch::Approx(0.84).margin(0.015));
        CHECK(exit_mass(g.trace, "opt-1.3b", 6, 0.7, 750, 1050) ==
              Catch::Approx(0.38).margin(0.025));
        CHECK(exit_mass(g.trace, "opt-1.3b", 6, 0.7, 1500, 1650) ==
              Catch::Approx(0.48).margin(0.035));
    }
}

TEST_CASE("the large model stays shallow where the small model struggles") {
    const Generated& g = calibration();

    std::int64_t deep13 = 0, deep13_and_shallow67 = 0;
    for (const TraceRequest& req : g.trace.requests)
        for (const TokenRecord& tok : req.tokens) {
            if (earliest_confident_exit(tok, "opt-1.3b", 0.7) > 6) {
                ++deep13;
                deep13_and_shallow67 += earliest_confident_exit(tok, "opt-6.7b", 0.7) == 9;
            }
        }
    const double frac = static_cast<double>(deep13_and_shallow67) / static_cast<double>(deep13);
    CHECK(frac == Catch::Approx(0.567).margin(0.02));
}

TEST_CASE("exits are stable across thresholds inside the law gap") {
    const Generated& g = calibration();

    for (int r : {10, 777, 1900, 2300}) {
        for (const TokenRecord& tok : g.trace.requests[r].tokens) {
            const int at7 = earliest_confident_exit(tok, "opt-1.3b", 0.7);
            CHECK(earliest_confident_exit(tok, "opt-1.3b", 0.5) == at7);
            CHECK(earliest_confident_exit(tok, "opt-1.3b", 0.6) == at7);
            CHECK(earliest_confident_exit(tok, "opt-1.3b", 0.8) == at7);
            // raising the threshold can only deepen the exit
            CHECK(earliest_confident_exit(tok, "opt-1.3b", 0.9) >= at7);
        }
    }
}

TEST_CASE("early heads agree with the final token at the configured rate") {
    const Generated& g = calibration();
    const ModelSpec& m13 = g.repo.at("opt-1.3b");

    std::int64_t agree = 0, total = 0;
    for (const TraceRequest& req : g.trace.requests)
        for (const TokenRecord& tok : req.tokens) {
            const ModelTokenRecord& rec = tok.for_model("opt-1.3b");
            const std::size_t di =
                exit_index(m13.exit_layers, earliest_confident_obs(rec, 0.5).layer);
            for (std::size_t i = 0; i < di; ++i) {
                agree += rec.observations[i].token_id == rec.final_token_id;
                ++total;
            }
        }
    CHECK(static_cast<double>(agree) / static_cast<double>(total) ==
          Catch::Approx(0.921).margin(0.01));
}

TEST_CASE("drift workload alternates difficulty blocks") {
    ModelRepository repo = load_repository(fx("repo_opt.json"));
    GeneratorConfig cfg = load_generator_config(fx("gen_drift.json"));
    CHECK_NOTHROW(validate_generator_config(cfg, repo));

    Trace trace = generate_workload(cfg, repo);
    REQUIRE(trace.requests.size() == 3000);
    CHECK(trace.requests[0].tokens[0].per_model.size() == 1);

    CHECK(exit_mass(trace, "opt-1.3b", 6, 0.7, 0, 375) == Catch::Approx(0.30).margin(0.02));
    CHECK(exit_mass(trace, "opt-1.3b", 6, 0.7, 375, 750) == Catch::Approx(0.92).margin(0.02));
    CHECK(exit_mass(trace, "opt-1.3b", 24, 0.7, 0, 375) == Catch::Approx(0.60).margin(0.02));
    CHECK(exit_mass(trace, "opt-1.3b", 24, 0.7, 2250, 2625) == Catch::Approx(0.60).margin(0.02));
}
