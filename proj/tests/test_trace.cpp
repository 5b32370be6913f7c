#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "eeserve/trace.hpp"

using namespace eeserve;

static std::string fx(const char* name) {
    return std::string(FIXTURES_DIR "/") + name;
}

// Single-model token on opt-1.3b's exit ladder {6, 12, 24}.
static TokenRecord make_token(std::vector<double> confs, std::vector<int> toks, int final_id) {
    const int layers[3] = {6, 12, 24};
    ModelTokenRecord rec;
    rec.final_token_id = final_id;
    for (int i = 0; i < 3; ++i)
        rec.observations.push_back(
            {layers[i], toks[i], confs[i], std::log(std::max(confs[i], 1e-6))});
    TokenRecord t;
    t.per_model["opt-1.3b"] = std::move(rec);
    return t;
}

static TraceRequest make_request(std::int64_t id, double arrival = 0.0) {
    TraceRequest req;
    req.request_id = id;
    req.arrival_time_s = arrival;
    req.prompt_len = 8;
    req.tokens.push_back(make_token({0.2, 0.6, 0.97}, {11, 12, 13}, 13));
    req.tokens.push_back(make_token({0.8, 0.9, 0.99}, {21, 21, 21}, 21));
    return req;
}

TEST_CASE("earliest confident exit scans heads shallow to deep") {
    const TokenRecord tok = make_token({0.2, 0.6, 0.97}, {1, 2, 3}, 3);
    CHECK(earliest_confident_exit(tok, "opt-1.3b", 0.5) == 12);
    CHECK(earliest_confident_exit(tok, "opt-1.3b", 0.7) == 24);
    CHECK(earliest_confident_exit(tok, "opt-1.3b", 0.1) == 6);
    // nothing clears the bar: the final head is a forced exit
    CHECK(earliest_confident_exit(tok, "opt-1.3b", 0.99) == 24);
    CHECK(earliest_confident_obs(tok.for_model("opt-1.3b"), 0.5).token_id == 2);
    CHECK_THROWS_AS(tok.for_model("opt-13b"), DomainError);

    CHECK(exit_index({6, 12, 24}, 12) == 1);
    CHECK_THROWS_AS(exit_index({6, 12, 24}, 7), DomainError);
}

TEST_CASE("observation for a serving depth falls back to the deepest head below") {
    ModelTokenRecord rec;
    rec.final_token_id = 9;
    rec.observations = {{6, 4, 0.3, -1.2}, {12, 7, 0.8, -0.22}, {24, 9, 0.99, -0.01}};
    CHECK(observation_for_depth(rec, 12).token_id == 7);
    CHECK(observation_for_depth(rec, 17).layer == 12);  // between heads: deepest below
    CHECK(observation_for_depth(rec, 30).layer == 24);
    CHECK_THROWS_AS(observation_for_depth(rec, 3), DomainError);
    CHECK(rec.at_layer(24).token_id == 9);
    CHECK_THROWS_AS(rec.at_layer(7), DomainError);
}

TEST_CASE("workload round-trips through jsonl byte-identically") {
    Trace trace;
    trace.requests.push_back(make_request(0, 0.0));
    trace.requests.push_back(make_request(1, 0.125));
    trace.requests[1].tokens[0].per_model["opt-1.3b"].observations[0].confidence =
        0.123456789012345;

    const auto tmp = std::filesystem::temp_directory_path();
    const std::string p1 = (tmp / "eeserve_trace_rt1.jsonl").string();
    const std::string p2 = (tmp / "eeserve_trace_rt2.jsonl").string();
    write_workload(trace, p1);
    Trace loaded = read_workload(p1);
    REQUIRE(loaded.requests.size() == 2);
    CHECK(loaded.requests[1].arrival_time_s == 0.125);
    CHECK(loaded.requests[1].tokens[0].for_model("opt-1.3b").observations[0].confidence ==
          0.123456789012345);
    CHECK(loaded.requests[0].num_tokens() == 2);
    write_workload(loaded, p2);

    std::ifstream a(p1), b(p2);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("workload validation against a repository") {
    ModelRepository repo = load_repository(fx("repo_opt.json"));
    Trace trace;
    trace.requests.push_back(make_request(0));
    CHECK_NOTHROW(validate_workload(trace, repo));

    SECTION("empty workload is fine") {
        Trace empty;
        CHECK_NOTHROW(validate_workload(empty, repo));
    }
    SECTION("duplicate ids rejected") {
        trace.requests.push_back(make_request(0));
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("non-positive prompt rejected") {
        trace.requests[0].prompt_len = 0;
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("empty token list rejected") {
        trace.requests[0].tokens.clear();
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("arrival times must be non-negative and non-decreasing") {
        trace.requests[0].arrival_time_s = -1.0;
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
        trace.requests[0].arrival_time_s = 2.0;
        trace.requests.push_back(make_request(1, 1.0));
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("unknown model rejected") {
        auto& pm = trace.requests[0].tokens[0].per_model;
        pm["opt-13b"] = pm["opt-1.3b"];
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("observation layers must mirror the exit ladder") {
        trace.requests[0].tokens[0].per_model["opt-1.3b"].observations.pop_back();
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
        trace.requests[0] = make_request(0);
        trace.requests[0].tokens[0].per_model["opt-1.3b"].observations[1].layer = 13;
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("confidence range enforced") {
        trace.requests[0].tokens[0].per_model["opt-1.3b"].observations[0].confidence = 1.5;
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("positive logprob rejected") {
        trace.requests[0].tokens[0].per_model["opt-1.3b"].observations[0].logprob = 0.25;
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("final head must emit the final token") {
        trace.requests[0].tokens[0].per_model["opt-1.3b"].observations[2].token_id = 999;
        CHECK_THROWS_AS(validate_workload(trace, repo), ValidationError);
    }
    SECTION("confidence dips only warn") {
        auto& obs = trace.requests[0].tokens[0].per_model["opt-1.3b"].observations;
        obs[0].confidence = 0.9;  // deeper heads are less sure; still accepted
        CHECK_NOTHROW(validate_workload(trace, repo));
    }
}

TEST_CASE("malformed jsonl lines are reported with their line number") {
    const auto tmp = std::filesystem::temp_directory_path();
    const std::string p = (tmp / "eeserve_trace_bad.jsonl").string();
    {
        std::ofstream out(p);
        out << trace_request_to_json(make_request(0)).dump() << '\n';
        out << '\n';  // blank lines are skipped, not counted as errors
        out << "{not json}\n";
    }
    try {
        read_workload(p);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    {
        std::ofstream out(p);
        out << "{\"request_id\": 5}\n";  // parses but misses required fields
    }
    try {
        read_workload(p);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
    std::remove(p.c_str());
}
