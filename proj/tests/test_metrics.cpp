// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "fly/metrics.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fly;
using fly::testing::TestRng;

namespace {

RoundRecord round_with_s(int round, int s, bool truncated = false) {
    RoundRecord r;
    r.round = round;
    r.outcome.accepted_count = s;
    r.outcome.termination = Termination::AllAccept;
    r.kept = s;
    r.truncated_by_budget = truncated;
    r.target_forward_passes = 1;
    return r;
}

}  // namespace

TEST_CASE("mean accepted tokens averages complete rounds", "[metrics]") {
    std::vector<RoundRecord> rounds{round_with_s(1, 5), round_with_s(2, 7), round_with_s(3, 9)};
    REQUIRE(mean_accepted(rounds) == Catch::Approx(7.0));

    std::vector<RoundRecord> all_accept;
    for (int t = 1; t <= 10; ++t) all_accept.push_back(round_with_s(t, 16));
    REQUIRE(mean_accepted(all_accept) == Catch::Approx(16.0));

    std::vector<RoundRecord> single{round_with_s(1, 3)};
    REQUIRE(mean_accepted(single) == Catch::Approx(3.0));
}

TEST_CASE("truncated final rounds are excluded from tau", "[metrics]") {
    std::vector<RoundRecord> rounds{round_with_s(1, 5), round_with_s(2, 7), round_with_s(3, 16, true)};
    REQUIRE(mean_accepted(rounds) == Catch::Approx(6.0));
    std::vector<RoundRecord> only_truncated{round_with_s(1, 16, true)};
    REQUIRE_THROWS_AS(mean_accepted(only_truncated), std::domain_error);
}

TEST_CASE("constant-s runs have tau equal to s", "[metrics]") {
    TestRng rng(81);
    for (int trial = 0; trial < 50; ++trial) {
        const int s = rng.uniform_int(1, 16);
        std::vector<RoundRecord> rounds;
        for (int t = 1; t <= rng.uniform_int(1, 30); ++t) rounds.push_back(round_with_s(t, s));
        REQUIRE(mean_accepted(rounds) == Catch::Approx(static_cast<double>(s)));
    }
}

TEST_CASE("builtin cost profiles carry the published constants", "[metrics]") {
    const CostModel c70 = cost_profile_llama70b();
    REQUIRE(c70.draft_round_ms == 245.51);
    REQUIRE(c70.draft_round_mla_ms == 197.45);
    REQUIRE(c70.target_verify_ms == 58.62);
    REQUIRE(c70.gate_window_ms == 0.45);
    const double per_round = c70.draft_round_mla_ms + c70.target_verify_ms + c70.gate_window_ms;
    REQUIRE(std::abs(per_round - 256.52) < 1e-9);

    const CostModel c405 = cost_profile_llama405b();
    REQUIRE(c405.draft_round_ms == 428.30);
    REQUIRE(c405.draft_round_mla_ms == 363.01);
    REQUIRE(c405.target_verify_ms == 200.97);
    REQUIRE(c405.gate_window_ms == 0.57);
}

TEST_CASE("the speedup estimator reproduces the hand-computed case", "[metrics]") {
    const CostModel cost = cost_profile_llama70b();
    // tau = 12, so N = 12 T
    const double speedup = estimate_speedup(120, 10, DecodeMode::Fly, /*mla=*/true, cost);
    REQUIRE(std::abs(speedup - 2.742) < 1e-3);
}

TEST_CASE("the estimator is homogeneous of degree zero in the costs", "[metrics]") {
    TestRng rng(82);
    for (int trial = 0; trial < 50; ++trial) {
        CostModel cost;
        cost.draft_round_ms = rng.uniform(1.0, 500.0);
        cost.draft_round_mla_ms = rng.uniform(1.0, cost.draft_round_ms);
        cost.target_verify_ms = rng.uniform(1.0, 300.0);
        cost.gate_window_ms = rng.uniform(0.0, 2.0);
        cost.baseline_step_ms = rng.uniform(1.0, 300.0);
        const double c = std::exp(rng.uniform(-3.0, 3.0));
        CostModel scaled = cost;
        scaled.draft_round_ms *= c;
        scaled.draft_round_mla_ms *= c;
        scaled.target_verify_ms *= c;
        scaled.gate_window_ms *= c;
        scaled.baseline_step_ms *= c;
        const auto mode = trial % 2 == 0 ? DecodeMode::Fly : DecodeMode::StandardSPD;
        const double a = estimate_speedup(200, 17, mode, trial % 3 == 0, cost);
        const double b = estimate_speedup(200, 17, mode, trial % 3 == 0, scaled);
        REQUIRE(a == Catch::Approx(b).margin(1e-12 * a));
    }
}

TEST_CASE("the estimator grows with tau and degenerates to one", "[metrics]") {
    const CostModel cost = cost_profile_llama70b();
    double prev = 0.0;
    for (int tau = 1; tau <= 16; ++tau) {
        const double s = estimate_speedup(static_cast<std::int64_t>(tau) * 10, 10, DecodeMode::Fly, true, cost);
        REQUIRE(s > prev);
        prev = s;
    }
    CostModel unit;
    unit.baseline_step_ms = unit.target_verify_ms = 58.62;
    REQUIRE(estimate_speedup(10, 10, DecodeMode::StandardSPD, false, unit) == 1.0);
    REQUIRE(estimate_speedup(10, 10, DecodeMode::TargetOnly, false, unit) == 1.0);
    REQUIRE_THROWS_AS(estimate_speedup(0, 10, DecodeMode::Fly, false, cost), std::invalid_argument);
    CostModel zero;
    REQUIRE_THROWS_AS(estimate_speedup(10, 10, DecodeMode::StandardSPD, false, zero), std::domain_error);
}

TEST_CASE("per-step draft costing uses the measured pass count", "[metrics]") {
    CostModel cost = cost_profile_llama70b();
    cost.per_step_draft = true;
    cost.draft_step_ms = 16.4;  // ~245.51 / 15
    const double s = estimate_speedup(120, 10, DecodeMode::Fly, false, cost, /*mean_draft_steps=*/15.0);
    const double per_round = 15.0 * 16.4 + cost.target_verify_ms + cost.gate_window_ms;
    REQUIRE(s == Catch::Approx(120.0 * cost.baseline_step_ms / (10.0 * per_round)));
    REQUIRE_THROWS_AS(estimate_speedup(120, 10, DecodeMode::Fly, false, cost), std::invalid_argument);
}

TEST_CASE("divergence reports prefix, edit distance, and exact matches", "[metrics]") {
    const std::vector<TokenId> a{1, 2, 3};
    REQUIRE(divergence(a, a).exact_match);
    REQUIRE(divergence(a, a).normalized_edit_distance == 0.0);

    const std::vector<TokenId> b{1, 2, 4};
    const auto d = divergence(a, b);
    REQUIRE_FALSE(d.exact_match);
    REQUIRE(d.common_prefix_len == 2);
    REQUIRE(d.normalized_edit_distance == Catch::Approx(1.0 / 3.0));

    const auto e = divergence(std::vector<TokenId>{}, std::vector<TokenId>{5, 6, 7, 8});
    REQUIRE(e.normalized_edit_distance == 1.0);
    REQUIRE(e.common_prefix_len == 0);
    REQUIRE(divergence(std::vector<TokenId>{}, std::vector<TokenId>{}).exact_match);
}

TEST_CASE("levenshtein agrees with the reference recursion", "[metrics]") {
    TestRng rng(83);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<TokenId> a, b;
        for (int i = rng.uniform_int(0, 8); i-- > 0;) a.push_back(static_cast<TokenId>(rng.uniform_int(0, 3)));
        for (int i = rng.uniform_int(0, 8); i-- > 0;) b.push_back(static_cast<TokenId>(rng.uniform_int(0, 3)));
        const double expected =
            a.empty() && b.empty()
                ? 0.0
                : static_cast<double>(fly::testing::levenshtein_reference(a, b)) / std::max(a.size(), b.size());
        REQUIRE(divergence(a, b).normalized_edit_distance == Catch::Approx(expected));
        REQUIRE(divergence(a, b).normalized_edit_distance == Catch::Approx(divergence(b, a).normalized_edit_distance));
    }
}

TEST_CASE("summaries wire tau, histograms, and divergence together", "[metrics]") {
    const auto pair = fly::testing::make_markov_pair(84);
    const auto prompt = fly::testing::make_prompts(pair.corpus, 1, 8, 85)[0];
    EngineConfig cfg;
    cfg.mode = DecodeMode::TargetOnly;
    cfg.K = 6;
    cfg.max_new_tokens = 30;
    const SessionResult baseline = decode_target_only(pair.target, prompt, cfg);
    const CostModel cost = cost_profile_llama70b();

    const RunSummary base_summary = summarize(baseline, cost);
    REQUIRE(base_summary.tau == 1.0);
    REQUIRE(base_summary.estimated_speedup == 1.0);
    REQUIRE_FALSE(base_summary.divergence.has_value());

    EngineConfig loose = cfg;
    loose.mode = DecodeMode::Fly;
    loose.theta = 1.0;
    const SessionResult session = decode(pair.target, pair.drafter, prompt, loose);
    const RunSummary summary = summarize(session, cost, &baseline);
    REQUIRE(summary.divergence.has_value());
    REQUIRE(summary.divergence->exact_match);  // theta = 1 is lossless
    REQUIRE(summary.tau >= 1.0);
    REQUIRE(summary.tau <= static_cast<double>(loose.K + 1));
    REQUIRE(summary.total_tokens == static_cast<std::int64_t>(session.generated.size()));
}

TEST_CASE("cost models round-trip through json and load by name", "[metrics]") {
    CostModel cost = cost_profile_llama405b();
    cost.per_step_draft = true;
    cost.draft_step_ms = 17.1;
    const CostModel back = cost_model_from_json(cost_model_to_json(cost));
    REQUIRE(back.name == cost.name);
    REQUIRE(back.draft_round_ms == cost.draft_round_ms);
    REQUIRE(back.draft_step_ms == cost.draft_step_ms);
    REQUIRE(back.per_step_draft);

    REQUIRE(load_cost_model("llama70b").name == "llama70b");
    REQUIRE(load_cost_model("llama405b").name == "llama405b");
    REQUIRE_THROWS_AS(load_cost_model("no-such-profile"), std::runtime_error);

    nlohmann::json bad = cost_model_to_json(cost);
    bad["target_verify_ms"] = -1.0;
    REQUIRE_THROWS_AS(cost_model_from_json(bad), std::invalid_argument);
}

TEST_CASE("csv traces are stable and carry the reject fields", "[metrics]") {
    const auto pair = fly::testing::make_markov_pair(86);
    const auto prompt = fly::testing::make_prompts(pair.corpus, 1, 8, 87)[0];
    EngineConfig cfg;
    cfg.mode = DecodeMode::Fly;
    cfg.K = 6;
    cfg.W = 3;
    cfg.max_new_tokens = 30;
    const SessionResult session = decode(pair.target, pair.drafter, prompt, cfg);

    std::ostringstream a, b;
    write_round_trace_csv(a, session);
    write_round_trace_csv(b, session);
    REQUIRE(a.str() == b.str());
    REQUIRE(a.str().rfind("round,s,termination,reject_position,", 0) == 0);

    std::ostringstream row;
    write_run_summary_row(row, 0, cfg, summarize(session, cost_profile_llama70b()));
    REQUIRE(row.str().rfind("0,fly,6,3,0.3,0,", 0) == 0);
}

TEST_CASE("summaries aggregate reject causes and the deferred-accept rate", "[metrics]") {
    SessionResult session;
    session.config.mode = DecodeMode::Fly;
    session.config.K = 6;
    auto make_round = [](int idx, int s, std::vector<MismatchRecord> records) {
        RoundRecord r;
        r.round = idx;
        r.outcome.accepted_count = s;
        r.kept = s;
        r.target_forward_passes = 1;
        r.outcome.records = std::move(records);
        return r;
    };
    MismatchRecord accepted;
    accepted.decision = DeferVerdict::Accept;
    MismatchRecord strict;
    strict.decision = DeferVerdict::Reject;
    strict.reject_cause = RejectCause::GateStrict;
    MismatchRecord window;
    window.decision = DeferVerdict::Reject;
    window.reject_cause = RejectCause::WindowDivergence;
    MismatchRecord boundary;
    boundary.decision = DeferVerdict::Reject;
    boundary.reject_cause = RejectCause::Boundary;
    session.rounds.push_back(make_round(1, 3, {accepted, strict}));
    session.rounds.push_back(make_round(2, 2, {window}));
    session.rounds.push_back(make_round(3, 4, {accepted, accepted, boundary}));
    session.generated.assign(9, 0);

    const RunSummary summary = summarize(session, cost_profile_llama70b());
    REQUIRE(summary.reject_cause_histogram.at(RejectCause::GateStrict) == 1);
    REQUIRE(summary.reject_cause_histogram.at(RejectCause::WindowDivergence) == 1);
    REQUIRE(summary.reject_cause_histogram.at(RejectCause::Boundary) == 1);
    REQUIRE(summary.deferred_accept_rate == Catch::Approx(0.5));  // 3 accepts of 6 examined
    REQUIRE(summary.tau == Catch::Approx(3.0));
    REQUIRE(summary.excluded_rounds == 0);

    // a budget-cut final round is excluded from tau but reported
    auto cut = make_round(4, 7, {});
    cut.kept = 2;
    cut.truncated_by_budget = true;
    session.rounds.push_back(cut);
    session.generated.assign(11, 0);
    const RunSummary with_cut = summarize(session, cost_profile_llama70b());
    REQUIRE(with_cut.tau == Catch::Approx(3.0));
    REQUIRE(with_cut.excluded_rounds == 1);
    REQUIRE(with_cut.complete_rounds == 3);
}
