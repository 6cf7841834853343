// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fly/core.hpp"
#include "fly/drafting.hpp"
#include "fly/model.hpp"
#include "fly/rng.hpp"
#include "fly/verification.hpp"

namespace fly {

enum class DecodeMode : std::uint8_t { Fly, StandardSPD, TargetOnly };

/// temperature = 0 means greedy emission. With temperature > 0 the
/// correction/bonus token of each round is drawn from
/// softmax(logits / temperature) using a per-session generator, while the
/// match indicators (and therefore the accepted count) stay argmax-based.
struct SamplingConfig {
    double temperature = 0.0;
    std::uint64_t seed = 0;
};

struct EngineConfig {
    int K = 15;
    int W = 6;
    double theta = 0.3;
    DecodeMode mode = DecodeMode::Fly;
    bool mla = false;
    LookupConfig lookup;
    int max_new_tokens = 256;
    std::optional<TokenId> eos;
    SamplingConfig sampling;
};

inline void validate(const EngineConfig& cfg) {
    if (cfg.K < 1) throw std::invalid_argument("engine config: K must be at least 1");
    if (cfg.W < 0) throw std::invalid_argument("engine config: W must be non-negative");
    if (!(cfg.theta >= 0.0 && cfg.theta <= 1.0)) throw std::invalid_argument("engine config: theta must be in [0,1]");
    if (cfg.max_new_tokens < 1) throw std::invalid_argument("engine config: max_new_tokens must be at least 1");
    if (cfg.sampling.temperature < 0.0) throw std::invalid_argument("engine config: temperature must be >= 0");
    validate(cfg.lookup);
}

/// Bookkeeping for one SPD round. kept counts the emitted tokens actually
/// appended to the output; it is shorter than outcome.emitted only when EOS
/// stopped the session or the token budget cut the final round.
struct RoundRecord {
    int round = 0;  // 1-based round index t
    RoundOutcome outcome;
    int drafter_forward_passes = 0;
    int target_forward_passes = 0;
    int kept = 0;
    bool truncated_by_budget = false;
};

enum class StopReason : std::uint8_t { Eos, MaxTokens };

struct SessionResult {
    EngineConfig config;
    std::vector<TokenId> prompt;
    std::vector<TokenId> generated;
    std::vector<RoundRecord> rounds;
    StopReason stop_reason = StopReason::MaxTokens;
};

namespace detail {

inline TokenId sample_token(const Logits& logits, double temperature, SplitMix64& rng) {
    Logits scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
    const Distribution dist = softmax(scaled);
    const double u = rng.uniform01();
    double cdf = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        cdf += dist.probs[i];
        if (u < cdf) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(dist.probs.size() - 1);
}

struct EmissionState {
    std::vector<TokenId> generated;
    std::vector<RoundRecord> rounds;
    bool eos_hit = false;
};

/// Applies the budget cut and the EOS stop to one round's emission and
/// appends what survives. Tokens after the first kept EOS are discarded
/// even when the verdict accepted them.
inline void commit_round(EmissionState& state, std::vector<TokenId>& ctx, const EngineConfig& cfg, int round,
                         RoundOutcome outcome, int drafter_passes) {
    const auto budget = static_cast<std::size_t>(cfg.max_new_tokens) - state.generated.size();
    std::size_t kept = std::min(outcome.emitted.size(), budget);
    bool truncated = kept < outcome.emitted.size();
    if (cfg.eos) {
        for (std::size_t i = 0; i < kept; ++i) {
            if (outcome.emitted[i] == *cfg.eos) {
                kept = i + 1;
                truncated = false;
                state.eos_hit = true;
                break;
            }
        }
    }
    for (std::size_t i = 0; i < kept; ++i) {
        state.generated.push_back(outcome.emitted[i]);
        ctx.push_back(outcome.emitted[i]);
    }
    RoundRecord record;
    record.round = round;
    record.outcome = std::move(outcome);
    record.drafter_forward_passes = drafter_passes;
    record.target_forward_passes = 1;
    record.kept = static_cast<int>(kept);
    record.truncated_by_budget = truncated;
    state.rounds.push_back(std::move(record));
}

}  // namespace detail

/// Autoregressive baseline: one target step per token, same stopping rules
/// as decode. Each round record carries s = 1.
inline SessionResult decode_target_only(const LanguageModel& target, std::span<const TokenId> prompt,
                                        const EngineConfig& cfg) {
    validate(cfg);
    if (prompt.empty()) throw std::invalid_argument("decode: empty prompt");
    if (cfg.eos && !target.vocab().contains(*cfg.eos)) {
        throw std::invalid_argument("decode: eos token out of vocabulary range");
    }
    detail::SplitMix64 rng(cfg.sampling.seed);
    std::vector<TokenId> ctx(prompt.begin(), prompt.end());
    detail::EmissionState state;
    int round = 1;
    while (state.generated.size() < static_cast<std::size_t>(cfg.max_new_tokens) && !state.eos_hit) {
        const Logits logits = target.next_logits(ctx);
        const TokenId token = cfg.sampling.temperature > 0.0
                                  ? detail::sample_token(logits, cfg.sampling.temperature, rng)
                                  : greedy_token(logits);
        RoundOutcome outcome;
        outcome.accepted_count = 1;
        outcome.emitted = {token};
        outcome.termination = Termination::AllAccept;
        detail::commit_round(state, ctx, cfg, round, std::move(outcome), 0);
        ++round;
    }
    SessionResult result;
    result.config = cfg;
    result.prompt.assign(prompt.begin(), prompt.end());
    result.generated = std::move(state.generated);
    result.rounds = std::move(state.rounds);
    result.stop_reason = state.eos_hit ? StopReason::Eos : StopReason::MaxTokens;
    return result;
}

/// The full loop: draft K tokens (plain or lookup-accelerated), verify them
/// against the target with a single forward pass, apply the configured
/// verdict, and append the emitted tokens, until EOS or the token budget.
inline SessionResult decode(const LanguageModel& target, const LanguageModel& drafter,
                            std::span<const TokenId> prompt, const EngineConfig& cfg) {
    validate(cfg);
    if (cfg.mode == DecodeMode::TargetOnly) return decode_target_only(target, prompt, cfg);
    if (prompt.empty()) throw std::invalid_argument("decode: empty prompt");
    if (target.vocab().size != drafter.vocab().size) {
        throw std::invalid_argument("decode: drafter and target must share a vocabulary");
    }
    if (cfg.eos && !target.vocab().contains(*cfg.eos)) {
        throw std::invalid_argument("decode: eos token out of vocabulary range");
    }
    detail::SplitMix64 rng(cfg.sampling.seed);
    std::vector<TokenId> ctx(prompt.begin(), prompt.end());
    detail::EmissionState state;
    int round = 1;
    while (state.generated.size() < static_cast<std::size_t>(cfg.max_new_tokens) && !state.eos_hit) {
        DraftProposal proposal = cfg.mla ? draft_with_mla(drafter, ctx, cfg.K, cfg.lookup)
                                         : draft_autoregressive(drafter, ctx, cfg.K);
        const std::vector<Logits> target_logits = forward_verify(target, ctx, proposal.tokens);
        RoundOutcome outcome = cfg.mode == DecodeMode::Fly
                                   ? verify_fly(proposal.tokens, target_logits, cfg.theta, cfg.W)
                                   : verify_standard(proposal.tokens, target_logits);
        if (cfg.sampling.temperature > 0.0) {
            // the round's final token is the target's own (correction or
            // bonus); in sampling mode it is drawn instead of argmaxed
            const auto& logits = target_logits[static_cast<std::size_t>(outcome.accepted_count - 1)];
            outcome.emitted.back() = detail::sample_token(logits, cfg.sampling.temperature, rng);
        }
        detail::commit_round(state, ctx, cfg, round, std::move(outcome), proposal.drafter_forward_passes);
        ++round;
    }
    SessionResult result;
    result.config = cfg;
    result.prompt.assign(prompt.begin(), prompt.end());
    result.generated = std::move(state.generated);
    result.rounds = std::move(state.rounds);
    result.stop_reason = state.eos_hit ? StopReason::Eos : StopReason::MaxTokens;
    return result;
}

// ---------------------------------------------------------------------------
// Enum names shared by transcripts, CSV traces, and the CLI.

inline std::string to_string(DecodeMode mode) {
    switch (mode) {
        case DecodeMode::Fly: return "fly";
        case DecodeMode::StandardSPD: return "standard_spd";
        case DecodeMode::TargetOnly: return "target_only";
    }
    return "?";
}

inline DecodeMode decode_mode_from_string(const std::string& s) {
    if (s == "fly") return DecodeMode::Fly;
    if (s == "standard_spd" || s == "standard") return DecodeMode::StandardSPD;
    if (s == "target_only" || s == "target-only") return DecodeMode::TargetOnly;
    throw std::invalid_argument("unknown decode mode '" + s + "' (expected fly, standard_spd, or target_only)");
}

inline std::string to_string(Termination t) {
    switch (t) {
        case Termination::AllAccept: return "all_accept";
        case Termination::StrictReject: return "strict_reject";
        case Termination::DeferReject: return "defer_reject";
        case Termination::BoundaryReject: return "boundary_reject";
    }
    return "?";
}

inline std::string to_string(RejectCause c) {
    switch (c) {
        case RejectCause::GateStrict: return "gate_strict";
        case RejectCause::WindowDivergence: return "window_divergence";
        case RejectCause::Boundary: return "boundary";
    }
    return "?";
}

inline std::string to_string(StopReason r) {
    return r == StopReason::Eos ? "eos" : "max_tokens";
}

/// Structured transcript of one session, consumed by the metrics module
/// and the compare command.
inline nlohmann::json transcript_json(const SessionResult& session) {
    nlohmann::json j;
    j["version"] = 1;
    j["config"] = {
        {"mode", to_string(session.config.mode)},
        {"K", session.config.K},
        {"W", session.config.W},
        {"theta", session.config.theta},
        {"mla", session.config.mla},
        {"max_new_tokens", session.config.max_new_tokens},
        {"temperature", session.config.sampling.temperature},
        {"seed", session.config.sampling.seed},
    };
    if (session.config.eos) j["config"]["eos"] = *session.config.eos;
    j["prompt"] = session.prompt;
    j["generated"] = session.generated;
    j["stop_reason"] = to_string(session.stop_reason);
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& r : session.rounds) {
        nlohmann::json jr;
        jr["round"] = r.round;
        jr["s"] = r.outcome.accepted_count;
        jr["termination"] = to_string(r.outcome.termination);
        jr["emitted"] = r.outcome.emitted;
        jr["kept"] = r.kept;
        jr["truncated_by_budget"] = r.truncated_by_budget;
        jr["drafter_forward_passes"] = r.drafter_forward_passes;
        jr["target_forward_passes"] = r.target_forward_passes;
        jr["deferred_accepts"] = r.outcome.deferred_accepts;
        nlohmann::json mismatches = nlohmann::json::array();
        for (const auto& m : r.outcome.records) {
            nlohmann::json jm;
            jm["position"] = m.position;
            jm["entropy"] = m.entropy;
            jm["gate"] = m.gate == GateDecision::Strict ? "strict" : "defer";
            if (m.window_mismatches) jm["window_mismatches"] = *m.window_mismatches;
            jm["decision"] = m.decision == DeferVerdict::Accept ? "accept" : "reject";
            if (m.reject_cause) jm["reject_cause"] = to_string(*m.reject_cause);
            mismatches.push_back(std::move(jm));
        }
        jr["mismatches"] = std::move(mismatches);
        rounds.push_back(std::move(jr));
    }
    j["rounds"] = std::move(rounds);
    return j;
}

}  // namespace fly
