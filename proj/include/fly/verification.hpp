// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fly/core.hpp"

namespace fly {

/// Per-position match indicators for one round: delta(i) is true iff draft
/// token i equals the target's greedy token at position i. Positions are
/// 1-based throughout this module, matching the round arithmetic
/// (j + W <= K and friends).
struct MatchVector {
    std::vector<std::uint8_t> bits;

    int size() const { return static_cast<int>(bits.size()); }
    bool matched(int position) const { return bits[static_cast<std::size_t>(position - 1)] != 0; }
};

enum class GateDecision : std::uint8_t { Strict, Defer };
enum class DeferVerdict : std::uint8_t { Accept, Reject };
enum class RejectCause : std::uint8_t { GateStrict, WindowDivergence, Boundary };
enum class Termination : std::uint8_t { AllAccept, StrictReject, DeferReject, BoundaryReject };

/// Verdict trace for one mismatch position. window_mismatches is present
/// only when the gate deferred and the window fit (j + W <= K); a Boundary
/// rejection never counts the window.
struct MismatchRecord {
    int position = 0;  // j, 1-based
    double entropy = 0.0;
    GateDecision gate = GateDecision::Strict;
    std::optional<int> window_mismatches;
    DeferVerdict decision = DeferVerdict::Reject;
    std::optional<RejectCause> reject_cause;
};

/// One round's verification verdict. accepted_count s is in [1, K+1]:
/// on rejection at position j, s = j and emitted is the accepted draft
/// prefix plus the target's greedy token at j; when every mismatch is
/// accepted, s = K+1 and emitted ends with the bonus token.
struct RoundOutcome {
    int accepted_count = 0;
    std::vector<TokenId> emitted;
    Termination termination = Termination::AllAccept;
    std::vector<int> deferred_accepts;  // positions accepted via deferral, ascending
    std::vector<MismatchRecord> records;
};

inline MatchVector match_indicators(std::span<const TokenId> draft, std::span<const Logits> target_logits) {
    if (draft.empty()) throw std::invalid_argument("match_indicators: empty draft");
    if (target_logits.size() < draft.size()) {
        throw std::invalid_argument("match_indicators: target logits must cover every draft position");
    }
    MatchVector delta;
    delta.bits.resize(draft.size());
    for (std::size_t i = 0; i < draft.size(); ++i) {
        delta.bits[i] = draft[i] == greedy_token(target_logits[i]) ? 1 : 0;
    }
    return delta;
}

/// Standard rule: first mismatch position, or K+1 when every position
/// matches (the bonus-token case).
inline int accept_count_standard(const MatchVector& delta) {
    for (int i = 1; i <= delta.size(); ++i) {
        if (!delta.matched(i)) return i;
    }
    return delta.size() + 1;
}

/// Entropy gate: Strict (reject the mismatch outright) when the target is
/// confident, Defer (open a window) when several tokens are plausible.
/// theta = 1 is Strict for every h, so the whole scheme degenerates to the
/// standard rule; without this special case h = 1.0 would still defer.
inline GateDecision gate(double h, double theta) {
    if (!(h >= 0.0 && h <= 1.0)) throw std::invalid_argument("gate: entropy must be in [0,1]");
    if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("gate: threshold must be in [0,1]");
    if (theta == 1.0) return GateDecision::Strict;
    return h < theta ? GateDecision::Strict : GateDecision::Defer;
}

/// Number of mismatches in the look-ahead window (j, j+W]. The caller must
/// route windows that do not fit (j + W > K) to a Boundary rejection first.
inline int window_mismatches(const MatchVector& delta, int j, int window) {
    const int k = delta.size();
    if (j < 1 || j > k) throw std::invalid_argument("window_mismatches: position out of range");
    if (window < 0) throw std::invalid_argument("window_mismatches: window must be non-negative");
    if (j + window > k) throw std::invalid_argument("window_mismatches: window exceeds the round");
    int n = 0;
    for (int i = j + 1; i <= j + window; ++i) {
        if (!delta.matched(i)) ++n;
    }
    return n;
}

struct DeferResult {
    DeferVerdict verdict = DeferVerdict::Reject;
    std::optional<RejectCause> cause;          // present iff Reject
    std::optional<int> window_mismatches;      // present iff the window was counted
};

/// Full decision for the mismatch at j: Accept iff the gate defers, the
/// window fits inside the round, and no further mismatch appears in it.
/// Reject causes, in evaluation order: GateStrict, Boundary (the mismatch
/// falls within the last W positions), WindowDivergence (the target keeps
/// disagreeing, i.e. it is course-correcting).
inline DeferResult defer_decide(double h, double theta, const MatchVector& delta, int j, int window) {
    const int k = delta.size();
    if (j < 1 || j > k) throw std::invalid_argument("defer_decide: position out of range");
    if (delta.matched(j)) throw std::logic_error("defer_decide: position is not a mismatch");
    if (window < 0) throw std::invalid_argument("defer_decide: window must be non-negative");
    if (gate(h, theta) == GateDecision::Strict) {
        return {DeferVerdict::Reject, RejectCause::GateStrict, std::nullopt};
    }
    if (j + window > k) {
        return {DeferVerdict::Reject, RejectCause::Boundary, std::nullopt};
    }
    const int n = window_mismatches(delta, j, window);
    if (n > 0) {
        return {DeferVerdict::Reject, RejectCause::WindowDivergence, n};
    }
    return {DeferVerdict::Accept, std::nullopt, n};
}

namespace detail {

inline void check_round_inputs(std::span<const TokenId> draft, std::span<const Logits> target_logits) {
    if (draft.empty()) throw std::invalid_argument("verify: empty draft");
    if (target_logits.size() != draft.size() + 1) {
        throw std::invalid_argument("verify: need exactly K+1 target logits");
    }
}

/// Accepted prefix draft[1..j-1] plus the target's greedy token at j.
inline std::vector<TokenId> emit_rejected(std::span<const TokenId> draft, std::span<const Logits> target_logits,
                                          int j) {
    std::vector<TokenId> out(draft.begin(), draft.begin() + (j - 1));
    out.push_back(greedy_token(target_logits[static_cast<std::size_t>(j - 1)]));
    return out;
}

/// All K draft tokens plus the bonus token from position K+1.
inline std::vector<TokenId> emit_all(std::span<const TokenId> draft, std::span<const Logits> target_logits) {
    std::vector<TokenId> out(draft.begin(), draft.end());
    out.push_back(greedy_token(target_logits[draft.size()]));
    return out;
}

}  // namespace detail

/// The loose verification rule. Walks the mismatch set in ascending order;
/// at each mismatch computes the normalized entropy of the target's
/// distribution there (only there — matched positions never pay for it),
/// applies the gate, and for deferred mismatches checks the look-ahead
/// window. The first rejection ends the round with s = j; a round whose
/// mismatches are all accepted keeps all K tokens plus the bonus. Consumes
/// only the provided logits; the target model is never invoked here.
inline RoundOutcome verify_fly(std::span<const TokenId> draft, std::span<const Logits> target_logits, double theta,
                               int window) {
    detail::check_round_inputs(draft, target_logits);
    if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("verify_fly: theta must be in [0,1]");
    if (window < 0) throw std::invalid_argument("verify_fly: window must be non-negative");

    const MatchVector delta = match_indicators(draft, target_logits);
    const int k = delta.size();
    RoundOutcome out;
    for (int j = 1; j <= k; ++j) {
        if (delta.matched(j)) continue;
        const Distribution dist = softmax(target_logits[static_cast<std::size_t>(j - 1)]);
        const double h = normalized_entropy(dist, static_cast<std::int32_t>(dist.size()));
        const DeferResult decision = defer_decide(h, theta, delta, j, window);
        MismatchRecord record;
        record.position = j;
        record.entropy = h;
        record.gate = gate(h, theta);
        record.window_mismatches = decision.window_mismatches;
        record.decision = decision.verdict;
        record.reject_cause = decision.cause;
        out.records.push_back(record);
        if (decision.verdict == DeferVerdict::Accept) {
            out.deferred_accepts.push_back(j);
            continue;
        }
        out.accepted_count = j;
        out.emitted = detail::emit_rejected(draft, target_logits, j);
        switch (*decision.cause) {
            case RejectCause::GateStrict: out.termination = Termination::StrictReject; break;
            case RejectCause::WindowDivergence: out.termination = Termination::DeferReject; break;
            case RejectCause::Boundary: out.termination = Termination::BoundaryReject; break;
        }
        return out;
    }
    out.accepted_count = k + 1;
    out.emitted = detail::emit_all(draft, target_logits);
    out.termination = Termination::AllAccept;
    return out;
}

/// Standard exact-match verification (the rule the loose scheme relaxes).
inline RoundOutcome verify_standard(std::span<const TokenId> draft, std::span<const Logits> target_logits) {
    detail::check_round_inputs(draft, target_logits);
    const MatchVector delta = match_indicators(draft, target_logits);
    RoundOutcome out;
    const int s = accept_count_standard(delta);
    out.accepted_count = s;
    if (s <= delta.size()) {
        out.emitted = detail::emit_rejected(draft, target_logits, s);
        out.termination = Termination::StrictReject;
    } else {
        out.emitted = detail::emit_all(draft, target_logits);
        out.termination = Termination::AllAccept;
    }
    return out;
}

}  // namespace fly
