// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fly/core.hpp"
#include "fly/model.hpp"

namespace fly {

enum class TokenSource : std::uint8_t { ModelStep, Lookup };

/// K draft tokens plus provenance and forward-pass accounting. The token
/// sequence is what gets verified; drafter_forward_passes is what the cost
/// model charges for producing it.
struct DraftProposal {
    std::vector<TokenId> tokens;
    std::vector<TokenSource> source;  // parallel to tokens
    int drafter_forward_passes = 0;
};

struct LookupConfig {
    int max_ngram = 3;
    int min_ngram = 1;
    int span = 10;  // tokens proposed per retrieval hit
};

inline void validate(const LookupConfig& cfg) {
    if (cfg.min_ngram < 1 || cfg.max_ngram < cfg.min_ngram || cfg.span < 1) {
        throw std::invalid_argument("lookup config: requires 1 <= min_ngram <= max_ngram and span >= 1");
    }
}

/// Greedy drafting: K sequential argmax steps, one drafter pass per token.
inline DraftProposal draft_autoregressive(const LanguageModel& drafter, std::span<const TokenId> context, int k) {
    if (k < 1) throw std::invalid_argument("draft_autoregressive: K must be at least 1");
    DraftProposal out;
    out.tokens.reserve(static_cast<std::size_t>(k));
    std::vector<TokenId> prefix(context.begin(), context.end());
    prefix.reserve(context.size() + static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const TokenId t = greedy_token(drafter.next_logits(prefix));
        out.tokens.push_back(t);
        out.source.push_back(TokenSource::ModelStep);
        prefix.push_back(t);
    }
    out.drafter_forward_passes = k;
    return out;
}

/// n-gram retrieval over the live history. For n from max_ngram down to
/// min_ngram, the length-n suffix is searched in the history with that
/// suffix removed; the most recent occurrence wins and up to span tokens
/// following it are returned (fewer when the history ends). Absent when no
/// n-gram repeats.
inline std::optional<std::vector<TokenId>> prompt_lookup(std::span<const TokenId> history, const LookupConfig& cfg) {
    validate(cfg);
    if (history.empty()) throw std::invalid_argument("prompt_lookup: empty history");
    const std::size_t len = history.size();
    for (int n = cfg.max_ngram; n >= cfg.min_ngram; --n) {
        const auto un = static_cast<std::size_t>(n);
        if (len < 2 * un) continue;  // need the suffix plus one earlier occurrence
        const auto suffix = history.subspan(len - un, un);
        for (std::size_t p = len - 2 * un + 1; p-- > 0;) {
            bool match = true;
            for (std::size_t i = 0; i < un; ++i) {
                if (history[p + i] != suffix[i]) {
                    match = false;
                    break;
                }
            }
            if (!match) continue;
            const std::size_t start = p + un;
            const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cfg.span), len - start);
            return std::vector<TokenId>(history.begin() + static_cast<std::ptrdiff_t>(start),
                                        history.begin() + static_cast<std::ptrdiff_t>(start + take));
        }
    }
    return std::nullopt;
}

/// Drafting with the drafter itself accelerated: lookup spans are verified
/// against the drafter's own greedy choices with exact match (one drafter
/// pass per inner round), so the emitted tokens are identical to
/// draft_autoregressive while the pass count can only shrink.
inline DraftProposal draft_with_mla(const LanguageModel& drafter, std::span<const TokenId> context, int k,
                                    const LookupConfig& cfg) {
    if (k < 1) throw std::invalid_argument("draft_with_mla: K must be at least 1");
    validate(cfg);
    DraftProposal out;
    std::vector<TokenId> history(context.begin(), context.end());
    history.reserve(context.size() + static_cast<std::size_t>(k));
    const auto push = [&](TokenId t, TokenSource src) {
        out.tokens.push_back(t);
        out.source.push_back(src);
        history.push_back(t);
    };
    while (out.tokens.size() < static_cast<std::size_t>(k)) {
        const std::size_t remaining = static_cast<std::size_t>(k) - out.tokens.size();
        std::optional<std::vector<TokenId>> hit;
        if (!history.empty()) hit = prompt_lookup(history, cfg);
        if (!hit) {
            push(greedy_token(drafter.next_logits(history)), TokenSource::ModelStep);
            out.drafter_forward_passes += 1;
            continue;
        }
        if (hit->size() > remaining) hit->resize(remaining);  // truncate to the round budget
        const std::vector<Logits> verify = forward_verify(drafter, history, *hit);
        out.drafter_forward_passes += 1;
        std::size_t matched = 0;
        while (matched < hit->size() && (*hit)[matched] == greedy_token(verify[matched])) {
            push((*hit)[matched], TokenSource::Lookup);
            ++matched;
        }
        if (matched < hit->size()) {
            push(greedy_token(verify[matched]), TokenSource::ModelStep);  // correction
        } else if (out.tokens.size() < static_cast<std::size_t>(k)) {
            push(greedy_token(verify[hit->size()]), TokenSource::ModelStep);  // bonus
        }
    }
    return out;
}

}  // namespace fly
