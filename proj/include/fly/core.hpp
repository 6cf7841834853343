// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fly {

/// Index into a Vocabulary. Valid ids are non-negative and < vocab size.
using TokenId = std::int32_t;

/// Raw (unnormalized) scores over the vocabulary, one entry per token.
using Logits = std::vector<double>;

struct Vocabulary {
    std::int32_t size = 0;
    std::optional<TokenId> eos;
    std::vector<std::string> rendering;  // empty, or one display string per token

    bool contains(TokenId t) const { return t >= 0 && t < size; }
};

/// Validates |V| >= 2 and eos (when present) in range.
inline Vocabulary make_vocabulary(std::int32_t size, std::optional<TokenId> eos = std::nullopt,
                                  std::vector<std::string> rendering = {}) {
    if (size < 2) {
        throw std::invalid_argument("vocabulary size must be at least 2");
    }
    if (eos && (*eos < 0 || *eos >= size)) {
        throw std::invalid_argument("eos token out of range");
    }
    if (!rendering.empty() && static_cast<std::int32_t>(rendering.size()) != size) {
        throw std::invalid_argument("rendering table size must match vocabulary size");
    }
    return Vocabulary{size, eos, std::move(rendering)};
}

/// Normalized probability vector over the vocabulary. Entries are in [0,1]
/// and sum to 1 within 1e-9; always dense over |V|.
struct Distribution {
    std::vector<double> probs;

    std::size_t size() const { return probs.size(); }
};

inline constexpr double kDistributionSumTolerance = 1e-9;

inline bool is_valid_distribution(const Distribution& dist) {
    if (dist.probs.empty()) return false;
    double sum = 0.0;
    for (double p : dist.probs) {
        if (!(p >= 0.0 && p <= 1.0)) return false;  // also rejects NaN
        sum += p;
    }
    return std::abs(sum - 1.0) <= kDistributionSumTolerance;
}

/// Softmax with max-subtraction. Throws on empty or non-finite input.
inline Distribution softmax(const Logits& logits) {
    if (logits.empty()) {
        throw std::invalid_argument("softmax: empty logits");
    }
    double m = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("softmax: non-finite logit entry");
        }
        m = std::max(m, v);
    }
    Distribution out;
    out.probs.resize(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double e = std::exp(logits[i] - m);
        out.probs[i] = e;
        z += e;
    }
    for (double& p : out.probs) p /= z;
    return out;
}

/// Index of the maximum probability; ties broken by lowest index.
inline TokenId argmax_token(const Distribution& dist) {
    if (!is_valid_distribution(dist)) {
        throw std::invalid_argument("argmax_token: malformed distribution");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.probs.size(); ++i) {
        if (dist.probs[i] > dist.probs[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

/// Greedy token straight from logits. Equal to argmax_token(softmax(l))
/// for every well-formed l, including the lowest-index tie rule.
inline TokenId greedy_token(const Logits& logits) {
    if (logits.empty()) {
        throw std::invalid_argument("greedy_token: empty logits");
    }
    std::size_t best = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!std::isfinite(logits[i])) {
            throw std::invalid_argument("greedy_token: non-finite logit entry");
        }
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

// Probabilities below this are treated as zero in the entropy sum so that
// log() cannot underflow to -inf.
inline constexpr double kEntropyProbFloor = 1e-300;

/// Shannon entropy of dist divided by log |V|, in [0,1]. Natural log; the
/// normalization cancels the base. Uses the 0*log(0) = 0 convention and
/// clamps the result against floating rounding.
inline double normalized_entropy(const Distribution& dist, std::int32_t vocab_size) {
    if (vocab_size < 2) {
        throw std::domain_error("normalized_entropy: vocabulary size must be at least 2");
    }
    if (static_cast<std::size_t>(vocab_size) != dist.probs.size()) {
        throw std::invalid_argument("normalized_entropy: distribution length does not match vocabulary size");
    }
    if (!is_valid_distribution(dist)) {
        throw std::invalid_argument("normalized_entropy: malformed distribution");
    }
    double h = 0.0;
    for (double p : dist.probs) {
        if (p > kEntropyProbFloor) h -= p * std::log(p);
    }
    h /= std::log(static_cast<double>(vocab_size));
    return std::clamp(h, 0.0, 1.0);
}

}  // namespace fly
