// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fly/core.hpp"
#include "fly/model.hpp"
#include "fly/tokenizer.hpp"

#include "oracles.hpp"

namespace fly::testing {

/// Logits whose softmax has its peak at peak_token and normalized entropy
/// equal to target_entropy (bisected against the reference oracle). The
/// shape is (q, (1-q)/(V-1), ...): entropy decreases monotonically in q, and
/// the argmax stays at peak_token for every q > 1/V.
inline Logits make_peaked_logits(int vocab_size, TokenId peak_token, double target_entropy) {
    const double v = static_cast<double>(vocab_size);
    const auto probs_for = [&](double q) {
        std::vector<double> probs(static_cast<std::size_t>(vocab_size), (1.0 - q) / (v - 1.0));
        probs[static_cast<std::size_t>(peak_token)] = q;
        return probs;
    };
    double lo = 1.0 / v + 1e-12;  // entropy ~1 here
    double hi = 1.0 - 1e-15;      // entropy ~0 here
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (entropy_reference(probs_for(mid), vocab_size) > target_entropy) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const auto probs = probs_for(0.5 * (lo + hi));
    Logits logits(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) logits[i] = std::log(probs[i]);
    return logits;
}

/// One synthetic verification round with a prescribed match pattern and
/// per-mismatch entropy levels. Matched positions get a near-one-hot
/// distribution at the draft token; mismatched positions peak at a
/// different token with the requested entropy.
struct SyntheticRound {
    std::vector<TokenId> draft;
    std::vector<Logits> target_logits;  // K+1 entries
};

inline SyntheticRound make_round_from_pattern(int vocab_size, const std::vector<int>& delta,
                                              const std::vector<double>& mismatch_entropy) {
    SyntheticRound round;
    const int k = static_cast<int>(delta.size());
    std::size_t mismatch_idx = 0;
    for (int i = 0; i < k; ++i) {
        const TokenId draft_token = static_cast<TokenId>(i % vocab_size);
        if (delta[static_cast<std::size_t>(i)] == 1) {
            round.draft.push_back(draft_token);
            round.target_logits.push_back(make_peaked_logits(vocab_size, draft_token, 0.02));
        } else {
            const TokenId target_token = static_cast<TokenId>((i + 1) % vocab_size);  // always != draft_token
            round.draft.push_back(draft_token);
            round.target_logits.push_back(
                make_peaked_logits(vocab_size, target_token, mismatch_entropy.at(mismatch_idx++)));
        }
    }
    round.target_logits.push_back(make_peaked_logits(vocab_size, 0, 0.02));  // bonus position
    return round;
}

/// Fully random round: draft tokens agree with the target's argmax with
/// probability match_prob; target distributions vary from peaked to flat.
inline SyntheticRound make_random_round(TestRng& rng, int vocab_size, int k, double match_prob) {
    SyntheticRound round;
    for (int i = 0; i <= k; ++i) {
        const TokenId target_token = static_cast<TokenId>(rng.uniform_int(0, vocab_size - 1));
        const double entropy = rng.uniform01() < 0.5 ? rng.uniform(0.01, 0.25) : rng.uniform(0.3, 0.97);
        round.target_logits.push_back(make_peaked_logits(vocab_size, target_token, entropy));
        if (i == k) break;
        if (rng.uniform01() < match_prob) {
            round.draft.push_back(target_token);
        } else {
            TokenId other = static_cast<TokenId>(rng.uniform_int(0, vocab_size - 1));
            if (other == target_token) other = (other + 1) % vocab_size;
            round.draft.push_back(other);
        }
    }
    return round;
}

/// Deterministic English-ish fixture text: templated sentences with slot
/// words chosen by a seeded generator. Heavy phrase reuse makes prompt
/// lookup productive while slot variation keeps drafter/target mismatches
/// coming.
inline std::string fixture_corpus_text(int sentences, std::uint64_t seed) {
    static const std::vector<std::string> nouns = {"engine", "draft",  "window", "token",  "round",
                                                   "model",  "budget", "signal", "stream", "report"};
    static const std::vector<std::string> verbs = {"checks", "moves", "keeps", "drops", "reads", "holds"};
    static const std::vector<std::string> tails = {"quickly", "again", "slowly", "twice", "cleanly"};
    TestRng rng(seed);
    std::string out;
    for (int s = 0; s < sentences; ++s) {
        const auto& n1 = nouns[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(nouns.size()) - 1))];
        const auto& v1 = verbs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(verbs.size()) - 1))];
        const auto& n2 = nouns[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(nouns.size()) - 1))];
        const auto& t1 = tails[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(tails.size()) - 1))];
        out += "the " + n1 + " " + v1 + " the " + n2 + " " + t1 + " and the " + n1 + " " + v1 + " " + t1 + " . ";
    }
    return out;
}

/// Minimal non-positional model: repeats the last context token (token 0
/// for an empty context) with a one-hot preference.
class LastTokenModel final : public LanguageModel {
  public:
    explicit LastTokenModel(Vocabulary vocab) : vocab_(std::move(vocab)) {}

    const Vocabulary& vocab() const override { return vocab_; }

    Logits next_logits(std::span<const TokenId> context) const override {
        for (TokenId t : context) {
            if (!vocab_.contains(t)) throw std::invalid_argument("LastTokenModel: token out of range");
        }
        Logits logits(static_cast<std::size_t>(vocab_.size), 0.0);
        const TokenId last = context.empty() ? 0 : context.back();
        logits[static_cast<std::size_t>(last)] = 5.0;
        return logits;
    }

  private:
    Vocabulary vocab_;
};

/// Corpus-trained target with a noise-perturbed drafter over a shared
/// whitespace vocabulary: the standard desk-scale drafter/target pair.
struct MarkovPair {
    Tokenizer tokenizer;
    std::vector<TokenId> corpus;
    MarkovModel target;
    MarkovModel drafter;
};

inline MarkovPair make_markov_pair(std::uint64_t seed, int order = 2, double noise = 0.8, int sentences = 120,
                                   double smoothing = 0.05) {
    const std::string text = fixture_corpus_text(sentences, seed);
    Tokenizer tok = Tokenizer::whitespace_from_corpus(text, /*with_eos=*/true);
    std::vector<TokenId> corpus = tok.tokenize(text);
    MarkovModel target = train_markov(corpus, order, smoothing, tok.vocab());
    MarkovModel drafter = perturb_model(target, noise, seed + 1);
    return MarkovPair{std::move(tok), std::move(corpus), std::move(target), std::move(drafter)};
}

/// Prompts sliced from the fixture corpus at deterministic offsets.
inline std::vector<std::vector<TokenId>> make_prompts(const std::vector<TokenId>& corpus, int count, int length,
                                                      std::uint64_t seed) {
    TestRng rng(seed);
    std::vector<std::vector<TokenId>> prompts;
    prompts.reserve(static_cast<std::size_t>(count));
    const int max_start = static_cast<int>(corpus.size()) - length - 1;
    for (int i = 0; i < count; ++i) {
        const int start = rng.uniform_int(0, max_start);
        prompts.emplace_back(corpus.begin() + start, corpus.begin() + start + length);
    }
    return prompts;
}

}  // namespace fly::testing
