// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fly/core.hpp"
#include "fly/rng.hpp"
#include "fly/tokenizer.hpp"

namespace fly {

/// One autoregressive step: identical context always yields identical
/// logits of length |V|. Models are immutable after construction and safe
/// to share read-only across concurrent decode sessions.
class LanguageModel {
  public:
    virtual ~LanguageModel() = default;

    virtual const Vocabulary& vocab() const = 0;
    virtual Logits next_logits(std::span<const TokenId> context) const = 0;

  protected:
    void check_context(std::span<const TokenId> context) const {
        for (TokenId t : context) {
            if (!vocab().contains(t)) {
                throw std::invalid_argument("next_logits: token out of vocabulary range");
            }
        }
    }
};

/// Logits for the draft block in one verification pass: result[i] (0-based)
/// equals next_logits(context ++ draft[0..i)), for i in [0, K]. The last
/// entry is the bonus position.
inline std::vector<Logits> forward_verify(const LanguageModel& model, std::span<const TokenId> context,
                                          std::span<const TokenId> draft) {
    if (draft.empty()) {
        throw std::invalid_argument("forward_verify: empty draft");
    }
    std::vector<TokenId> prefix(context.begin(), context.end());
    prefix.reserve(context.size() + draft.size());
    std::vector<Logits> out;
    out.reserve(draft.size() + 1);
    for (TokenId t : draft) {
        out.push_back(model.next_logits(prefix));
        prefix.push_back(t);
    }
    out.push_back(model.next_logits(prefix));
    return out;
}

/// Deterministic test fixture. Indexes the script by absolute position
/// (context length), so fixtures stay valid regardless of which tokens the
/// search actually takes; positions past the script end use the fallback.
class ScriptedModel final : public LanguageModel {
  public:
    ScriptedModel(Vocabulary vocab, std::vector<Logits> script, Logits fallback)
        : vocab_(std::move(vocab)), script_(std::move(script)), fallback_(std::move(fallback)) {
        const auto v = static_cast<std::size_t>(vocab_.size);
        for (const auto& entry : script_) {
            if (entry.size() != v) {
                throw std::invalid_argument("scripted model: script entry length must equal vocabulary size");
            }
        }
        if (fallback_.size() != v) {
            throw std::invalid_argument("scripted model: fallback length must equal vocabulary size");
        }
    }

    const Vocabulary& vocab() const override { return vocab_; }

    Logits next_logits(std::span<const TokenId> context) const override {
        check_context(context);
        const std::size_t pos = context.size();
        return pos < script_.size() ? script_[pos] : fallback_;
    }

  private:
    Vocabulary vocab_;
    std::vector<Logits> script_;
    Logits fallback_;
};

/// Order-n add-alpha Markov model. Counts are real-valued so that
/// perturb_model can scale them; the predictive distribution from any
/// context is (count + alpha) / (total + alpha * |V|).
class MarkovModel final : public LanguageModel {
  public:
    using CountRow = std::map<TokenId, double>;
    using CountTable = std::map<std::vector<TokenId>, CountRow>;

    MarkovModel(Vocabulary vocab, int order, double smoothing, CountTable table)
        : vocab_(std::move(vocab)), order_(order), smoothing_(smoothing), table_(std::move(table)) {
        if (order_ < 1) throw std::invalid_argument("markov model: order must be at least 1");
        if (!(smoothing_ > 0.0)) throw std::invalid_argument("markov model: smoothing must be positive");
        for (const auto& [ctx, row] : table_) {
            if (ctx.size() != static_cast<std::size_t>(order_)) {
                throw std::invalid_argument("markov model: context window length must equal order");
            }
            double total = 0.0;
            for (const auto& [tok, cnt] : row) {
                if (!vocab_.contains(tok) || !(cnt >= 0.0)) {
                    throw std::invalid_argument("markov model: malformed count row");
                }
                total += cnt;
            }
            totals_[ctx] = total;
        }
    }

    const Vocabulary& vocab() const override { return vocab_; }
    int order() const { return order_; }
    double smoothing() const { return smoothing_; }
    const CountTable& table() const { return table_; }

    Distribution predictive(std::span<const TokenId> context) const {
        check_context(context);
        const auto v = static_cast<std::size_t>(vocab_.size);
        Distribution dist;
        dist.probs.assign(v, 0.0);
        const CountRow* row = nullptr;
        double total = 0.0;
        if (context.size() >= static_cast<std::size_t>(order_)) {
            std::vector<TokenId> window(context.end() - order_, context.end());
            if (auto it = table_.find(window); it != table_.end()) {
                row = &it->second;
                total = totals_.at(window);
            }
        }
        const double denom = total + smoothing_ * static_cast<double>(vocab_.size);
        for (std::size_t t = 0; t < v; ++t) dist.probs[t] = smoothing_ / denom;
        if (row) {
            for (const auto& [tok, cnt] : *row) {
                dist.probs[static_cast<std::size_t>(tok)] = (cnt + smoothing_) / denom;
            }
        }
        return dist;
    }

    Logits next_logits(std::span<const TokenId> context) const override {
        const Distribution dist = predictive(context);
        Logits logits(dist.probs.size());
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = std::log(dist.probs[i]);
        return logits;
    }

  private:
    Vocabulary vocab_;
    int order_;
    double smoothing_;
    CountTable table_;
    std::map<std::vector<TokenId>, double> totals_;
};

inline MarkovModel train_markov(std::span<const TokenId> corpus, int order, double smoothing,
                                const Vocabulary& vocab) {
    if (order < 1) throw std::invalid_argument("train_markov: order must be at least 1");
    if (!(smoothing > 0.0)) throw std::invalid_argument("train_markov: smoothing must be positive");
    if (corpus.size() <= static_cast<std::size_t>(order)) {
        throw std::domain_error("train_markov: corpus must be longer than the model order");
    }
    for (TokenId t : corpus) {
        if (!vocab.contains(t)) throw std::invalid_argument("train_markov: corpus token out of vocabulary range");
    }
    MarkovModel::CountTable table;
    for (std::size_t i = 0; i + order < corpus.size(); ++i) {
        std::vector<TokenId> window(corpus.begin() + static_cast<std::ptrdiff_t>(i),
                                    corpus.begin() + static_cast<std::ptrdiff_t>(i + order));
        table[std::move(window)][corpus[i + order]] += 1.0;
    }
    return MarkovModel(vocab, order, smoothing, std::move(table));
}

/// Returns a copy whose counts are scaled by seeded log-normal noise:
/// count *= exp(noise_scale * z). noise_scale = 0 returns the model
/// unchanged; results are deterministic per seed.
inline MarkovModel perturb_model(const MarkovModel& model, double noise_scale, std::uint64_t seed) {
    if (!(noise_scale >= 0.0)) {
        throw std::invalid_argument("perturb_model: noise scale must be non-negative");
    }
    MarkovModel::CountTable table = model.table();
    if (noise_scale > 0.0) {
        detail::SplitMix64 rng(seed);
        for (auto& [ctx, row] : table) {
            for (auto& [tok, cnt] : row) {
                cnt *= std::exp(noise_scale * rng.gaussian());
            }
        }
    }
    return MarkovModel(model.vocab(), model.order(), model.smoothing(), std::move(table));
}

// ---------------------------------------------------------------------------
// Persistence: versioned JSON holding the tokenizer (which carries the
// vocabulary), order, smoothing, and the count table. Doubles round-trip
// bit-exactly and key order is fixed, so identical inputs produce
// byte-identical files.

inline constexpr int kModelFormatVersion = 1;

struct StoredModel {
    Tokenizer tokenizer;
    MarkovModel model;
};

inline nlohmann::json model_to_json(const MarkovModel& model, const Tokenizer& tokenizer) {
    nlohmann::json j;
    j["format"] = "fly-markov";
    j["version"] = kModelFormatVersion;
    j["tokenizer"] = tokenizer.to_json();
    j["vocab_size"] = model.vocab().size;
    j["order"] = model.order();
    j["smoothing"] = model.smoothing();
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [ctx, row] : model.table()) {
        nlohmann::json entry;
        entry["context"] = ctx;
        nlohmann::json counts = nlohmann::json::array();
        for (const auto& [tok, cnt] : row) {
            counts.push_back(nlohmann::json::array({tok, cnt}));
        }
        entry["counts"] = std::move(counts);
        table.push_back(std::move(entry));
    }
    j["table"] = std::move(table);
    return j;
}

inline StoredModel model_from_json(const nlohmann::json& j) {
    if (j.at("format").get<std::string>() != "fly-markov") {
        throw std::invalid_argument("model file: unrecognized format tag");
    }
    if (j.at("version").get<int>() != kModelFormatVersion) {
        throw std::invalid_argument("model file: unsupported version");
    }
    Tokenizer tokenizer = Tokenizer::from_json(j.at("tokenizer"));
    if (j.at("vocab_size").get<std::int32_t>() != tokenizer.vocab().size) {
        throw std::invalid_argument("model file: vocab_size does not match tokenizer");
    }
    const int order = j.at("order").get<int>();
    const double smoothing = j.at("smoothing").get<double>();
    MarkovModel::CountTable table;
    for (const auto& entry : j.at("table")) {
        auto ctx = entry.at("context").get<std::vector<TokenId>>();
        MarkovModel::CountRow row;
        for (const auto& pair : entry.at("counts")) {
            row[pair.at(0).get<TokenId>()] = pair.at(1).get<double>();
        }
        table[std::move(ctx)] = std::move(row);
    }
    MarkovModel model(tokenizer.vocab(), order, smoothing, std::move(table));
    return StoredModel{std::move(tokenizer), std::move(model)};
}

inline void save_model(const std::filesystem::path& path, const MarkovModel& model, const Tokenizer& tokenizer) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_model: cannot open " + path.string());
    out << model_to_json(model, tokenizer).dump(2) << '\n';
    if (!out) throw std::runtime_error("save_model: write failed for " + path.string());
}

inline StoredModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_model: cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    return model_from_json(j);
}

}  // namespace fly
