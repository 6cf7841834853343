// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 FLy Authors

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fly/core.hpp"

namespace fly {

enum class TokenizerKind { ByteLevel, Whitespace };

namespace detail {

/// Decodes one UTF-8 code point at s[i], advancing i. Rejects overlong
/// forms, surrogates, and out-of-range scalars.
inline bool decode_utf8(std::string_view s, std::size_t& i, std::uint32_t& cp) {
    const auto b = [&](std::size_t k) { return static_cast<unsigned char>(s[i + k]); };
    const unsigned char b0 = b(0);
    if (b0 < 0x80) {
        cp = b0;
        i += 1;
        return true;
    }
    const auto cont = [&](std::size_t k) { return i + k < s.size() && (b(k) & 0xC0) == 0x80; };
    if ((b0 & 0xE0) == 0xC0) {
        if (!cont(1)) return false;
        cp = (static_cast<std::uint32_t>(b0 & 0x1F) << 6) | (b(1) & 0x3F);
        if (cp < 0x80) return false;
        i += 2;
        return true;
    }
    if ((b0 & 0xF0) == 0xE0) {
        if (!cont(1) || !cont(2)) return false;
        cp = (static_cast<std::uint32_t>(b0 & 0x0F) << 12) | (static_cast<std::uint32_t>(b(1) & 0x3F) << 6) |
             (b(2) & 0x3F);
        if (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += 3;
        return true;
    }
    if ((b0 & 0xF8) == 0xF0) {
        if (!cont(1) || !cont(2) || !cont(3)) return false;
        cp = (static_cast<std::uint32_t>(b0 & 0x07) << 18) | (static_cast<std::uint32_t>(b(1) & 0x3F) << 12) |
             (static_cast<std::uint32_t>(b(2) & 0x3F) << 6) | (b(3) & 0x3F);
        if (cp < 0x10000 || cp > 0x10FFFF) return false;
        i += 4;
        return true;
    }
    return false;
}

inline bool is_valid_utf8(std::string_view s) {
    std::size_t i = 0;
    std::uint32_t cp = 0;
    while (i < s.size()) {
        if (!decode_utf8(s, i, cp)) return false;
    }
    return true;
}

inline bool is_unicode_whitespace(std::uint32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
        case 0x20: case 0x85: case 0xA0: case 0x1680:
        case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

/// Splits valid UTF-8 text into whitespace-free words.
inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        std::uint32_t cp = 0;
        decode_utf8(text, i, cp);  // caller validated
        if (is_unicode_whitespace(cp)) {
            if (!current.empty()) {
                words.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.append(text.substr(start, i - start));
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

}  // namespace detail

/// Maps text to TokenId sequences. ByteLevel is bijective (one token per
/// byte); Whitespace uses a corpus-derived word vocabulary with an
/// unknown-word slot at id 0.
class Tokenizer {
  public:
    static Tokenizer byte_level(bool with_eos = true) {
        Tokenizer t;
        t.kind_ = TokenizerKind::ByteLevel;
        t.with_eos_ = with_eos;
        const std::int32_t size = 256 + (with_eos ? 1 : 0);
        t.vocab_ = make_vocabulary(size, with_eos ? std::optional<TokenId>(256) : std::nullopt);
        return t;
    }

    static Tokenizer whitespace_from_corpus(std::string_view corpus, bool with_eos = true) {
        if (!detail::is_valid_utf8(corpus)) {
            throw std::invalid_argument("tokenizer: corpus is not valid UTF-8");
        }
        std::set<std::string> distinct;
        for (auto& w : detail::split_words(corpus)) distinct.insert(std::move(w));
        Tokenizer t;
        t.kind_ = TokenizerKind::Whitespace;
        t.with_eos_ = with_eos;
        t.words_.assign(distinct.begin(), distinct.end());
        t.rebuild_whitespace_tables();
        return t;
    }

    TokenizerKind kind() const { return kind_; }
    const Vocabulary& vocab() const { return vocab_; }

    std::vector<TokenId> tokenize(std::string_view text) const {
        if (!detail::is_valid_utf8(text)) {
            throw std::invalid_argument("tokenize: input is not valid UTF-8");
        }
        std::vector<TokenId> out;
        if (kind_ == TokenizerKind::ByteLevel) {
            out.reserve(text.size());
            for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
        } else {
            for (const auto& w : detail::split_words(text)) {
                auto it = word_to_id_.find(w);
                out.push_back(it == word_to_id_.end() ? kUnknownId : it->second);
            }
        }
        return out;
    }

    std::string detokenize(std::span<const TokenId> tokens) const {
        std::string out;
        if (kind_ == TokenizerKind::ByteLevel) {
            for (TokenId t : tokens) {
                check_token(t);
                if (vocab_.eos && t == *vocab_.eos) continue;
                out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
            }
        } else {
            bool first = true;
            for (TokenId t : tokens) {
                check_token(t);
                if (vocab_.eos && t == *vocab_.eos) continue;
                if (!first) out.push_back(' ');
                out += vocab_.rendering[static_cast<std::size_t>(t)];
                first = false;
            }
        }
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["kind"] = kind_ == TokenizerKind::ByteLevel ? "byte_level" : "whitespace";
        j["with_eos"] = with_eos_;
        if (kind_ == TokenizerKind::Whitespace) j["words"] = words_;
        return j;
    }

    static Tokenizer from_json(const nlohmann::json& j) {
        const std::string kind = j.at("kind").get<std::string>();
        const bool with_eos = j.at("with_eos").get<bool>();
        if (kind == "byte_level") return byte_level(with_eos);
        if (kind != "whitespace") {
            throw std::invalid_argument("tokenizer: unknown kind '" + kind + "'");
        }
        Tokenizer t;
        t.kind_ = TokenizerKind::Whitespace;
        t.with_eos_ = with_eos;
        t.words_ = j.at("words").get<std::vector<std::string>>();
        t.rebuild_whitespace_tables();
        return t;
    }

    static constexpr TokenId kUnknownId = 0;

  private:
    Tokenizer() = default;

    void rebuild_whitespace_tables() {
        std::vector<std::string> rendering;
        rendering.reserve(words_.size() + 2);
        rendering.emplace_back("<unk>");
        for (std::size_t i = 0; i < words_.size(); ++i) {
            word_to_id_[words_[i]] = static_cast<TokenId>(i + 1);
            rendering.push_back(words_[i]);
        }
        std::optional<TokenId> eos;
        if (with_eos_) {
            eos = static_cast<TokenId>(rendering.size());
            rendering.emplace_back("<eos>");
        }
        const auto size = static_cast<std::int32_t>(rendering.size());
        vocab_ = make_vocabulary(size, eos, std::move(rendering));
    }

    void check_token(TokenId t) const {
        if (!vocab_.contains(t)) {
            throw std::invalid_argument("detokenize: token out of vocabulary range");
        }
    }

    TokenizerKind kind_ = TokenizerKind::ByteLevel;
    bool with_eos_ = true;
    Vocabulary vocab_;
    std::vector<std::string> words_;        // whitespace mode, sorted
    std::map<std::string, TokenId> word_to_id_;
};

}  // namespace fly
