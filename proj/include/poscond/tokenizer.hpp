// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <climits>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "poscond/error.hpp"
#include "poscond/unicode.hpp"

namespace poscond {

/// Maps text pieces to token ids. A piece is one window word, prefixed by a
/// single space unless it is the first word of the window.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<int> encode(std::string_view piece) const = 0;
    virtual std::string decode(std::span<const int> ids) const = 0;
    virtual int vocab_size() const = 0;
    /// Padding or end-of-text token, used for baselines and the optional BOS.
    virtual std::optional<int> pad_token_id() const = 0;
    virtual std::string id() const = 0;
};

/// One token per UTF-8 byte, plus an end-of-text token at id 256.
class ByteTokenizer final : public Tokenizer {
public:
    static constexpr int kEndOfText = 256;

    std::vector<int> encode(std::string_view piece) const override {
        std::vector<int> ids;
        ids.reserve(piece.size());
        for (unsigned char c : piece) ids.push_back(c);
        return ids;
    }

    std::string decode(std::span<const int> ids) const override {
        std::string out;
        for (int id : ids) {
            if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
        }
        return out;
    }

    int vocab_size() const override { return 257; }
    std::optional<int> pad_token_id() const override { return kEndOfText; }
    std::string id() const override { return "byte-257"; }
};

namespace detail {

/// GPT-2's reversible byte -> printable code point table.
inline std::array<char32_t, 256> byte_encoder_table() {
    std::array<char32_t, 256> table{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) table[b] = direct[b] ? static_cast<char32_t>(b) : next++;
    return table;
}

/// Splits text the way GPT-2's pre-tokenization pattern does:
/// 's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
inline std::vector<std::u32string> gpt2_pretokenize(const std::u32string& s) {
    using unicode::is_letter;
    using unicode::is_number;
    using unicode::is_space;
    std::vector<std::u32string> out;
    const std::size_t n = s.size();
    std::size_t i = 0;
    auto run = [&](std::size_t from, auto pred) {
        std::size_t j = from;
        while (j < n && pred(s[j])) ++j;
        return j;
    };
    auto other = [&](char32_t c) { return !is_space(c) && !is_letter(c) && !is_number(c); };
    while (i < n) {
        if (s[i] == U'\'' && i + 1 < n) {
            static const std::u32string suffixes[] = {U"re", U"ve", U"ll", U"s", U"t", U"m", U"d"};
            bool matched = false;
            for (const auto& suf : suffixes) {
                if (s.compare(i + 1, suf.size(), suf) == 0) {
                    out.push_back(s.substr(i, 1 + suf.size()));
                    i += 1 + suf.size();
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        const std::size_t start = i;
        const std::size_t k = (s[i] == U' ' && i + 1 < n) ? i + 1 : i;
        if (is_letter(s[k])) {
            i = run(k, is_letter);
        } else if (is_number(s[k])) {
            i = run(k, is_number);
        } else if (other(s[k])) {
            i = run(k, other);
        } else {
            // whitespace: \s+(?!\S) keeps the last space for the following word.
            std::size_t j = run(i, is_space);
            if (j < n && j - i > 1) --j;
            i = j;
        }
        out.push_back(s.substr(start, i - start));
    }
    return out;
}

struct PairHash {
    std::size_t operator()(const std::pair<std::u32string, std::u32string>& p) const {
        const std::hash<std::u32string> h;
        return h(p.first) * 1000003u ^ h(p.second);
    }
};

}  // namespace detail

/// Byte-level BPE compatible with GPT-2's vocab.json + merges.txt.
class Gpt2BpeTokenizer final : public Tokenizer {
public:
    Gpt2BpeTokenizer(const std::string& vocab_path, const std::string& merges_path) {
        std::ifstream vf(vocab_path);
        if (!vf) fail(ErrorKind::BackendFailure, "cannot open tokenizer vocabulary " + vocab_path);
        const auto vocab = nlohmann::json::parse(vf);
        for (auto it = vocab.begin(); it != vocab.end(); ++it) {
            const int id = it.value().get<int>();
            auto cps = unicode::decode_utf8(it.key());
            encoder_.emplace(cps, id);
            if (static_cast<std::size_t>(id) >= decoder_.size()) decoder_.resize(static_cast<std::size_t>(id) + 1);
            decoder_[static_cast<std::size_t>(id)] = std::move(cps);
        }
        std::ifstream mf(merges_path);
        if (!mf) fail(ErrorKind::BackendFailure, "cannot open tokenizer merges " + merges_path);
        std::string line;
        int rank = 0;
        while (std::getline(mf, line)) {
            if (line.empty() || line.rfind("#version", 0) == 0) continue;
            const auto sp = line.find(' ');
            if (sp == std::string::npos) continue;
            ranks_.emplace(std::make_pair(unicode::decode_utf8(line.substr(0, sp)),
                                          unicode::decode_utf8(line.substr(sp + 1))),
                           rank++);
        }
        byte_encoder_ = detail::byte_encoder_table();
        for (int b = 0; b < 256; ++b) byte_decoder_.emplace(byte_encoder_[b], static_cast<unsigned char>(b));
        if (auto it = encoder_.find(U"<|endoftext|>"); it != encoder_.end()) eot_ = it->second;
    }

    std::vector<int> encode(std::string_view piece) const override {
        std::vector<int> ids;
        for (const auto& word : detail::gpt2_pretokenize(unicode::decode_utf8(piece))) {
            std::u32string mapped;
            for (unsigned char b : unicode::encode_utf8(word)) mapped.push_back(byte_encoder_[b]);
            for (const auto& tok : bpe(mapped)) {
                const auto it = encoder_.find(tok);
                if (it == encoder_.end()) fail(ErrorKind::AlignmentFailure, "BPE produced out-of-vocabulary symbol");
                ids.push_back(it->second);
            }
        }
        return ids;
    }

    std::string decode(std::span<const int> ids) const override {
        std::string out;
        for (int id : ids) {
            if (id < 0 || static_cast<std::size_t>(id) >= decoder_.size()) continue;
            for (char32_t c : decoder_[static_cast<std::size_t>(id)]) {
                if (auto it = byte_decoder_.find(c); it != byte_decoder_.end()) out.push_back(static_cast<char>(it->second));
            }
        }
        return out;
    }

    int vocab_size() const override { return static_cast<int>(decoder_.size()); }
    std::optional<int> pad_token_id() const override { return eot_; }
    std::string id() const override { return "gpt2-bpe"; }

private:
    std::vector<std::u32string> bpe(const std::u32string& token) const {
        {
            std::lock_guard lock(cache_mutex_);
            if (auto it = cache_.find(token); it != cache_.end()) return it->second;
        }
        std::vector<std::u32string> parts;
        for (char32_t c : token) parts.emplace_back(1, c);
        while (parts.size() > 1) {
            int best_rank = INT_MAX;
            std::size_t best = 0;
            for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
                if (auto it = ranks_.find({parts[i], parts[i + 1]}); it != ranks_.end() && it->second < best_rank) {
                    best_rank = it->second;
                    best = i;
                }
            }
            if (best_rank == INT_MAX) break;
            const std::u32string first = parts[best], second = parts[best + 1];
            std::vector<std::u32string> merged;
            merged.reserve(parts.size());
            for (std::size_t i = 0; i < parts.size();) {
                if (i + 1 < parts.size() && parts[i] == first && parts[i + 1] == second) {
                    merged.push_back(first + second);
                    i += 2;
                } else {
                    merged.push_back(parts[i]);
                    ++i;
                }
            }
            parts = std::move(merged);
        }
        std::lock_guard lock(cache_mutex_);
        cache_.emplace(token, parts);
        return parts;
    }

    std::unordered_map<std::u32string, int> encoder_;
    std::vector<std::u32string> decoder_;
    std::unordered_map<std::pair<std::u32string, std::u32string>, int, detail::PairHash> ranks_;
    std::array<char32_t, 256> byte_encoder_{};
    std::unordered_map<char32_t, unsigned char> byte_decoder_;
    std::optional<int> eot_;
    mutable std::mutex cache_mutex_;
    mutable std::unordered_map<std::u32string, std::vector<std::u32string>> cache_;
};

}  // namespace poscond
