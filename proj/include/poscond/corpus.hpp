// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "poscond/digest.hpp"
#include "poscond/error.hpp"
#include "poscond/pos_tagger.hpp"
#include "poscond/random.hpp"
#include "poscond/unicode.hpp"

namespace poscond {

enum class Genre { narrative, encyclopedic, scientific, scrambled };

constexpr std::string_view to_string(Genre g) {
    switch (g) {
        case Genre::narrative: return "narrative";
        case Genre::encyclopedic: return "encyclopedic";
        case Genre::scientific: return "scientific";
        case Genre::scrambled: return "scrambled";
    }
    return "narrative";
}

inline Genre genre_from_string(std::string_view s) {
    if (s == "narrative") return Genre::narrative;
    if (s == "encyclopedic") return Genre::encyclopedic;
    if (s == "scientific") return Genre::scientific;
    if (s == "scrambled") return Genre::scrambled;
    fail(ErrorKind::ConfigError, "unknown genre '" + std::string(s) + "'");
}

struct WordRecord {
    std::size_t index = 0;  // 1-based
    std::string surface;
    std::string pos_tag;
    PosClass pos_class = PosClass::other;

    bool operator==(const WordRecord&) const = default;
};

struct CorpusText {
    std::string text_id;
    Genre genre = Genre::narrative;
    std::vector<WordRecord> words;
    std::string source_digest;
    std::optional<std::uint64_t> scramble_seed;
    std::string tagger;

    std::size_t size() const { return words.size(); }

    std::vector<std::string> surfaces() const {
        std::vector<std::string> out;
        out.reserve(words.size());
        for (const auto& w : words) out.push_back(w.surface);
        return out;
    }

    bool operator==(const CorpusText&) const = default;
};

/// Re-tags every word; the tagger sees the whole sequence at once.
inline CorpusText tag_pos(CorpusText text, const PosTagger* tagger) {
    if (tagger == nullptr) fail(ErrorKind::TaggerUnavailable, "no POS tagger configured");
    const auto tags = tagger->tag(text.surfaces());
    if (tags.size() != text.words.size()) {
        fail(ErrorKind::AlignmentFailure, "tagger returned " + std::to_string(tags.size()) + " tags for " +
                                              std::to_string(text.words.size()) + " words");
    }
    for (std::size_t i = 0; i < tags.size(); ++i) {
        text.words[i].pos_tag = tags[i];
        text.words[i].pos_class = pos_class_of(tags[i]);
    }
    text.tagger = tagger->id();
    return text;
}

inline CorpusText ingest_text(std::string_view raw, std::string text_id, Genre genre, const PosTagger* tagger) {
    const auto surfaces = unicode::split_whitespace(unicode::clean_text(raw));
    if (surfaces.empty()) fail(ErrorKind::EmptyText, "text '" + text_id + "' has no words after cleaning");
    CorpusText text;
    text.text_id = std::move(text_id);
    text.genre = genre;
    text.source_digest = sha256_hex(raw);
    text.words.reserve(surfaces.size());
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
        text.words.push_back(WordRecord{i + 1, surfaces[i], {}, PosClass::other});
    }
    return tag_pos(std::move(text), tagger);
}

/// Uniform Fisher-Yates permutation of the word sequence; tags are recomputed
/// on the shuffled order.
inline CorpusText scramble(const CorpusText& text, std::uint64_t seed, const PosTagger* tagger) {
    if (text.genre == Genre::scrambled) {
        fail(ErrorKind::ConfigError, "text '" + text.text_id + "' is already scrambled");
    }
    std::vector<std::string> order = text.surfaces();
    std::mt19937_64 rng(seed);
    shuffle_in_place(order, rng);

    CorpusText out;
    out.text_id = text.text_id + "_scrambled";
    out.genre = Genre::scrambled;
    out.source_digest = text.source_digest;
    out.scramble_seed = seed;
    out.words.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        out.words.push_back(WordRecord{i + 1, std::move(order[i]), {}, PosClass::other});
    }
    return tag_pos(std::move(out), tagger);
}

inline nlohmann::json to_json(const CorpusText& text) {
    nlohmann::json words = nlohmann::json::array();
    for (const auto& w : text.words) {
        words.push_back({{"index", w.index},
                         {"surface", w.surface},
                         {"pos_tag", w.pos_tag},
                         {"pos_class", std::string(to_string(w.pos_class))}});
    }
    nlohmann::json j = {{"text_id", text.text_id},
                        {"genre", std::string(to_string(text.genre))},
                        {"source_digest", text.source_digest},
                        {"tagger", text.tagger},
                        {"words", std::move(words)}};
    if (text.scramble_seed) j["scramble_seed"] = *text.scramble_seed;
    return j;
}

inline CorpusText corpus_from_json(const nlohmann::json& j) {
    CorpusText text;
    try {
        text.text_id = j.at("text_id").get<std::string>();
        text.genre = genre_from_string(j.at("genre").get<std::string>());
        text.source_digest = j.at("source_digest").get<std::string>();
        text.tagger = j.value("tagger", std::string());
        if (j.contains("scramble_seed")) text.scramble_seed = j.at("scramble_seed").get<std::uint64_t>();
        for (const auto& w : j.at("words")) {
            text.words.push_back(WordRecord{w.at("index").get<std::size_t>(), w.at("surface").get<std::string>(),
                                            w.at("pos_tag").get<std::string>(),
                                            pos_class_from_string(w.at("pos_class").get<std::string>())});
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ConfigError, std::string("malformed corpus manifest: ") + e.what());
    }
    for (std::size_t i = 0; i < text.words.size(); ++i) {
        if (text.words[i].index != i + 1 || text.words[i].surface.empty()) {
            fail(ErrorKind::ConfigError, "corpus manifest words are not contiguous 1-based non-empty records");
        }
    }
    return text;
}

}  // namespace poscond
