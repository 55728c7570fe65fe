// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unicode/uchar.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "poscond/error.hpp"
#include "poscond/unicode.hpp"

namespace poscond {

enum class PosClass { content, function, other };

constexpr std::string_view to_string(PosClass c) {
    switch (c) {
        case PosClass::content: return "content";
        case PosClass::function: return "function";
        case PosClass::other: return "other";
    }
    return "other";
}

inline PosClass pos_class_from_string(std::string_view s) {
    if (s == "content") return PosClass::content;
    if (s == "function") return PosClass::function;
    if (s == "other") return PosClass::other;
    fail(ErrorKind::ConfigError, "unknown pos_class '" + std::string(s) + "'");
}

/// The seventeen Universal-POS tags.
inline constexpr std::array<std::string_view, 17> kUniversalPosTags = {
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"};

inline PosClass pos_class_of(std::string_view tag) {
    static constexpr std::array<std::string_view, 5> content = {"NOUN", "PROPN", "VERB", "ADJ", "ADV"};
    static constexpr std::array<std::string_view, 5> function = {"PRON", "AUX", "DET", "ADP", "PART"};
    if (std::find(content.begin(), content.end(), tag) != content.end()) return PosClass::content;
    if (std::find(function.begin(), function.end(), tag) != function.end()) return PosClass::function;
    return PosClass::other;
}

/// Tags a whole word sequence at once so context can inform each tag.
class PosTagger {
public:
    virtual ~PosTagger() = default;
    virtual std::vector<std::string> tag(const std::vector<std::string>& words) const = 0;
    /// Name and version recorded in corpus manifests.
    virtual std::string id() const = 0;
};

namespace detail {

inline std::string lower(std::string_view s) {
    std::u32string cps = unicode::decode_utf8(s);
    for (auto& c : cps) c = static_cast<char32_t>(u_tolower(static_cast<UChar32>(c)));
    return unicode::encode_utf8(cps);
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

struct StrippedWord {
    std::string core;        // lower-cased, surrounding punctuation removed
    bool capitalized = false;
    bool ends_sentence = false;
    bool only_punct = false;
    bool numeric = false;
};

inline StrippedWord strip_word(std::string_view surface) {
    const std::u32string cps = unicode::decode_utf8(surface);
    std::size_t b = 0, e = cps.size();
    while (b < e && !unicode::is_letter(cps[b]) && !unicode::is_number(cps[b])) ++b;
    while (e > b && !unicode::is_letter(cps[e - 1]) && !unicode::is_number(cps[e - 1])) --e;
    StrippedWord w;
    w.only_punct = (b == e);
    if (!w.only_punct) {
        w.capitalized = u_isupper(static_cast<UChar32>(cps[b])) != 0;
        std::u32string core = cps.substr(b, e - b);
        // Curly apostrophes behave like ASCII ones for contraction lookup.
        std::replace(core.begin(), core.end(), U'’', U'\'');
        w.core = lower(unicode::encode_utf8(core));
        w.numeric = std::all_of(core.begin(), core.end(), [](char32_t c) {
            return unicode::is_number(c) || c == U'.' || c == U',' || c == U'-';
        });
    }
    for (std::size_t i = e; i < cps.size(); ++i) {
        if (cps[i] == U'.' || cps[i] == U'!' || cps[i] == U'?') w.ends_sentence = true;
    }
    return w;
}

}  // namespace detail

/// Rule-and-lexicon English tagger producing Universal-POS tags. Closed
/// classes come from word lists; open classes from a small lexicon, suffix
/// rules and left context. It approximates a statistical tagger and exists
/// so the pipeline runs with no external dependencies.
class LexiconTagger final : public PosTagger {
public:
    LexiconTagger() {
        auto add = [this](std::string_view tag, std::initializer_list<std::string_view> words) {
            for (auto w : words) lexicon_.emplace(std::string(w), std::string(tag));
        };
        add("DET", {"the", "a", "an", "this", "these", "those", "every", "each", "some", "any", "no",
                    "all", "both", "either", "neither", "another", "such", "what", "which", "whatever",
                    "whichever", "that"});
        add("PRON", {"i", "me", "you", "he", "him", "she", "her", "it", "we", "us", "they", "them",
                     "myself", "yourself", "himself", "herself", "itself", "ourselves", "yourselves",
                     "themselves", "my", "mine", "your", "yours", "his", "hers", "its", "our", "ours",
                     "their", "theirs", "who", "whom", "whose", "whoever", "something", "anything",
                     "nothing", "everything", "someone", "anyone", "everyone", "nobody", "somebody",
                     "anybody", "everybody", "none", "i'm", "i've", "i'd", "i'll", "you're", "you've",
                     "you'd", "you'll", "he's", "he'd", "he'll", "she's", "she'd", "she'll", "it's",
                     "it'll", "we're", "we've", "we'd", "we'll", "they're", "they've", "they'd",
                     "they'll", "that's", "there's", "what's", "who's", "let's"});
        add("AUX", {"be", "am", "is", "are", "was", "were", "been", "being", "will", "would", "shall",
                    "should", "may", "might", "must", "can", "could", "don't", "doesn't", "didn't",
                    "isn't", "aren't", "wasn't", "weren't", "won't", "wouldn't", "can't", "couldn't",
                    "shouldn't", "haven't", "hasn't", "hadn't", "mustn't", "cannot", "ain't"});
        add("ADP", {"of", "in", "on", "at", "by", "for", "with", "about", "against", "between", "into",
                    "through", "during", "before", "after", "above", "below", "from", "up", "down",
                    "out", "off", "over", "under", "than", "as", "like", "near", "since", "until",
                    "upon", "within", "without", "across", "along", "around", "behind", "beyond",
                    "toward", "towards", "among", "onto", "despite", "per", "via", "except", "inside",
                    "outside", "beneath", "beside", "besides", "throughout", "amid", "unlike", "till"});
        add("PART", {"not", "n't", "'s"});
        add("CCONJ", {"and", "or", "but", "nor", "yet", "plus"});
        add("SCONJ", {"because", "although", "though", "while", "if", "unless", "whether", "whereas",
                      "when", "whenever", "wherever", "once"});
        add("INTJ", {"oh", "ah", "uh", "um", "umm", "er", "hey", "wow", "hello", "hi", "okay", "ok",
                     "yeah", "yep", "yes", "nope", "oops", "alas", "hmm", "mm", "huh", "bye", "ouch",
                     "aha", "whoa"});
        add("ADV", {"very", "really", "just", "also", "too", "so", "then", "now", "here", "there",
                    "always", "never", "often", "sometimes", "still", "even", "only", "quite", "rather",
                    "almost", "already", "again", "soon", "ever", "perhaps", "maybe", "together",
                    "away", "back", "how", "why", "where", "else", "instead", "however", "thus",
                    "therefore", "indeed", "anyway", "later", "once", "well", "far", "much", "more",
                    "most", "less", "least", "enough", "today", "tomorrow", "yesterday", "ago",
                    "forward", "home", "somewhat", "nearly", "finally", "abroad", "afterwards"});
        add("ADJ", {"good", "new", "first", "last", "long", "great", "little", "own", "other", "old",
                    "right", "big", "high", "different", "small", "large", "next", "early", "young",
                    "important", "few", "public", "bad", "same", "able", "best", "better", "sure",
                    "free", "full", "whole", "real", "hard", "late", "certain", "clear", "strong",
                    "true", "low", "short", "black", "white", "red", "blue", "green", "dark", "light",
                    "hot", "cold", "happy", "sad", "many", "several", "open", "close", "nice", "fine",
                    "huge", "tiny", "ready", "simple", "entire", "main", "whole", "poor", "rich",
                    "human", "social", "local", "general", "possible", "special", "recent", "common",
                    "curious", "tired", "afraid", "alone", "alive", "dead", "wrong", "quiet", "strange",
                    "wide", "deep", "easy", "second", "third", "natural", "single", "final", "major"});
        add("VERB", {"go", "goes", "went", "gone", "going", "say", "says", "said", "get", "gets", "got",
                     "make", "makes", "made", "know", "knows", "knew", "known", "think", "thinks",
                     "thought", "take", "takes", "took", "taken", "see", "sees", "saw", "seen", "come",
                     "comes", "came", "want", "wants", "look", "looks", "use", "uses", "find", "finds",
                     "found", "give", "gives", "gave", "given", "tell", "tells", "told", "work", "call",
                     "try", "tried", "ask", "need", "needs", "feel", "feels", "felt", "become",
                     "became", "leave", "left", "put", "mean", "means", "meant", "keep", "kept", "let",
                     "begin", "began", "begun", "seem", "seems", "help", "talk", "turn", "start",
                     "show", "shows", "hear", "heard", "play", "run", "ran", "move", "live", "believe",
                     "hold", "held", "bring", "brought", "happen", "write", "wrote", "written",
                     "provide", "sit", "sat", "stand", "stood", "lose", "lost", "pay", "paid", "meet",
                     "met", "include", "continue", "set", "learn", "change", "lead", "led",
                     "understand", "understood", "watch", "follow", "stop", "create", "speak", "spoke",
                     "read", "allow", "add", "spend", "spent", "grow", "grew", "walk", "win", "won",
                     "offer", "remember", "love", "consider", "appear", "buy", "bought", "wait",
                     "serve", "die", "send", "sent", "expect", "build", "built", "stay", "fall", "fell",
                     "cut", "reach", "kill", "remain", "suggest", "raise", "pass", "sell", "sold",
                     "require", "decide", "pull", "eat", "ate", "drink", "drank", "sleep", "slept",
                     "think", "wish", "hope", "sing", "sang", "fly", "flew", "swim", "swam", "throw",
                     "threw", "catch", "caught", "teach", "taught", "wonder", "seemed", "began",
                     "fell", "sat", "ran", "peep", "burn", "burnt"});
        // Words whose base form is both a main verb and an auxiliary.
        for (auto w : {"have", "has", "had", "having", "do", "does", "did", "doing", "done"}) dual_aux_.emplace(w);
    }

    std::vector<std::string> tag(const std::vector<std::string>& words) const override {
        std::vector<detail::StrippedWord> stripped;
        stripped.reserve(words.size());
        for (const auto& w : words) stripped.push_back(detail::strip_word(w));

        std::vector<std::string> tags(words.size());
        for (std::size_t i = 0; i < words.size(); ++i) {
            const bool sentence_start = (i == 0) || stripped[i - 1].ends_sentence;
            tags[i] = lexical_tag(stripped[i], sentence_start);
        }
        // Context pass: left-to-right so each decision sees the revised left neighbour.
        for (std::size_t i = 0; i < words.size(); ++i) {
            const auto& w = stripped[i];
            const std::string prev = i > 0 ? tags[i - 1] : std::string();
            const std::string next = i + 1 < words.size() ? tags[i + 1] : std::string();
            if (w.core == "to") {
                const bool next_is_base_guess = i + 1 < words.size() && is_guess(stripped[i + 1]) &&
                                                next == "NOUN" && !detail::ends_with(stripped[i + 1].core, "s");
                tags[i] = (next == "VERB" || next == "AUX" || next_is_base_guess) ? "PART" : "ADP";
                continue;
            }
            if (w.core == "that" && (next == "PRON" || next == "PROPN" || next == "DET")) {
                tags[i] = "SCONJ";
                continue;
            }
            if (dual_aux_.contains(w.core)) {
                tags[i] = (next == "VERB" || next == "ADV" || next == "PART") ? "AUX" : "VERB";
                continue;
            }
            if (!is_guess(w)) continue;
            if (tags[i] == "NOUN") {
                const bool third_person = detail::ends_with(w.core, "s") && !detail::ends_with(w.core, "ss");
                if (prev == "PART" || prev == "AUX" || (prev == "PRON" && third_person)) tags[i] = "VERB";
            } else if (tags[i] == "VERB" && (prev == "DET" || prev == "ADJ")) {
                tags[i] = "NOUN";
            }
        }
        return tags;
    }

    std::string id() const override { return "builtin-lexicon/1"; }

private:
    bool is_guess(const detail::StrippedWord& w) const {
        return !w.only_punct && !w.numeric && !lexicon_.contains(w.core) && !dual_aux_.contains(w.core);
    }

    std::string lexical_tag(const detail::StrippedWord& w, bool sentence_start) const {
        if (w.only_punct) return "PUNCT";
        if (w.numeric) return "NUM";
        if (auto it = lexicon_.find(w.core); it != lexicon_.end()) return it->second;
        if (dual_aux_.contains(w.core)) return "VERB";
        static const std::unordered_set<std::string> number_words = {
            "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
            "twelve", "twenty", "thirty", "forty", "fifty", "hundred", "thousand", "million", "billion"};
        if (number_words.contains(w.core)) return "NUM";
        if (w.core.find('\'') != std::string::npos) {
            if (detail::ends_with(w.core, "n't")) return "AUX";
            if (detail::ends_with(w.core, "'s")) {
                return w.capitalized && !sentence_start ? "PROPN" : "NOUN";
            }
        }
        if (w.capitalized && !sentence_start) return "PROPN";
        using detail::ends_with;
        if (ends_with(w.core, "ly") && w.core.size() > 4) return "ADV";
        if (ends_with(w.core, "ing") && w.core.size() > 4) return "VERB";
        if (ends_with(w.core, "ed") && w.core.size() > 3) return "VERB";
        for (auto suffix : {"ous", "ful", "ive", "able", "ible", "less", "ish", "ical", "ic", "ary"}) {
            if (ends_with(w.core, suffix) && w.core.size() > std::string_view(suffix).size() + 2) return "ADJ";
        }
        return "NOUN";
    }

    std::unordered_map<std::string, std::string> lexicon_;
    std::unordered_set<std::string> dual_aux_;
};

/// Reads tags produced elsewhere (e.g. by a statistical tagger) from a
/// two-column TSV file: surface<TAB>UPOS, one line per word, in text order.
class TagFileTagger final : public PosTagger {
public:
    explicit TagFileTagger(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_);
        if (!in) fail(ErrorKind::TaggerUnavailable, "cannot open tag file " + path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) fail(ErrorKind::TaggerUnavailable, "malformed tag line: " + line);
            entries_.emplace_back(line.substr(0, tab), line.substr(tab + 1));
        }
    }

    std::vector<std::string> tag(const std::vector<std::string>& words) const override {
        if (words.size() != entries_.size()) {
            fail(ErrorKind::AlignmentFailure, "tag file " + path_ + " has " + std::to_string(entries_.size()) +
                                                  " entries for " + std::to_string(words.size()) + " words");
        }
        std::vector<std::string> tags;
        tags.reserve(words.size());
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (entries_[i].first != words[i]) {
                fail(ErrorKind::AlignmentFailure, "tag file word " + std::to_string(i + 1) + " '" +
                                                      entries_[i].first + "' != '" + words[i] + "'");
            }
            tags.push_back(entries_[i].second);
        }
        return tags;
    }

    std::string id() const override { return "tagfile:" + path_; }

private:
    std::string path_;
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace poscond
