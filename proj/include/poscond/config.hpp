// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "poscond/attribution.hpp"
#include "poscond/corpus.hpp"
#include "poscond/digest.hpp"
#include "poscond/error.hpp"

namespace poscond {

struct TextSource {
    std::string id;        // defaults to the file stem
    std::string path;
    Genre genre = Genre::narrative;
    bool scramble = false;  // also produce "<id>_scrambled"
    std::string tags;       // optional TSV tag file; empty = built-in tagger
};

/// Everything that determines the artifacts of a run. `output_dir` and the
/// worker count do not, so they stay out of the hash.
struct RunConfig {
    std::string model_id = "tiny-reference";
    std::string model_path;  // directory with config.json, model.safetensors, vocab.json, merges.txt
    std::vector<TextSource> texts;
    std::size_t P = 10;
    std::size_t stride = 1;
    QuadratureConfig quadrature;
    std::optional<BaselinePolicy> baseline;  // unset = model default
    NormalizationMode normalization = NormalizationMode::signed_sum;
    double eps_norm = 1e-8;
    std::uint64_t scramble_seed = 0;
    bool prepend_bos = false;
    double edge_fraction = 0.2;
    std::string output_dir = "poscond-out";
};

inline nlohmann::json to_json(const TextSource& t) {
    nlohmann::json j = {{"id", t.id}, {"path", t.path}, {"genre", std::string(to_string(t.genre))}, {"scramble", t.scramble}};
    if (!t.tags.empty()) j["tags"] = t.tags;
    return j;
}

/// Fields that enter the hash. Keys are sorted by the JSON object type.
inline nlohmann::json canonical_json(const RunConfig& c) {
    nlohmann::json texts = nlohmann::json::array();
    for (const auto& t : c.texts) texts.push_back(to_json(t));
    return {
        {"model_id", c.model_id},
        {"texts", texts},
        {"P", c.P},
        {"stride", c.stride},
        {"quadrature", {{"rule", std::string(to_string(c.quadrature.rule))}, {"steps", c.quadrature.steps}}},
        {"baseline", c.baseline ? std::string(to_string(*c.baseline)) : std::string("default")},
        {"normalization", std::string(to_string(c.normalization))},
        {"eps_norm", c.eps_norm},
        {"scramble_seed", c.scramble_seed},
        {"prepend_bos", c.prepend_bos},
        {"edge_fraction", c.edge_fraction},
    };
}

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j = canonical_json(c);
    j["model_path"] = c.model_path;
    j["output_dir"] = c.output_dir;
    return j;
}

inline std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_json(c).dump()); }

inline void validate(const RunConfig& c) {
    if (c.P < 2) fail(ErrorKind::ConfigError, "P must be at least 2");
    if (c.stride != 1) fail(ErrorKind::ConfigError, "only stride 1 is supported");
    if (c.quadrature.steps < 2) fail(ErrorKind::ConfigError, "quadrature needs at least 2 steps");
    if (!(c.eps_norm > 0)) fail(ErrorKind::ConfigError, "eps_norm must be positive");
    if (!(c.edge_fraction > 0 && c.edge_fraction <= 0.5)) fail(ErrorKind::ConfigError, "edge_fraction must be in (0, 0.5]");
    std::vector<std::string> ids;
    for (const auto& t : c.texts) {
        if (t.genre == Genre::scrambled) fail(ErrorKind::ConfigError, "texts are scrambled with \"scramble\": true, not by genre");
        for (const auto& id : {t.id, t.id + "_scrambled"}) {
            if (std::find(ids.begin(), ids.end(), id) != ids.end()) fail(ErrorKind::ConfigError, "duplicate text id '" + id + "'");
        }
        ids.push_back(t.id);
        if (t.scramble) ids.push_back(t.id + "_scrambled");
    }
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    static const std::vector<std::string> known = {"model_id", "model_path", "texts", "P", "stride", "quadrature",
                                                   "baseline", "normalization", "eps_norm", "scramble_seed",
                                                   "prepend_bos", "edge_fraction", "output_dir"};
    if (!j.is_object()) fail(ErrorKind::ConfigError, "config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) fail(ErrorKind::ConfigError, "unknown config key '" + key + "'");
    }
    RunConfig c;
    auto resolve = [&](const std::string& p) {
        if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (base_dir / p).lexically_normal().string();
    };
    try {
        c.model_id = j.value("model_id", c.model_id);
        c.model_path = resolve(j.value("model_path", c.model_path));
        c.P = j.value("P", c.P);
        c.stride = j.value("stride", c.stride);
        if (j.contains("quadrature")) {
            const auto& q = j["quadrature"];
            if (q.contains("rule")) c.quadrature.rule = quadrature_rule_from_string(q["rule"].get<std::string>());
            c.quadrature.steps = q.value("steps", c.quadrature.steps);
        }
        if (j.contains("baseline") && j["baseline"] != "default") {
            c.baseline = baseline_policy_from_string(j["baseline"].get<std::string>());
        }
        if (j.contains("normalization")) c.normalization = normalization_mode_from_string(j["normalization"].get<std::string>());
        c.eps_norm = j.value("eps_norm", c.eps_norm);
        c.scramble_seed = j.value("scramble_seed", c.scramble_seed);
        c.prepend_bos = j.value("prepend_bos", c.prepend_bos);
        c.edge_fraction = j.value("edge_fraction", c.edge_fraction);
        c.output_dir = resolve(j.value("output_dir", c.output_dir));
        for (const auto& t : j.value("texts", nlohmann::json::array())) {
            TextSource s;
            s.path = resolve(t.at("path").get<std::string>());
            s.id = t.value("id", std::filesystem::path(s.path).stem().string());
            s.genre = genre_from_string(t.value("genre", std::string("narrative")));
            s.scramble = t.value("scramble", false);
            s.tags = resolve(t.value("tags", std::string()));
            c.texts.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ConfigError, e.what());
    }
    validate(c);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::ConfigError, "cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ConfigError, "config " + path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

}  // namespace poscond
