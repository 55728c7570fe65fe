// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

// File-based stages. Layout under the output directory:
//   corpus/<id>.json           ingest
//   tensors/<id>.pct           attribute (windows/<id>.json with dump_windows)
//   profiles/<id>.csv, profiles.csv, profiles_variance.csv       profile
//   metrics/<id>.csv, metrics.csv, metrics_pooled.csv            metrics
//   consistency.csv, consistency_scrambled.csv                   consistency
//   pos_importance/<id>.csv, pos_importance.csv                  pos-importance
//   dominance/<id>_by_position.csv, dominance_by_position.csv,
//   dominance_by_pos.csv, dominance_consistency.csv              dominance
//   figures/*                                                    report
//   manifests/<stage>.json     run manifest and idempotence stamp

#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "poscond/analysis.hpp"
#include "poscond/config.hpp"
#include "poscond/corpus.hpp"
#include "poscond/model_backend.hpp"
#include "poscond/report.hpp"
#include "poscond/tensor_io.hpp"
#include "poscond/windowing.hpp"

#ifndef POSCOND_VERSION
#define POSCOND_VERSION "0.1.0"
#endif

namespace poscond {

namespace fs = std::filesystem;

inline constexpr std::string_view kToolVersion = POSCOND_VERSION;

struct StageOptions {
    unsigned workers = 1;
    bool force = false;
    bool dump_windows = false;
    std::ostream* log = nullptr;
};

struct StageResult {
    std::string stage;
    bool up_to_date = false;  // nothing was recomputed
    std::vector<fs::path> outputs;
};

/// Built-in tiny model, or a GPT-2 style checkpoint directory taken from
/// `model_path` or $POSCOND_CACHE_DIR/<model_id>.
inline LanguageModel load_model(const RunConfig& cfg) {
    if (cfg.model_id == "tiny-reference") return LanguageModel::tiny_reference();
    fs::path dir = cfg.model_path;
    if (dir.empty()) {
        if (const char* cache = std::getenv("POSCOND_CACHE_DIR")) dir = fs::path(cache) / cfg.model_id;
    }
    if (dir.empty() || !fs::is_directory(dir)) {
        fail(ErrorKind::ConfigError, "no weights for model '" + cfg.model_id +
                                         "': set model_path or place them under $POSCOND_CACHE_DIR/" + cfg.model_id);
    }
    return LanguageModel::from_gpt2_directory(dir, cfg.model_id);
}

namespace detail {

inline std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

inline std::string file_digest(const fs::path& p) { return sha256_hex(read_file(p)); }

/// Digest over the named input files, in order.
inline std::string inputs_digest(const std::vector<fs::path>& inputs) {
    std::string acc;
    for (const auto& p : inputs) acc += p.generic_string() + '\0' + file_digest(p) + '\n';
    return sha256_hex(acc);
}

class Stage {
public:
    Stage(std::string name, const RunConfig& cfg, const StageOptions& opts)
        : name_(std::move(name)), cfg_(cfg), opts_(opts), hash_(config_hash(cfg)), out_(cfg.output_dir) {}

    const std::string& hash() const { return hash_; }
    const fs::path& out() const { return out_; }
    fs::path stamp_path() const { return out_ / "manifests" / (name_ + ".json"); }

    /// True when a previous run with the same config and inputs left every output intact.
    bool up_to_date(const std::vector<fs::path>& inputs) const {
        if (opts_.force || !fs::exists(stamp_path())) return false;
        nlohmann::json s;
        try {
            s = nlohmann::json::parse(read_file(stamp_path()));
        } catch (const std::exception&) {
            return false;
        }
        if (s.value("config_hash", "") != hash_ || s.value("inputs_digest", "") != inputs_digest(inputs)) return false;
        const auto outputs = s.value("outputs", nlohmann::json::object());
        for (const auto& [rel, digest] : outputs.items()) {
            const fs::path p = out_ / rel;
            if (!fs::exists(p) || file_digest(p) != digest.get<std::string>()) return false;
        }
        return true;
    }

    void write(const fs::path& rel, const std::string& content) {
        write_file(out_ / rel, content);
        outputs_.push_back(rel);
    }

    void write_csv(const fs::path& rel, const CsvTable& t) { write(rel, t.str(hash_)); }

    void note(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

    void log(const std::string& msg) const {
        if (opts_.log) *opts_.log << "[" << name_ << "] " << msg << '\n';
    }

    StageResult finish(const std::vector<fs::path>& inputs, const std::string& started) {
        nlohmann::json outputs = nlohmann::json::object();
        for (const auto& rel : outputs_) outputs[rel.generic_string()] = file_digest(out_ / rel);
        nlohmann::json stamp = {{"stage", name_},
                                {"config_hash", hash_},
                                {"config", to_json(cfg_)},
                                {"tool_version", std::string(kToolVersion)},
                                {"started", started},
                                {"finished", utc_now()},
                                {"inputs_digest", inputs_digest(inputs)},
                                {"outputs", outputs}};
        for (auto& [k, v] : extra_.items()) stamp[k] = v;
        if (!stamp.contains("skipped_windows")) stamp["skipped_windows"] = nlohmann::json::array();
        write_file(stamp_path(), stamp.dump(2) + "\n");
        StageResult r{name_, false, {}};
        for (const auto& rel : outputs_) r.outputs.push_back(out_ / rel);
        return r;
    }

    StageResult skipped() const {
        log("up to date");
        StageResult r{name_, true, {}};
        const auto s = nlohmann::json::parse(read_file(stamp_path()));
        for (const auto& [rel, _] : s["outputs"].items()) r.outputs.push_back(out_ / rel);
        return r;
    }

private:
    std::string name_;
    const RunConfig& cfg_;
    const StageOptions& opts_;
    std::string hash_;
    fs::path out_;
    std::vector<fs::path> outputs_;
    nlohmann::json extra_ = nlohmann::json::object();
};

inline void require_hash(const std::string& found, const std::string& expected, const fs::path& where) {
    if (found != expected) {
        fail(ErrorKind::StaleArtifact, where.string() + " was produced with config " + (found.empty() ? "<none>" : found) +
                                           ", current config is " + expected + "; re-run the earlier stages");
    }
}

/// Text ids in processing order: each source, followed by its scramble.
inline std::vector<std::string> text_ids(const RunConfig& cfg) {
    std::vector<std::string> ids;
    for (const auto& t : cfg.texts) {
        ids.push_back(t.id);
        if (t.scramble) ids.push_back(t.id + "_scrambled");
    }
    return ids;
}

inline fs::path corpus_rel(const std::string& id) { return fs::path("corpus") / (id + ".json"); }
inline fs::path tensor_rel(const std::string& id) { return fs::path("tensors") / (id + ".pct"); }

inline std::vector<fs::path> paths_under(const fs::path& out, const std::vector<fs::path>& rels) {
    std::vector<fs::path> v;
    for (const auto& r : rels) {
        if (!fs::exists(out / r)) fail(ErrorKind::IoError, (out / r).string() + " is missing; run the earlier stages first");
        v.push_back(out / r);
    }
    return v;
}

inline CorpusText load_corpus(const fs::path& out, const std::string& id, const std::string& hash) {
    const auto j = nlohmann::json::parse(read_file(out / corpus_rel(id)));
    require_hash(j.value("config_hash", ""), hash, out / corpus_rel(id));
    return corpus_from_json(j);
}

inline ConductanceTensor load_stamped_tensor(const fs::path& out, const std::string& id, const std::string& hash) {
    auto t = load_tensor(out / tensor_rel(id));
    require_hash(t.manifest.value("config_hash", ""), hash, out / tensor_rel(id));
    return t;
}

struct LoadedText {
    CorpusText text;
    ConductanceTensor tensor;
};

inline std::vector<LoadedText> load_all(const RunConfig& cfg, const fs::path& out, const std::string& hash) {
    std::vector<LoadedText> v;
    for (const auto& id : text_ids(cfg)) v.push_back({load_corpus(out, id, hash), load_stamped_tensor(out, id, hash)});
    return v;
}

inline std::vector<fs::path> analysis_inputs(const RunConfig& cfg) {
    std::vector<fs::path> rels;
    for (const auto& id : text_ids(cfg)) {
        rels.push_back(corpus_rel(id));
        rels.push_back(tensor_rel(id));
    }
    return paths_under(cfg.output_dir, rels);
}

inline bool is_natural(const CorpusText& t) { return t.genre != Genre::scrambled; }

template <typename Body>
StageResult run_stage(const std::string& name, const RunConfig& cfg, const StageOptions& opts,
                      const std::vector<fs::path>& inputs, Body&& body) {
    Stage st(name, cfg, opts);
    if (st.up_to_date(inputs)) return st.skipped();
    const std::string started = utc_now();
    body(st);
    return st.finish(inputs, started);
}

}  // namespace detail

inline StageResult stage_ingest(const RunConfig& cfg, const StageOptions& opts = {}) {
    if (cfg.texts.empty()) fail(ErrorKind::ConfigError, "config lists no texts");
    std::vector<fs::path> inputs;
    for (const auto& t : cfg.texts) {
        if (!fs::exists(t.path)) fail(ErrorKind::IoError, "text file " + t.path + " does not exist");
        inputs.push_back(t.path);
        if (!t.tags.empty()) inputs.push_back(t.tags);
    }
    return detail::run_stage("ingest", cfg, opts, inputs, [&](detail::Stage& st) {
        const LexiconTagger builtin;
        for (const auto& src : cfg.texts) {
            std::unique_ptr<PosTagger> file_tagger;
            if (!src.tags.empty()) file_tagger = std::make_unique<TagFileTagger>(src.tags);
            const PosTagger* tagger = file_tagger ? file_tagger.get() : static_cast<const PosTagger*>(&builtin);
            auto text = ingest_text(read_file(src.path), src.id, src.genre, tagger);
            auto j = to_json(text);
            j["config_hash"] = st.hash();
            st.write(detail::corpus_rel(src.id), j.dump(1) + "\n");
            st.log(src.id + ": " + std::to_string(text.size()) + " words");
            if (src.scramble) {
                auto s = scramble(text, cfg.scramble_seed, &builtin);
                auto sj = to_json(s);
                sj["config_hash"] = st.hash();
                st.write(detail::corpus_rel(s.text_id), sj.dump(1) + "\n");
            }
        }
    });
}

inline StageResult stage_attribute(const RunConfig& cfg, const StageOptions& opts = {}) {
    std::vector<fs::path> rels;
    for (const auto& id : detail::text_ids(cfg)) rels.push_back(detail::corpus_rel(id));
    const auto inputs = detail::paths_under(cfg.output_dir, rels);
    return detail::run_stage("attribute", cfg, opts, inputs, [&](detail::Stage& st) {
        const LanguageModel model = load_model(cfg);
        AttributionConfig ac;
        ac.quadrature = cfg.quadrature;
        ac.baseline = cfg.baseline.value_or(model.default_baseline_policy());
        ac.normalization = cfg.normalization;
        ac.eps_norm = cfg.eps_norm;
        ac.prepend_bos = cfg.prepend_bos;
        nlohmann::json skipped = nlohmann::json::object();
        for (const auto& id : detail::text_ids(cfg)) {
            const auto text = detail::load_corpus(st.out(), id, st.hash());
            const auto plan = plan_windows(text, cfg.P, cfg.stride);
            std::vector<nlohmann::json> debug;
            BuildOptions bo;
            bo.workers = opts.workers;
            if (opts.dump_windows) bo.debug = &debug;
            auto tensor = build_tensor(plan, text, model, ac, bo);
            tensor.manifest["config_hash"] = st.hash();
            tensor.manifest["tagger"] = text.tagger;
            const auto bytes = serialize_tensor(tensor);
            st.write(detail::tensor_rel(id), bytes);
            skipped[id] = tensor.manifest["skipped_windows"];
            st.log(id + ": " + std::to_string(plan.windows.size()) + " windows, W=" + std::to_string(tensor.W) + ", " +
                   std::to_string(tensor.manifest["skipped_windows"].size()) + " skipped");
            if (opts.dump_windows) {
                st.write(fs::path("windows") / (id + ".json"), nlohmann::json(debug).dump() + "\n");
            }
        }
        st.note("skipped_windows", skipped);
    });
}

inline StageResult stage_profile(const RunConfig& cfg, const StageOptions& opts = {}) {
    return detail::run_stage("profile", cfg, opts, detail::analysis_inputs(cfg), [&](detail::Stage& st) {
        std::vector<PositionalProfile> natural;
        for (const auto& lt : detail::load_all(cfg, st.out(), st.hash())) {
            if (lt.tensor.W == 0) {
                st.log(lt.text.text_id + ": no retained words, profile skipped");
                continue;
            }
            auto prof = positional_profile(lt.tensor);
            st.write_csv(fs::path("profiles") / (lt.text.text_id + ".csv"), profiles_csv(prof));
            if (detail::is_natural(lt.text)) natural.push_back(std::move(prof));
        }
        if (!natural.empty()) st.write_csv("profiles.csv", profiles_csv(pool_profiles(natural)));
    });
}

inline StageResult stage_metrics(const RunConfig& cfg, const StageOptions& opts = {}) {
    return detail::run_stage("metrics", cfg, opts, detail::analysis_inputs(cfg), [&](detail::Stage& st) {
        std::vector<PositionalProfile> natural;
        std::vector<BiasMetrics> per_text;
        bool negative = false;
        for (const auto& lt : detail::load_all(cfg, st.out(), st.hash())) {
            if (lt.tensor.W == 0) continue;
            const auto prof = positional_profile(lt.tensor);
            const auto m = primacy_recency(prof, cfg.edge_fraction);
            negative = negative || m.negative_total;
            st.write_csv(fs::path("metrics") / (lt.text.text_id + ".csv"), metrics_csv(m));
            if (detail::is_natural(lt.text)) {
                natural.push_back(prof);
                per_text.push_back(m);
            }
        }
        if (!per_text.empty()) {
            st.write_csv("metrics.csv", metrics_csv(average_metrics(per_text)));
            st.write_csv("metrics_pooled.csv", metrics_csv(primacy_recency(pool_profiles(natural), cfg.edge_fraction)));
        }
        st.note("negative_layer_total", negative);
    });
}

inline StageResult stage_consistency(const RunConfig& cfg, const StageOptions& opts = {}) {
    return detail::run_stage("consistency", cfg, opts, detail::analysis_inputs(cfg), [&](detail::Stage& st) {
        std::map<std::string, PositionalProfile> profiles;
        std::vector<PositionalProfile> natural;
        std::size_t L = 0;
        for (const auto& lt : detail::load_all(cfg, st.out(), st.hash())) {
            if (lt.tensor.W == 0) continue;
            auto prof = positional_profile(lt.tensor);
            L = prof.L;
            if (detail::is_natural(lt.text)) natural.push_back(prof);
            profiles.emplace(lt.text.text_id, std::move(prof));
        }
        nlohmann::json excluded = nlohmann::json::array();
        auto record = [&](const std::string& what, const ConsistencyResult& r) {
            for (const auto& e : r.excluded) excluded.push_back({{"set", what}, {"layer", e.layer}, {"pair", {e.first, e.second}}});
        };
        auto empty_result = [&] {
            ConsistencyResult r;
            r.mean_r.assign(L, std::nan(""));
            r.n_pairs.assign(L, 0);
            return r;
        };
        ConsistencyResult across = natural.size() >= 2 ? profile_consistency(natural) : empty_result();
        record("natural", across);
        st.write_csv("consistency.csv", consistency_csv(across));

        // Each source against its own scramble; pairs averaged per layer.
        ConsistencyResult scr = empty_result();
        std::vector<double> sums(L, 0.0);
        for (const auto& src : cfg.texts) {
            if (!src.scramble || !profiles.count(src.id) || !profiles.count(src.id + "_scrambled")) continue;
            const auto r = profile_consistency({profiles.at(src.id), profiles.at(src.id + "_scrambled")});
            record(src.id + " vs scrambled", r);
            for (std::size_t l = 0; l < L; ++l) {
                if (r.n_pairs[l]) {
                    sums[l] += r.mean_r[l];
                    ++scr.n_pairs[l];
                }
            }
        }
        for (std::size_t l = 0; l < L; ++l)
            if (scr.n_pairs[l]) scr.mean_r[l] = sums[l] / static_cast<double>(scr.n_pairs[l]);
        st.write_csv("consistency_scrambled.csv", consistency_csv(scr));
        st.note("zero_variance_pairs", excluded);
    });
}

inline StageResult stage_pos_importance(const RunConfig& cfg, const StageOptions& opts = {}) {
    return detail::run_stage("pos-importance", cfg, opts, detail::analysis_inputs(cfg), [&](detail::Stage& st) {
        std::vector<WordImportance> parts;
        for (const auto& lt : detail::load_all(cfg, st.out(), st.hash())) {
            if (lt.tensor.W == 0) continue;
            auto wi = position_averaged_importance(lt.tensor, lt.text);
            if (!detail::is_natural(lt.text)) {
                // Scrambled words keep their own table but never enter the pool.
                WordImportance own = wi;
                std::fill(own.scrambled.begin(), own.scrambled.end(), false);
                detail::group_importance(own);
                st.write_csv(fs::path("pos_importance") / (lt.text.text_id + ".csv"), pos_importance_csv(own));
            } else {
                st.write_csv(fs::path("pos_importance") / (lt.text.text_id + ".csv"), pos_importance_csv(wi));
            }
            parts.push_back(std::move(wi));
        }
        if (!parts.empty()) st.write_csv("pos_importance.csv", pos_importance_csv(pool_importance(parts)));
    });
}

inline StageResult stage_dominance(const RunConfig& cfg, const StageOptions& opts = {}) {
    return detail::run_stage("dominance", cfg, opts, detail::analysis_inputs(cfg), [&](detail::Stage& st) {
        std::vector<DominanceTable> per_position, averaged, all_tables;
        std::vector<std::string> ids;
        for (const auto& lt : detail::load_all(cfg, st.out(), st.hash())) {
            if (lt.tensor.W == 0 || lt.tensor.L < 2) continue;
            auto d = layer_dominance(lt.tensor, DominanceMode::per_position);
            st.write_csv(fs::path("dominance") / (lt.text.text_id + "_by_position.csv"), dominance_by_position_csv(d));
            ids.push_back(lt.text.text_id);
            all_tables.push_back(d);
            if (detail::is_natural(lt.text)) {
                per_position.push_back(std::move(d));
                averaged.push_back(layer_dominance(lt.tensor, DominanceMode::position_averaged, &lt.text));
            }
        }
        if (!per_position.empty()) {
            st.write_csv("dominance_by_position.csv", dominance_by_position_csv(pool_dominance(per_position)));
            st.write_csv("dominance_by_pos.csv", dominance_by_pos_csv(pool_dominance(averaged)));
        }
        CsvTable cons({"text_a", "text_b", "r"});
        if (all_tables.size() >= 2) {
            const auto c = dominance_consistency(all_tables);
            for (std::size_t k = 0; k < c.pairs.size(); ++k) cons.row(ids[c.pairs[k].first], ids[c.pairs[k].second], c.r[k]);
        }
        st.write_csv("dominance_consistency.csv", cons);
    });
}

/// Per-figure tables and SVG charts from the analysis CSVs.
inline StageResult stage_report(const RunConfig& cfg, const StageOptions& opts = {}) {
    const std::vector<fs::path> rels = {"profiles.csv", "metrics.csv", "metrics_pooled.csv", "consistency.csv",
                                        "consistency_scrambled.csv", "pos_importance.csv", "dominance_by_position.csv",
                                        "dominance_by_pos.csv", "dominance_consistency.csv"};
    const auto inputs = detail::paths_under(cfg.output_dir, rels);
    return detail::run_stage("report", cfg, opts, inputs, [&](detail::Stage& st) {
        std::map<std::string, std::vector<std::vector<std::string>>> tables;
        for (const auto& rel : rels) {
            const auto content = read_file(st.out() / rel);
            detail::require_hash(csv_config_hash(content), st.hash(), st.out() / rel);
            std::istringstream in(content);
            std::string line;
            std::getline(in, line);  // hash
            std::getline(in, line);  // header
            auto& rows = tables[rel.string()];
            while (std::getline(in, line)) {
                std::vector<std::string> cells;
                std::stringstream ls(line);
                std::string c;
                while (std::getline(ls, c, ',')) cells.push_back(c);
                rows.push_back(std::move(cells));
            }
        }
        auto num = [](const std::string& s) { return std::stod(s); };
        auto copy = [&](const std::string& from, const std::string& to) {
            st.write(fs::path("figures") / to, read_file(st.out() / from));
        };
        copy("profiles.csv", "fig2_positional_profiles.csv");
        copy("consistency.csv", "fig3_text_consistency.csv");
        copy("consistency_scrambled.csv", "fig3_scrambled_consistency.csv");
        copy("metrics.csv", "fig4_primacy_recency.csv");
        copy("pos_importance.csv", "fig5_pos_importance.csv");
        copy("dominance_by_position.csv", "fig6a_dominance_by_position.csv");
        copy("dominance_by_pos.csv", "fig6b_dominance_by_pos.csv");

        std::map<std::size_t, std::vector<double>> by_layer;
        for (const auto& r : tables["profiles.csv"]) by_layer[std::stoul(r[0])].push_back(num(r[2]));
        std::vector<Series> prof;
        for (auto& [l, y] : by_layer) prof.push_back({"layer " + std::to_string(l), y});
        st.write("figures/fig2_positional_profiles.svg",
                 svg_line_chart("Positional importance profiles", "position", "mean conductance", prof));

        Series prim{"primacy", {}}, rec{"recency", {}};
        for (const auto& r : tables["metrics.csv"]) {
            prim.y.push_back(num(r[1]));
            rec.y.push_back(num(r[2]));
        }
        st.write("figures/fig4_primacy_recency.svg", svg_line_chart("Primacy and recency", "layer", "fraction", {rec, prim}));

        std::map<std::string, std::vector<double>> classes;
        for (const auto& r : tables["pos_importance.csv"])
            if (r[1] == "*") classes[r[2]].push_back(num(r[3]));
        std::vector<Series> pos;
        for (auto& [c, y] : classes) pos.push_back({c, y});
        st.write("figures/fig5_pos_importance.svg",
                 svg_line_chart("Position-averaged importance by word class", "layer", "mean conductance", pos));

        std::map<std::size_t, std::vector<double>> dom;
        for (const auto& r : tables["dominance_by_position.csv"]) dom[std::stoul(r[1])].push_back(num(r[2]));
        std::vector<Series> ds;
        for (auto& [l, y] : dom) ds.push_back({"layer " + std::to_string(l), y});
        st.write("figures/fig6a_dominance_by_position.svg",
                 svg_line_chart("Dominant layer by position", "position", "% of words", ds));
    });
}

using StageFn = StageResult (*)(const RunConfig&, const StageOptions&);

inline const std::vector<std::pair<std::string, StageFn>>& stages() {
    static const std::vector<std::pair<std::string, StageFn>> s = {
        {"ingest", &stage_ingest},           {"attribute", &stage_attribute},
        {"profile", &stage_profile},         {"metrics", &stage_metrics},
        {"consistency", &stage_consistency}, {"pos-importance", &stage_pos_importance},
        {"dominance", &stage_dominance},     {"report", &stage_report},
    };
    return s;
}

/// Every stage in order.
inline std::vector<StageResult> run_all(const RunConfig& cfg, const StageOptions& opts = {}) {
    std::vector<StageResult> out;
    for (const auto& [name, fn] : stages()) out.push_back(fn(cfg, opts));
    return out;
}

}  // namespace poscond
