// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poscond/corpus.hpp"
#include "poscond/error.hpp"
#include "poscond/statistics.hpp"
#include "poscond/windowing.hpp"

namespace poscond {

using LayerTable = std::vector<std::vector<double>>;  // [layer][position or column]

struct PositionalProfile {
    std::size_t L = 0;
    std::size_t P = 0;
    std::size_t word_count = 0;  // W of the source tensor
    LayerTable mean;
    LayerTable variance;         // population variance over words
    std::vector<std::vector<std::size_t>> counts;  // populated cells behind each mean
};

/// Mean and variance over the word axis for every (layer, position). NaN
/// cells (skipped windows) are left out of both.
inline PositionalProfile positional_profile(const ConductanceTensor& t) {
    if (t.W == 0 || t.L == 0 || t.P == 0) fail(ErrorKind::EmptyTensor, "tensor has no retained words");
    PositionalProfile prof;
    prof.L = t.L;
    prof.P = t.P;
    prof.word_count = t.W;
    prof.mean.assign(t.L, std::vector<double>(t.P, 0.0));
    prof.variance.assign(t.L, std::vector<double>(t.P, 0.0));
    prof.counts.assign(t.L, std::vector<std::size_t>(t.P, 0));
    std::vector<double> column;
    for (std::size_t l = 0; l < t.L; ++l) {
        for (std::size_t p = 0; p < t.P; ++p) {
            column.clear();
            for (std::size_t w = 0; w < t.W; ++w) {
                const double v = t.at(l, w, p);
                if (!std::isnan(v)) column.push_back(v);
            }
            if (column.empty()) fail(ErrorKind::EmptyTensor, "no populated cells at some (layer, position)");
            prof.mean[l][p] = stats::mean(column);
            prof.variance[l][p] = stats::variance(column);
            prof.counts[l][p] = column.size();
        }
    }
    return prof;
}

/// Pools several profiles as if their word axes were concatenated.
inline PositionalProfile pool_profiles(const std::vector<PositionalProfile>& profiles) {
    if (profiles.empty()) fail(ErrorKind::EmptyTensor, "no profiles to pool");
    PositionalProfile out = profiles.front();
    for (std::size_t k = 1; k < profiles.size(); ++k) {
        const auto& q = profiles[k];
        if (q.L != out.L || q.P != out.P) fail(ErrorKind::ConfigError, "profiles differ in shape");
        out.word_count += q.word_count;
        for (std::size_t l = 0; l < out.L; ++l) {
            for (std::size_t p = 0; p < out.P; ++p) {
                const double n1 = static_cast<double>(out.counts[l][p]), n2 = static_cast<double>(q.counts[l][p]);
                const double m = (n1 * out.mean[l][p] + n2 * q.mean[l][p]) / (n1 + n2);
                const double d1 = out.mean[l][p] - m, d2 = q.mean[l][p] - m;
                out.variance[l][p] = (n1 * (out.variance[l][p] + d1 * d1) + n2 * (q.variance[l][p] + d2 * d2)) / (n1 + n2);
                out.mean[l][p] = m;
                out.counts[l][p] += q.counts[l][p];
            }
        }
    }
    return out;
}

struct BiasMetrics {
    std::vector<double> prim_frac;
    std::vector<double> rec_frac;
    std::vector<double> mid_frac;
    std::vector<double> totals;
    std::vector<std::size_t> primacy_positions;  // 1-based
    std::vector<std::size_t> recency_positions;  // 1-based
    bool negative_total = false;
};

inline BiasMetrics primacy_recency(const PositionalProfile& prof, double fraction = 0.2, double zero_eps = 1e-12) {
    if (prof.P < 5) fail(ErrorKind::ConfigError, "primacy/recency needs at least 5 positions");
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(prof.P) + 1e-9));
    if (k < 1 || 2 * k > prof.P) fail(ErrorKind::ConfigError, "edge fraction gives no disjoint position sets");
    BiasMetrics m;
    for (std::size_t p = 1; p <= k; ++p) m.primacy_positions.push_back(p);
    for (std::size_t p = prof.P - k + 1; p <= prof.P; ++p) m.recency_positions.push_back(p);
    for (std::size_t l = 0; l < prof.L; ++l) {
        const auto& row = prof.mean[l];
        double total = 0, prim = 0, rec = 0;
        for (std::size_t p = 0; p < prof.P; ++p) total += row[p];
        for (std::size_t p = 0; p < k; ++p) prim += row[p];
        for (std::size_t p = prof.P - k; p < prof.P; ++p) rec += row[p];
        if (std::abs(total) < zero_eps) fail(ErrorKind::ZeroTotal, "layer " + std::to_string(l + 1) + " profile sums to zero");
        if (total < 0) m.negative_total = true;
        m.totals.push_back(total);
        m.prim_frac.push_back(prim / total);
        m.rec_frac.push_back(rec / total);
        m.mid_frac.push_back((total - prim - rec) / total);
    }
    return m;
}

/// Element-wise mean of per-text fractions.
inline BiasMetrics average_metrics(const std::vector<BiasMetrics>& metrics) {
    if (metrics.empty()) fail(ErrorKind::EmptyTensor, "no metrics to average");
    BiasMetrics out = metrics.front();
    const double n = static_cast<double>(metrics.size());
    for (std::size_t l = 0; l < out.prim_frac.size(); ++l) {
        double prim = 0, rec = 0, mid = 0, total = 0;
        for (const auto& m : metrics) {
            if (m.prim_frac.size() != out.prim_frac.size()) fail(ErrorKind::ConfigError, "metrics differ in layer count");
            prim += m.prim_frac[l];
            rec += m.rec_frac[l];
            mid += m.mid_frac[l];
            total += m.totals[l];
        }
        out.prim_frac[l] = prim / n;
        out.rec_frac[l] = rec / n;
        out.mid_frac[l] = mid / n;
        out.totals[l] = total / n;
    }
    for (const auto& m : metrics) out.negative_total = out.negative_total || m.negative_total;
    return out;
}

/// Spearman correlation between layer index and recency fraction.
inline std::optional<double> recency_depth_correlation(const BiasMetrics& m) {
    std::vector<double> depth(m.rec_frac.size());
    for (std::size_t l = 0; l < depth.size(); ++l) depth[l] = static_cast<double>(l + 1);
    return stats::spearman(depth, m.rec_frac);
}

struct ExcludedPair {
    std::size_t layer = 0;  // 1-based; 0 when the pair is excluded as a whole
    std::size_t first = 0;
    std::size_t second = 0;
};

struct ConsistencyResult {
    std::vector<double> mean_r;          // per layer, NaN when every pair was excluded
    std::vector<std::size_t> n_pairs;    // per layer, pairs that entered the mean
    std::vector<ExcludedPair> excluded;  // zero-variance pairs
};

/// Per layer, the mean Pearson r over all unordered profile pairs.
inline ConsistencyResult profile_consistency(const std::vector<PositionalProfile>& profiles) {
    if (profiles.size() < 2) fail(ErrorKind::ConfigError, "consistency needs at least two profiles");
    const auto L = profiles.front().L, P = profiles.front().P;
    for (const auto& p : profiles)
        if (p.L != L || p.P != P) fail(ErrorKind::ConfigError, "profiles differ in shape");
    ConsistencyResult out;
    for (std::size_t l = 0; l < L; ++l) {
        double sum = 0;
        std::size_t n = 0;
        for (std::size_t a = 0; a < profiles.size(); ++a) {
            for (std::size_t b = a + 1; b < profiles.size(); ++b) {
                if (const auto r = stats::pearson(profiles[a].mean[l], profiles[b].mean[l])) {
                    sum += *r;
                    ++n;
                } else {
                    out.excluded.push_back({l + 1, a, b});
                }
            }
        }
        out.mean_r.push_back(n ? sum / static_cast<double>(n) : std::nan(""));
        out.n_pairs.push_back(n);
    }
    return out;
}

struct GroupMean {
    std::string pos_tag;  // "*" for a whole class
    PosClass pos_class = PosClass::other;
    std::vector<double> mean;  // per layer
    std::size_t count = 0;
};

struct WordImportance {
    std::size_t L = 0;
    std::size_t P = 0;
    std::vector<std::size_t> word_index;  // 1-based text index of each kept word
    std::vector<std::string> pos_tag;
    std::vector<PosClass> pos_class;
    std::vector<bool> scrambled;
    LayerTable values;                    // [layer][kept word]
    std::size_t dropped_words = 0;        // words with unpopulated cells
    std::vector<GroupMean> by_tag;        // ordered by tag
    std::vector<GroupMean> by_class;      // content, function, other
};

namespace detail {

inline void group_importance(WordImportance& wi) {
    std::map<std::string, GroupMean> tags;
    std::map<PosClass, GroupMean> classes;
    for (std::size_t k = 0; k < wi.word_index.size(); ++k) {
        if (wi.scrambled[k]) continue;
        auto& g = tags[wi.pos_tag[k]];
        auto& c = classes[wi.pos_class[k]];
        g.pos_tag = wi.pos_tag[k];
        g.pos_class = wi.pos_class[k];
        c.pos_tag = "*";
        c.pos_class = wi.pos_class[k];
        for (auto* grp : {&g, &c}) {
            grp->mean.resize(wi.L, 0.0);
            for (std::size_t l = 0; l < wi.L; ++l) grp->mean[l] += wi.values[l][k];
            ++grp->count;
        }
    }
    wi.by_tag.clear();
    wi.by_class.clear();
    for (auto& [tag, g] : tags) {
        for (auto& v : g.mean) v /= static_cast<double>(g.count);
        wi.by_tag.push_back(std::move(g));
    }
    for (auto& [cls, g] : classes) {
        for (auto& v : g.mean) v /= static_cast<double>(g.count);
        wi.by_class.push_back(std::move(g));
    }
}

}  // namespace detail

/// Position-averaged importance of every retained word, plus POS group means.
inline WordImportance position_averaged_importance(const ConductanceTensor& t, const CorpusText& text) {
    if (t.W == 0) fail(ErrorKind::EmptyTensor, "tensor has no retained words");
    if (t.word_index_map.size() != t.W) fail(ErrorKind::AlignmentFailure, "word index map length differs from W");
    if (t.manifest.contains("text_id") && t.manifest["text_id"] != text.text_id) {
        fail(ErrorKind::AlignmentFailure, "tensor was built for text '" + t.manifest["text_id"].get<std::string>() +
                                              "', not '" + text.text_id + "'");
    }
    WordImportance wi;
    wi.L = t.L;
    wi.P = t.P;
    wi.values.assign(t.L, {});
    for (std::size_t w = 0; w < t.W; ++w) {
        const std::size_t idx = t.word_index_map[w];
        if (idx < 1 || idx > text.size()) fail(ErrorKind::AlignmentFailure, "word index " + std::to_string(idx) + " outside text");
        std::vector<double> avg(t.L, 0.0);
        bool complete = true;
        for (std::size_t l = 0; l < t.L && complete; ++l) {
            for (std::size_t p = 0; p < t.P; ++p) {
                const double v = t.at(l, w, p);
                if (std::isnan(v)) {
                    complete = false;
                    break;
                }
                avg[l] += v;
            }
            avg[l] /= static_cast<double>(t.P);
        }
        if (!complete) {
            ++wi.dropped_words;
            continue;
        }
        const auto& rec = text.words[idx - 1];
        wi.word_index.push_back(idx);
        wi.pos_tag.push_back(rec.pos_tag);
        wi.pos_class.push_back(rec.pos_class);
        wi.scrambled.push_back(text.genre == Genre::scrambled);
        for (std::size_t l = 0; l < t.L; ++l) wi.values[l].push_back(avg[l]);
    }
    detail::group_importance(wi);
    return wi;
}

/// Concatenates word axes across texts; scrambled texts stay out of the POS groups.
inline WordImportance pool_importance(const std::vector<WordImportance>& parts) {
    if (parts.empty()) fail(ErrorKind::EmptyTensor, "nothing to pool");
    WordImportance out;
    out.L = parts.front().L;
    out.P = parts.front().P;
    out.values.assign(out.L, {});
    for (const auto& wi : parts) {
        if (wi.L != out.L) fail(ErrorKind::ConfigError, "importance tables differ in layer count");
        out.word_index.insert(out.word_index.end(), wi.word_index.begin(), wi.word_index.end());
        out.pos_tag.insert(out.pos_tag.end(), wi.pos_tag.begin(), wi.pos_tag.end());
        out.pos_class.insert(out.pos_class.end(), wi.pos_class.begin(), wi.pos_class.end());
        out.scrambled.insert(out.scrambled.end(), wi.scrambled.begin(), wi.scrambled.end());
        for (std::size_t l = 0; l < out.L; ++l) out.values[l].insert(out.values[l].end(), wi.values[l].begin(), wi.values[l].end());
        out.dropped_words += wi.dropped_words;
    }
    detail::group_importance(out);
    return out;
}

enum class DominanceMode { per_position, position_averaged };

constexpr std::string_view to_string(DominanceMode m) {
    return m == DominanceMode::per_position ? "per_position" : "position_averaged";
}

struct DominanceTable {
    DominanceMode mode = DominanceMode::per_position;
    std::size_t L = 0;
    std::size_t P = 0;
    // per_position: [word][position]; position_averaged: [word][0]. 0 marks an unpopulated cell.
    std::vector<std::vector<int>> dominant;
    std::vector<std::size_t> word_index;
    // per_position: [position][layer] percentages and counts.
    LayerTable by_position;
    std::vector<std::vector<std::size_t>> by_position_counts;
    // position_averaged: percentage of words per layer, overall and per POS tag.
    std::vector<double> overall;
    std::vector<std::size_t> overall_counts;
    std::map<std::string, std::vector<double>> by_pos;
    std::map<std::string, std::vector<std::size_t>> by_pos_counts;
};

/// 1-based layer with the largest value; ties go to the lowest layer.
inline int argmax_layer(const std::vector<double>& values) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < values.size(); ++l)
        if (values[l] > values[best]) best = l;
    return static_cast<int>(best + 1);
}

namespace detail {

inline std::vector<double> percentages(const std::vector<std::size_t>& counts) {
    std::size_t total = 0;
    for (auto c : counts) total += c;
    std::vector<double> out(counts.size(), 0.0);
    if (total == 0) return out;
    for (std::size_t i = 0; i < counts.size(); ++i) out[i] = 100.0 * static_cast<double>(counts[i]) / static_cast<double>(total);
    return out;
}

inline void finish_dominance(DominanceTable& d) {
    d.by_position.clear();
    for (const auto& c : d.by_position_counts) d.by_position.push_back(percentages(c));
    d.overall = percentages(d.overall_counts);
    d.by_pos.clear();
    for (const auto& [tag, c] : d.by_pos_counts) d.by_pos[tag] = percentages(c);
}

}  // namespace detail

/// Dominant layer per (word, position) or per position-averaged word. With a
/// text, the position-averaged table is also broken down by POS tag.
inline DominanceTable layer_dominance(const ConductanceTensor& t, DominanceMode mode, const CorpusText* text = nullptr) {
    if (t.W == 0) fail(ErrorKind::EmptyTensor, "tensor has no retained words");
    if (t.L < 2) fail(ErrorKind::ConfigError, "layer dominance needs at least two layers");
    DominanceTable d;
    d.mode = mode;
    d.L = t.L;
    d.P = t.P;
    d.word_index = t.word_index_map;
    d.by_position_counts.assign(mode == DominanceMode::per_position ? t.P : 0, std::vector<std::size_t>(t.L, 0));
    d.overall_counts.assign(t.L, 0);
    std::vector<double> column(t.L);
    for (std::size_t w = 0; w < t.W; ++w) {
        if (mode == DominanceMode::per_position) {
            std::vector<int> row(t.P, 0);
            for (std::size_t p = 0; p < t.P; ++p) {
                bool complete = true;
                for (std::size_t l = 0; l < t.L; ++l) {
                    column[l] = t.at(l, w, p);
                    complete = complete && !std::isnan(column[l]);
                }
                if (!complete) continue;
                row[p] = argmax_layer(column);
                ++d.by_position_counts[p][static_cast<std::size_t>(row[p] - 1)];
                ++d.overall_counts[static_cast<std::size_t>(row[p] - 1)];
            }
            d.dominant.push_back(std::move(row));
        } else {
            bool complete = true;
            for (std::size_t l = 0; l < t.L; ++l) {
                double s = 0;
                for (std::size_t p = 0; p < t.P; ++p) s += t.at(l, w, p);
                column[l] = s / static_cast<double>(t.P);
                complete = complete && !std::isnan(column[l]);
            }
            const int best = complete ? argmax_layer(column) : 0;
            d.dominant.push_back({best});
            if (!best) continue;
            ++d.overall_counts[static_cast<std::size_t>(best - 1)];
            if (text && text->genre != Genre::scrambled) {
                const std::size_t idx = t.word_index_map[w];
                if (idx < 1 || idx > text->size()) fail(ErrorKind::AlignmentFailure, "word index outside text");
                auto& c = d.by_pos_counts[text->words[idx - 1].pos_tag];
                c.resize(t.L, 0);
                ++c[static_cast<std::size_t>(best - 1)];
            }
        }
    }
    detail::finish_dominance(d);
    return d;
}

/// Sums the underlying counts of tables with equal mode and shape.
inline DominanceTable pool_dominance(const std::vector<DominanceTable>& tables) {
    if (tables.empty()) fail(ErrorKind::EmptyTensor, "no dominance tables to pool");
    DominanceTable out = tables.front();
    for (std::size_t k = 1; k < tables.size(); ++k) {
        const auto& d = tables[k];
        if (d.mode != out.mode || d.L != out.L || d.P != out.P) fail(ErrorKind::ConfigError, "dominance tables differ in shape");
        for (std::size_t p = 0; p < out.by_position_counts.size(); ++p)
            for (std::size_t l = 0; l < out.L; ++l) out.by_position_counts[p][l] += d.by_position_counts[p][l];
        for (std::size_t l = 0; l < out.L; ++l) out.overall_counts[l] += d.overall_counts[l];
        for (const auto& [tag, c] : d.by_pos_counts) {
            auto& dst = out.by_pos_counts[tag];
            dst.resize(out.L, 0);
            for (std::size_t l = 0; l < out.L; ++l) dst[l] += c[l];
        }
        out.dominant.insert(out.dominant.end(), d.dominant.begin(), d.dominant.end());
        out.word_index.insert(out.word_index.end(), d.word_index.begin(), d.word_index.end());
    }
    detail::finish_dominance(out);
    return out;
}

struct DominanceConsistency {
    std::vector<ExcludedPair> pairs;  // every unordered pair, in order
    std::vector<double> r;            // per pair, NaN when excluded
    double mean_r = std::nan("");
    std::size_t n_pairs = 0;
};

/// Pearson r between flattened (position x layer) percentage matrices.
inline DominanceConsistency dominance_consistency(const std::vector<DominanceTable>& tables) {
    if (tables.size() < 2) fail(ErrorKind::ConfigError, "consistency needs at least two tables");
    for (const auto& d : tables) {
        if (d.mode != DominanceMode::per_position) fail(ErrorKind::ConfigError, "dominance consistency uses per-position tables");
        if (d.L != tables.front().L || d.P != tables.front().P) fail(ErrorKind::ConfigError, "dominance tables differ in shape");
    }
    auto flat = [](const DominanceTable& d) {
        std::vector<double> v;
        for (const auto& row : d.by_position) v.insert(v.end(), row.begin(), row.end());
        return v;
    };
    DominanceConsistency out;
    double sum = 0;
    for (std::size_t a = 0; a < tables.size(); ++a) {
        for (std::size_t b = a + 1; b < tables.size(); ++b) {
            const auto r = stats::pearson(flat(tables[a]), flat(tables[b]));
            out.pairs.push_back({0, a, b});
            out.r.push_back(r ? *r : std::nan(""));
            if (r) {
                sum += *r;
                ++out.n_pairs;
            }
        }
    }
    if (out.n_pairs) out.mean_r = sum / static_cast<double>(out.n_pairs);
    return out;
}

}  // namespace poscond
