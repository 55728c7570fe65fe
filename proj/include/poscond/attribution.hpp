// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <concepts>
#include <string>
#include <string_view>
#include <vector>

#include "poscond/error.hpp"
#include "poscond/model_backend.hpp"
#include "poscond/quadrature.hpp"

namespace poscond {

/// Anything that can evaluate the conductance integrand along the path
/// from a window's baseline to its embeddings.
template <typename M>
concept PathModel = requires(const M& m, const TokenizedWindow& w, const PredictionTarget& t, double alpha) {
    { m.layer_count() } -> std::convertible_to<int>;
    { m.evaluate_path_point(w, t, alpha) } -> std::same_as<PathPoint>;
};

struct QuadratureConfig {
    QuadratureRule rule = QuadratureRule::gauss_legendre;
    int steps = 50;
};

enum class NormalizationMode {
    signed_sum,    // divide by sum_s Cond(s)
    absolute_sum,  // divide by sum_s |Cond(s)|
};

constexpr std::string_view to_string(NormalizationMode m) {
    return m == NormalizationMode::signed_sum ? "signed_sum" : "absolute_sum";
}

inline NormalizationMode normalization_mode_from_string(std::string_view s) {
    if (s == "signed_sum") return NormalizationMode::signed_sum;
    if (s == "absolute_sum") return NormalizationMode::absolute_sum;
    fail(ErrorKind::ConfigError, "unknown normalization mode '" + std::string(s) + "'");
}

/// Per-layer, per-token conductance: rows are layers 1..L, columns tokens.
struct RawConductance {
    Matrix values;
    int quadrature_steps = 0;
    QuadratureRule quadrature_rule = QuadratureRule::gauss_legendre;
};

struct NormalizedConductance {
    Matrix values;                      // L x T, each row sums to 1 (signed mode)
    std::vector<double> denominators;   // per layer
};

struct WordConductance {
    Matrix values;                      // L x P
    std::vector<double> denominators;   // per layer, carried from normalization
    std::vector<double> special_mass;   // per layer, normalized mass on special tokens
};

/// Layer conductance of each residual-stream position: for layer l and
/// token s, the path integral of sum_d (df/dh_{l,s,d}) (dh_{l,s,d}/dalpha)
/// from the baseline to the input. Summed over s it telescopes to
/// f(x) - f(x') for every layer.
template <PathModel Model>
RawConductance compute_raw_conductance(const Model& model, const TokenizedWindow& window,
                                       const PredictionTarget& target, const QuadratureConfig& quad) {
    const auto layers = static_cast<Eigen::Index>(model.layer_count());
    const auto tokens = static_cast<Eigen::Index>(window.token_count());
    RawConductance raw;
    raw.values = Matrix::Zero(layers, tokens);
    raw.quadrature_steps = quad.steps;
    raw.quadrature_rule = quad.rule;
    for (const auto& node : quadrature_nodes(quad.rule, quad.steps)) {
        const PathPoint pp = model.evaluate_path_point(window, target, node.alpha);
        for (Eigen::Index l = 0; l < layers; ++l) {
            const auto& g = pp.gradients[static_cast<std::size_t>(l)];
            const auto& dh = pp.tangents[static_cast<std::size_t>(l)];
            raw.values.row(l) += node.weight * g.cwiseProduct(dh).rowwise().sum().transpose();
        }
    }
    if (!raw.values.allFinite()) fail(ErrorKind::NonFiniteGradient, "path evaluation produced NaN or Inf");
    return raw;
}

inline NormalizedConductance normalize(const RawConductance& raw, NormalizationMode mode = NormalizationMode::signed_sum,
                                       double eps = 1e-8) {
    NormalizedConductance out;
    out.values.resize(raw.values.rows(), raw.values.cols());
    for (Eigen::Index l = 0; l < raw.values.rows(); ++l) {
        const double denom = mode == NormalizationMode::signed_sum ? raw.values.row(l).sum()
                                                                   : raw.values.row(l).cwiseAbs().sum();
        if (!(std::abs(denom) >= eps)) {
            fail(ErrorKind::DegenerateDenominator,
                 "layer " + std::to_string(l + 1) + " conductance sums to " + std::to_string(denom));
        }
        out.values.row(l) = raw.values.row(l) / denom;
        out.denominators.push_back(denom);
    }
    return out;
}

/// Sums normalized token values over each word's span.
inline WordConductance aggregate_words(const NormalizedConductance& normalized, const std::vector<TokenSpan>& spans,
                                       const std::vector<std::size_t>& special_tokens = {}) {
    const auto tokens = static_cast<std::size_t>(normalized.values.cols());
    WordConductance out;
    out.values = Matrix::Zero(normalized.values.rows(), static_cast<Eigen::Index>(spans.size()));
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const auto& sp = spans[i];
        if (sp.begin >= sp.end || sp.end > tokens) {
            fail(ErrorKind::SpanMismatch, "span of word " + std::to_string(i + 1) + " is outside the token range");
        }
        // Left-to-right so a word value is exactly the running sum of its tokens.
        for (Eigen::Index l = 0; l < normalized.values.rows(); ++l) {
            double s = 0.0;
            for (std::size_t t = sp.begin; t < sp.end; ++t) s += normalized.values(l, static_cast<Eigen::Index>(t));
            out.values(l, static_cast<Eigen::Index>(i)) = s;
        }
    }
    out.denominators = normalized.denominators;
    out.special_mass.assign(static_cast<std::size_t>(normalized.values.rows()), 0.0);
    for (std::size_t s : special_tokens) {
        if (s >= tokens) fail(ErrorKind::SpanMismatch, "special token index outside the token range");
        for (Eigen::Index l = 0; l < normalized.values.rows(); ++l) {
            out.special_mass[static_cast<std::size_t>(l)] += normalized.values(l, static_cast<Eigen::Index>(s));
        }
    }
    return out;
}

struct AttributionConfig {
    QuadratureConfig quadrature;
    BaselinePolicy baseline = BaselinePolicy::pad_token_embedding;
    NormalizationMode normalization = NormalizationMode::signed_sum;
    double eps_norm = 1e-8;
    bool prepend_bos = false;
};

struct WindowAttribution {
    TokenizedWindow window;
    PredictionTarget target;
    RawConductance raw;
    NormalizedConductance normalized;
    WordConductance words;
};

/// Full chain for one word window: tokenize, baseline, target, conductance, normalization, word sums.
inline WindowAttribution attribute_window(const LanguageModel& model, const std::vector<std::string>& words,
                                          const AttributionConfig& cfg) {
    WindowAttribution a;
    a.window = model.tokenize_window(words, cfg.prepend_bos);
    a.window.baseline = model.make_baseline(a.window, cfg.baseline);
    a.target = model.predict_next(a.window);
    a.raw = compute_raw_conductance(model, a.window, a.target, cfg.quadrature);
    a.normalized = normalize(a.raw, cfg.normalization, cfg.eps_norm);
    a.words = aggregate_words(a.normalized, a.window.word_spans, a.window.special_tokens);
    return a;
}

/// Debug record for one window: one object per layer.
inline nlohmann::json window_debug_json(std::size_t window_id, const WindowAttribution& a) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index l = 0; l < a.normalized.values.rows(); ++l) {
        std::vector<double> tokens(a.normalized.values.row(l).begin(), a.normalized.values.row(l).end());
        std::vector<double> words(a.words.values.row(l).begin(), a.words.values.row(l).end());
        out.push_back({{"window_id", window_id}, {"layer", l + 1}, {"token_values", tokens}, {"word_values", words}});
    }
    return out;
}

}  // namespace poscond
