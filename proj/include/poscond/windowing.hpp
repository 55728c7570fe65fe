// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "poscond/attribution.hpp"
#include "poscond/corpus.hpp"
#include "poscond/error.hpp"
#include "poscond/model_backend.hpp"

namespace poscond {

struct WindowSpec {
    std::size_t window_id = 0;  // 0-based, in start order
    std::size_t start = 0;      // 1-based text index of the first word
};

struct WindowPlan {
    std::size_t P = 0;
    std::size_t stride = 1;
    std::size_t word_count = 0;
    std::vector<WindowSpec> windows;
    std::vector<std::size_t> retained_words;  // 1-based text indices, ascending

    /// Tensor word-axis slot of a text index, if retained.
    std::optional<std::size_t> retained_slot(std::size_t index) const {
        if (retained_words.empty() || index < retained_words.front() || index > retained_words.back()) return std::nullopt;
        return index - retained_words.front();
    }
};

inline WindowPlan plan_windows(std::size_t word_count, std::size_t P, std::size_t stride = 1) {
    if (P < 2) fail(ErrorKind::ConfigError, "window length must be at least 2");
    if (stride != 1) fail(ErrorKind::ConfigError, "only stride 1 is supported");
    if (word_count < P) {
        fail(ErrorKind::TextTooShort,
             std::to_string(word_count) + " words is shorter than window length " + std::to_string(P));
    }
    WindowPlan plan;
    plan.P = P;
    plan.stride = stride;
    plan.word_count = word_count;
    for (std::size_t t = 1; t + P - 1 <= word_count; ++t) plan.windows.push_back({t - 1, t});
    for (std::size_t i = P; i + P <= word_count + 1; ++i) plan.retained_words.push_back(i);
    return plan;
}

inline WindowPlan plan_windows(const CorpusText& text, std::size_t P, std::size_t stride = 1) {
    return plan_windows(text.size(), P, stride);
}

struct SkippedWindow {
    std::size_t window_id = 0;
    std::size_t start = 0;
    ErrorKind kind = ErrorKind::BackendFailure;
    std::string message;
};

/// Dense L x W x P array, row-major. Cells of skipped windows hold NaN.
struct ConductanceTensor {
    std::size_t L = 0;
    std::size_t W = 0;
    std::size_t P = 0;
    std::vector<double> data;
    std::vector<std::size_t> word_index_map;  // word axis -> 1-based text index
    nlohmann::json manifest = nlohmann::json::object();

    std::size_t offset(std::size_t l, std::size_t w, std::size_t p) const { return (l * W + w) * P + p; }
    double& at(std::size_t l, std::size_t w, std::size_t p) { return data[offset(l, w, p)]; }
    double at(std::size_t l, std::size_t w, std::size_t p) const { return data[offset(l, w, p)]; }

    static ConductanceTensor filled(std::size_t L, std::size_t W, std::size_t P, double value) {
        ConductanceTensor t;
        t.L = L;
        t.W = W;
        t.P = P;
        t.data.assign(L * W * P, value);
        for (std::size_t w = 0; w < W; ++w) t.word_index_map.push_back(w + 1);
        return t;
    }
};

inline nlohmann::json to_json(const SkippedWindow& s) {
    return {{"window_id", s.window_id}, {"start", s.start}, {"error", std::string(to_string(s.kind))},
            {"message", s.message}};
}

struct BuildOptions {
    unsigned workers = 1;
    double max_failure_rate = 0.10;
    std::vector<nlohmann::json>* debug = nullptr;  // receives per-window dumps in window order
};

namespace detail {

struct WindowOutcome {
    std::optional<WordConductance> words;
    std::optional<SkippedWindow> skipped;
    nlohmann::json debug;
};

}  // namespace detail

/// Attributes every window of `plan` and scatters word values of retained
/// words into the tensor. Windows run on a bounded pool; assembly happens
/// afterwards in window order, so the result does not depend on scheduling.
inline ConductanceTensor build_tensor(const WindowPlan& plan, const CorpusText& text, const LanguageModel& model,
                                      const AttributionConfig& cfg, const BuildOptions& opts = {}) {
    if (plan.word_count != text.size()) fail(ErrorKind::ConfigError, "window plan was made for a different text");
    const std::size_t L = static_cast<std::size_t>(model.layer_count());
    const std::size_t P = plan.P;
    const std::size_t n_windows = plan.windows.size();
    const auto surfaces = text.surfaces();

    std::vector<detail::WindowOutcome> outcomes(n_windows);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k = next++; k < n_windows; k = next++) {
            const auto& spec = plan.windows[k];
            const std::vector<std::string> words(surfaces.begin() + static_cast<std::ptrdiff_t>(spec.start - 1),
                                                 surfaces.begin() + static_cast<std::ptrdiff_t>(spec.start - 1 + P));
            auto& out = outcomes[k];
            try {
                auto a = attribute_window(model, words, cfg);
                if (opts.debug) out.debug = window_debug_json(spec.window_id, a);
                out.words = std::move(a.words);
            } catch (const Error& e) {
                out.skipped = SkippedWindow{spec.window_id, spec.start, e.kind(), e.what()};
            } catch (const std::exception& e) {
                out.skipped = SkippedWindow{spec.window_id, spec.start, ErrorKind::BackendFailure, e.what()};
            }
        }
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(opts.workers, static_cast<unsigned>(std::max<std::size_t>(n_windows, 1))));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < workers; ++i) pool.emplace_back(work);
    }

    ConductanceTensor t;
    t.L = L;
    t.P = P;
    t.W = plan.retained_words.size();
    t.word_index_map = plan.retained_words;
    t.data.assign(L * t.W * P, std::numeric_limits<double>::quiet_NaN());

    nlohmann::json skipped = nlohmann::json::array();
    nlohmann::json special = nlohmann::json::array();
    std::size_t negative_denominators = 0;
    std::size_t failures = 0;
    for (std::size_t k = 0; k < n_windows; ++k) {
        auto& out = outcomes[k];
        if (opts.debug && !out.debug.is_null()) opts.debug->push_back(std::move(out.debug));
        if (out.skipped) {
            ++failures;
            skipped.push_back(to_json(*out.skipped));
            continue;
        }
        const auto& wc = *out.words;
        for (double d : wc.denominators) negative_denominators += d < 0 ? 1 : 0;
        if (cfg.prepend_bos) special.push_back({{"window_id", plan.windows[k].window_id}, {"mass", wc.special_mass}});
        for (std::size_t p = 0; p < P; ++p) {
            const auto slot = plan.retained_slot(plan.windows[k].start + p);
            if (!slot) continue;
            for (std::size_t l = 0; l < L; ++l) {
                t.at(l, *slot, p) = wc.values(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(p));
            }
        }
    }
    if (n_windows > 0 && static_cast<double>(failures) > opts.max_failure_rate * static_cast<double>(n_windows)) {
        const auto& first = *std::find_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.skipped.has_value(); });
        fail(ErrorKind::TooManyWindowFailures, std::to_string(failures) + " of " + std::to_string(n_windows) +
                                                   " windows failed; first: " + first.skipped->message);
    }

    const auto h = model.handle();
    t.manifest = {
        {"model_id", h.model_id},
        {"tokenizer_id", h.tokenizer_id},
        {"text_id", text.text_id},
        {"genre", std::string(to_string(text.genre))},
        {"source_digest", text.source_digest},
        {"word_count", plan.word_count},
        {"window_count", n_windows},
        {"stride", plan.stride},
        {"baseline", std::string(to_string(cfg.baseline))},
        {"quadrature", {{"rule", std::string(to_string(cfg.quadrature.rule))}, {"steps", cfg.quadrature.steps}}},
        {"normalization", std::string(to_string(cfg.normalization))},
        {"eps_norm", cfg.eps_norm},
        {"prepend_bos", cfg.prepend_bos},
        {"skipped_windows", skipped},
        {"negative_denominators", negative_denominators},
    };
    if (text.scramble_seed) t.manifest["scramble_seed"] = *text.scramble_seed;
    if (cfg.prepend_bos) t.manifest["special_token_mass"] = special;
    return t;
}

}  // namespace poscond
