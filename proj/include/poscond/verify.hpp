// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

// Self-check on the built-in tiny model, run by `poscond verify`.

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "poscond/attribution.hpp"
#include "poscond/model_backend.hpp"
#include "poscond/tensor_io.hpp"
#include "poscond/windowing.hpp"

namespace poscond {

struct CheckOutcome {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline double rel_max_error(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

inline TokenizedWindow verify_window(const LanguageModel& m, const std::vector<std::string>& words, BaselinePolicy policy) {
    auto w = m.tokenize_window(words);
    w.baseline = m.make_baseline(w, policy);
    return w;
}

/// Stieltjes sum with trapezoid-averaged gradients; needs no tangents.
inline Matrix stieltjes_conductance(const LanguageModel& m, const TokenizedWindow& w, const PredictionTarget& t, int steps) {
    const auto& net = m.transformer();
    Matrix out = Matrix::Zero(m.layer_count(), static_cast<Eigen::Index>(w.token_count()));
    PathPoint prev = net.path_point(w.embeddings, w.baseline, t.token_id, 0.0, false);
    for (int i = 1; i <= steps; ++i) {
        PathPoint next = net.path_point(w.embeddings, w.baseline, t.token_id, static_cast<double>(i) / steps, false);
        for (int l = 0; l < m.layer_count(); ++l) {
            const Matrix g = 0.5 * (prev.gradients[l] + next.gradients[l]);
            out.row(l) += g.cwiseProduct(next.activations[l] - prev.activations[l]).rowwise().sum().transpose();
        }
        prev = std::move(next);
    }
    return out;
}

}  // namespace detail

inline std::vector<CheckOutcome> run_verification() {
    const LanguageModel model = LanguageModel::tiny_reference();
    std::vector<CheckOutcome> out;
    auto check = [&](const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
        try {
            auto [ok, detail] = body();
            out.push_back({name, ok, detail});
        } catch (const std::exception& e) {
            out.push_back({name, false, e.what()});
        }
    };
    const auto w = detail::verify_window(model, {"it", "was", "late"}, BaselinePolicy::pad_token_embedding);
    const auto target = model.predict_next(w);

    check("path endpoints match plain forward passes", [&] {
        double worst = 0;
        const auto at_x = model.transformer().hidden_states(w.embeddings);
        const auto at_b = model.transformer().hidden_states(w.baseline);
        const auto p1 = model.evaluate_path_point(w, target, 1.0);
        const auto p0 = model.evaluate_path_point(w, target, 0.0);
        for (int l = 0; l < model.layer_count(); ++l) {
            worst = std::max({worst, detail::rel_max_error(p1.activations[l], at_x[l]),
                              detail::rel_max_error(p0.activations[l], at_b[l])});
        }
        return std::pair{worst < 1e-6, "max relative error " + detail::sci(worst)};
    });

    check("layer gradients match central differences", [&] {
        const double h = 1e-4;
        double worst = 0;
        for (double alpha : {0.0, 0.5, 1.0}) {
            const auto pp = model.evaluate_path_point(w, target, alpha);
            for (int layer = 1; layer <= model.layer_count(); ++layer) {
                const Matrix& hidden = pp.activations[layer - 1];
                Matrix fd(hidden.rows(), hidden.cols());
                for (Eigen::Index i = 0; i < hidden.size(); ++i) {
                    Matrix plus = hidden, minus = hidden;
                    plus.data()[i] += h;
                    minus.data()[i] -= h;
                    fd.data()[i] = (model.transformer().logit_from_layer(layer, plus, target.token_id) -
                                    model.transformer().logit_from_layer(layer, minus, target.token_id)) / (2 * h);
                }
                worst = std::max(worst, detail::rel_max_error(pp.gradients[layer - 1], fd));
            }
        }
        return std::pair{worst < 1e-5, "max relative error " + detail::sci(worst)};
    });

    check("64-step trapezoid matches a 20000-step path sum", [&] {
        const auto small = detail::verify_window(model, {"a", "b"}, BaselinePolicy::pad_token_embedding);
        const auto t = model.predict_next(small);
        const auto raw = compute_raw_conductance(model, small, t, {QuadratureRule::riemann_trapezoid, 64});
        const Matrix ref = detail::stieltjes_conductance(model, small, t, 20000);
        const double dev = (raw.values - ref).cwiseAbs().maxCoeff();
        return std::pair{dev < 1e-3, "max abs deviation " + detail::sci(dev)};
    });

    check("per-layer conductance sums to f(x) - f(x') at 256 steps", [&] {
        const auto raw = compute_raw_conductance(model, w, target, {QuadratureRule::riemann_trapezoid, 256});
        const double delta = model.target_logit_at(w, target, 1.0) - model.target_logit_at(w, target, 0.0);
        double worst = 0;
        for (Eigen::Index l = 0; l < raw.values.rows(); ++l) worst = std::max(worst, std::abs(raw.values.row(l).sum() - delta) / std::abs(delta));
        return std::pair{worst < 0.02, "max relative error " + detail::sci(worst)};
    });

    check("normalized rows and word sums equal one", [&] {
        std::mt19937_64 rng(7);
        const std::vector<std::string> vocab = {"the", "cat", "sat", "on", "a", "mat", "and", "looked", "around", "quietly"};
        double worst = 0;
        AttributionConfig cfg;
        cfg.quadrature = {QuadratureRule::gauss_legendre, 16};
        for (int k = 0; k < 5; ++k) {
            std::vector<std::string> words;
            for (int i = 0; i < 4; ++i) words.push_back(vocab[uniform_below(rng, vocab.size())]);
            const auto a = attribute_window(model, words, cfg);
            for (Eigen::Index l = 0; l < a.words.values.rows(); ++l) {
                worst = std::max({worst, std::abs(a.normalized.values.row(l).sum() - 1.0), std::abs(a.words.values.row(l).sum() - 1.0)});
            }
        }
        return std::pair{worst < 1e-9, "max deviation " + detail::sci(worst)};
    });

    check("window plan keeps words at every position exactly once", [&] {
        const auto plan = plan_windows(23, 5);
        std::vector<std::vector<int>> seen(24, std::vector<int>(6, 0));
        for (const auto& win : plan.windows)
            for (std::size_t p = 1; p <= 5; ++p) ++seen[win.start + p - 1][p];
        bool ok = plan.windows.size() == 19 && plan.retained_words.size() == 15;
        for (std::size_t i : plan.retained_words)
            for (std::size_t p = 1; p <= 5; ++p) ok = ok && seen[i][p] == 1;
        return std::pair{ok, std::to_string(plan.windows.size()) + " windows, " + std::to_string(plan.retained_words.size()) + " retained"};
    });

    check("tensor file round trip is bit exact", [&] {
        auto t = ConductanceTensor::filled(2, 3, 4, 0.0);
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = std::sin(static_cast<double>(i) + 0.1) / 3.0;
        t.manifest = {{"model_id", "tiny-reference"}};
        const auto back = deserialize_tensor(serialize_tensor(t));
        const bool ok = back.data == t.data && back.manifest == t.manifest && back.word_index_map == t.word_index_map;
        return std::pair{ok, std::string(ok ? "identical" : "differs")};
    });
    return out;
}

}  // namespace poscond
