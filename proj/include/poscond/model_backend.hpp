// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "poscond/error.hpp"
#include "poscond/safetensors.hpp"
#include "poscond/tokenizer.hpp"
#include "poscond/transformer.hpp"

namespace poscond {

enum class BaselinePolicy {
    zero_embedding,
    pad_token_embedding,
    input_copy,  // x' = x; every attribution is zero (tests only)
};

constexpr std::string_view to_string(BaselinePolicy p) {
    switch (p) {
        case BaselinePolicy::zero_embedding: return "zero_embedding";
        case BaselinePolicy::pad_token_embedding: return "pad_token_embedding";
        case BaselinePolicy::input_copy: return "input_copy";
    }
    return "zero_embedding";
}

inline BaselinePolicy baseline_policy_from_string(std::string_view s) {
    if (s == "zero_embedding") return BaselinePolicy::zero_embedding;
    if (s == "pad_token_embedding") return BaselinePolicy::pad_token_embedding;
    if (s == "input_copy") return BaselinePolicy::input_copy;
    fail(ErrorKind::ConfigError, "unknown baseline policy '" + std::string(s) + "'");
}

struct ModelHandle {
    std::string model_id;
    int layer_count = 0;
    int embedding_dim = 0;
    std::string tokenizer_id;
};

/// Half-open token index range [begin, end) covered by one window word.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool operator==(const TokenSpan&) const = default;
};

struct TokenizedWindow {
    std::vector<int> token_ids;
    std::vector<TokenSpan> word_spans;         // entry i is window position i+1
    std::vector<std::size_t> special_tokens;   // token indices outside every span
    Matrix embeddings;                         // x
    Matrix baseline;                           // x'

    std::size_t token_count() const { return token_ids.size(); }
};

struct PredictionTarget {
    int token_id = 0;
    double logit = 0.0;
};

/// A causal LM seen through the operations conductance needs: word-aligned
/// tokenization, greedy next-token prediction and path evaluations.
class LanguageModel {
public:
    LanguageModel(std::string model_id, std::unique_ptr<Tokenizer> tokenizer, Transformer transformer)
        : model_id_(std::move(model_id)), tokenizer_(std::move(tokenizer)), transformer_(std::move(transformer)) {
        if (tokenizer_->vocab_size() > transformer_.config().vocab_size) {
            fail(ErrorKind::BackendFailure, "tokenizer vocabulary exceeds model vocabulary");
        }
    }

    static constexpr std::uint64_t kTinySeed = 20240607;

    /// Two blocks, two heads, width 16, byte vocabulary, fixed-seed weights.
    /// Weight scale 0.2 keeps the path integrand smooth enough for 64-step
    /// quadrature to land within 1e-3 of the brute-force sum; at 0.5 it does not.
    static LanguageModel tiny_reference() {
        TransformerConfig cfg;
        cfg.vocab_size = 257;
        cfg.context_length = 1024;
        cfg.embedding_dim = 16;
        cfg.head_count = 2;
        cfg.layer_count = 2;
        return LanguageModel("tiny-reference", std::make_unique<ByteTokenizer>(),
                             Transformer::random(cfg, kTinySeed, 0.2));
    }

    /// Loads a Hugging Face style GPT-2 checkpoint directory: config.json,
    /// model.safetensors and vocab.json + merges.txt (or encoder.json + vocab.bpe).
    static LanguageModel from_gpt2_directory(const std::filesystem::path& dir, std::string model_id) {
        namespace fs = std::filesystem;
        auto pick = [&](std::initializer_list<const char*> names) -> std::string {
            for (const char* n : names) {
                if (fs::exists(dir / n)) return (dir / n).string();
            }
            fail(ErrorKind::BackendFailure, "model directory " + dir.string() + " lacks " + *names.begin());
        };
        std::ifstream cf(pick({"config.json"}));
        const auto cj = nlohmann::json::parse(cf);
        TransformerConfig cfg;
        cfg.vocab_size = cj.value("vocab_size", 50257);
        cfg.context_length = cj.value("n_positions", cj.value("n_ctx", 1024));
        cfg.embedding_dim = cj.value("n_embd", 768);
        cfg.head_count = cj.value("n_head", 12);
        cfg.layer_count = cj.value("n_layer", 12);
        cfg.layer_norm_eps = cj.value("layer_norm_epsilon", 1e-5);

        auto tensors = load_safetensors(pick({"model.safetensors"}));
        auto take = [&](const std::string& name, std::int64_t rows, std::int64_t cols) {
            auto it = tensors.find(name);
            if (it == tensors.end()) it = tensors.find("transformer." + name);
            if (it == tensors.end()) fail(ErrorKind::BackendFailure, "checkpoint lacks tensor " + name);
            std::int64_t count = 1;
            for (auto s : it->second.shape) count *= s;
            if (count != rows * cols) fail(ErrorKind::BackendFailure, "unexpected shape for tensor " + name);
            Matrix m = Eigen::Map<const Matrix>(it->second.values.data(), rows, cols);
            tensors.erase(it);
            return m;
        };
        auto take_vec = [&](const std::string& name, std::int64_t n) -> RowVector { return take(name, 1, n); };

        const int d = cfg.embedding_dim;
        TransformerWeights w;
        w.token_embedding = take("wte.weight", cfg.vocab_size, d);
        w.position_embedding = take("wpe.weight", cfg.context_length, d);
        for (int l = 0; l < cfg.layer_count; ++l) {
            const std::string p = "h." + std::to_string(l) + ".";
            BlockWeights b;
            b.ln1_gain = take_vec(p + "ln_1.weight", d);
            b.ln1_bias = take_vec(p + "ln_1.bias", d);
            b.qkv_weight = take(p + "attn.c_attn.weight", d, 3 * d);
            b.qkv_bias = take_vec(p + "attn.c_attn.bias", 3 * d);
            b.attn_out_weight = take(p + "attn.c_proj.weight", d, d);
            b.attn_out_bias = take_vec(p + "attn.c_proj.bias", d);
            b.ln2_gain = take_vec(p + "ln_2.weight", d);
            b.ln2_bias = take_vec(p + "ln_2.bias", d);
            b.fc_weight = take(p + "mlp.c_fc.weight", d, 4 * d);
            b.fc_bias = take_vec(p + "mlp.c_fc.bias", 4 * d);
            b.fc_out_weight = take(p + "mlp.c_proj.weight", 4 * d, d);
            b.fc_out_bias = take_vec(p + "mlp.c_proj.bias", d);
            w.blocks.push_back(std::move(b));
        }
        w.final_ln_gain = take_vec("ln_f.weight", d);
        w.final_ln_bias = take_vec("ln_f.bias", d);

        auto tokenizer = std::make_unique<Gpt2BpeTokenizer>(pick({"vocab.json", "encoder.json"}),
                                                            pick({"merges.txt", "vocab.bpe"}));
        return LanguageModel(std::move(model_id), std::move(tokenizer), Transformer(cfg, std::move(w)));
    }

    ModelHandle handle() const {
        return ModelHandle{model_id_, transformer_.layer_count(), transformer_.config().embedding_dim,
                           tokenizer_->id()};
    }

    int layer_count() const { return transformer_.layer_count(); }
    const Tokenizer& tokenizer() const { return *tokenizer_; }
    const Transformer& transformer() const { return transformer_; }

    /// Tokenizes each word separately (space-prefixed after the first) so
    /// every token belongs to exactly one word. The baseline is left empty.
    TokenizedWindow tokenize_window(const std::vector<std::string>& words, bool prepend_bos = false) const {
        if (words.empty()) fail(ErrorKind::AlignmentFailure, "empty word list");
        TokenizedWindow w;
        if (prepend_bos) {
            const auto bos = tokenizer_->pad_token_id();
            if (!bos) fail(ErrorKind::NoPadToken, "tokenizer " + tokenizer_->id() + " has no end-of-text token");
            w.special_tokens.push_back(0);
            w.token_ids.push_back(*bos);
        }
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (words[i].empty()) fail(ErrorKind::AlignmentFailure, "empty word at window position " + std::to_string(i + 1));
            const std::string piece = (i == 0 ? std::string() : std::string(" ")) + words[i];
            const auto ids = tokenizer_->encode(piece);
            if (ids.empty() || tokenizer_->decode(ids) != piece) {
                fail(ErrorKind::AlignmentFailure, "tokens of word '" + words[i] + "' do not decode back to it");
            }
            const std::size_t begin = w.token_ids.size();
            w.token_ids.insert(w.token_ids.end(), ids.begin(), ids.end());
            w.word_spans.push_back(TokenSpan{begin, w.token_ids.size()});
        }
        w.embeddings = transformer_.embed(w.token_ids);
        return w;
    }

    Matrix make_baseline(const TokenizedWindow& window, BaselinePolicy policy) const {
        switch (policy) {
            case BaselinePolicy::zero_embedding:
                return Matrix::Zero(window.embeddings.rows(), window.embeddings.cols());
            case BaselinePolicy::pad_token_embedding: {
                const auto pad = tokenizer_->pad_token_id();
                if (!pad) fail(ErrorKind::NoPadToken, "tokenizer " + tokenizer_->id() + " defines no padding token");
                Matrix b(window.embeddings.rows(), window.embeddings.cols());
                b.rowwise() = transformer_.weights().token_embedding.row(*pad);
                return b;
            }
            case BaselinePolicy::input_copy:
                return window.embeddings;
        }
        fail(ErrorKind::ConfigError, "unknown baseline policy");
    }

    /// pad_token_embedding when the tokenizer has one, zero_embedding otherwise.
    BaselinePolicy default_baseline_policy() const {
        return tokenizer_->pad_token_id() ? BaselinePolicy::pad_token_embedding : BaselinePolicy::zero_embedding;
    }

    /// Greedy next token after the unperturbed window; ties go to the lowest id.
    PredictionTarget predict_next(const TokenizedWindow& window) const {
        const RowVector logits = transformer_.next_token_logits(window.embeddings);
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < logits.size(); ++i) {
            if (logits(i) > logits(best)) best = i;
        }
        if (!std::isfinite(logits(best))) fail(ErrorKind::BackendFailure, "non-finite logits");
        return PredictionTarget{static_cast<int>(best), logits(best)};
    }

    PathPoint evaluate_path_point(const TokenizedWindow& window, const PredictionTarget& target, double alpha) const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::ConfigError, "alpha outside [0, 1]");
        if (window.baseline.rows() != window.embeddings.rows() || window.baseline.cols() != window.embeddings.cols()) {
            fail(ErrorKind::BackendFailure, "baseline shape does not match the window embeddings");
        }
        PathPoint pp = transformer_.path_point(window.embeddings, window.baseline, target.token_id, alpha);
        if (!std::isfinite(pp.target_logit)) fail(ErrorKind::NonDifferentiableTarget, "target logit is not finite");
        return pp;
    }

    /// f at a single point of the path, without derivatives.
    double target_logit_at(const TokenizedWindow& window, const PredictionTarget& target, double alpha) const {
        const Matrix x = window.baseline + alpha * (window.embeddings - window.baseline);
        return transformer_.next_token_logits(x)(target.token_id);
    }

private:
    std::string model_id_;
    std::unique_ptr<Tokenizer> tokenizer_;
    Transformer transformer_;
};

}  // namespace poscond
