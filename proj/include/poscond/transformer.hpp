// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "poscond/error.hpp"
#include "poscond/random.hpp"

namespace poscond {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct TransformerConfig {
    int vocab_size = 0;
    int context_length = 0;
    int embedding_dim = 0;
    int head_count = 0;
    int layer_count = 0;
    double layer_norm_eps = 1e-5;

    int head_dim() const { return embedding_dim / head_count; }
};

struct BlockWeights {
    RowVector ln1_gain, ln1_bias;
    Matrix qkv_weight;  // D x 3D, applied as x * W
    RowVector qkv_bias;
    Matrix attn_out_weight;  // D x D
    RowVector attn_out_bias;
    RowVector ln2_gain, ln2_bias;
    Matrix fc_weight;  // D x 4D
    RowVector fc_bias;
    Matrix fc_out_weight;  // 4D x D
    RowVector fc_out_bias;
};

struct TransformerWeights {
    Matrix token_embedding;     // V x D, tied with the output projection
    Matrix position_embedding;  // context x D
    std::vector<BlockWeights> blocks;
    RowVector final_ln_gain, final_ln_bias;
};

/// Quantities needed to evaluate the layer-conductance integrand at one
/// point x' + alpha (x - x') of the interpolation path. Index k of each
/// vector is layer k+1, i.e. the residual stream after block k+1.
struct PathPoint {
    double alpha = 0.0;
    double target_logit = 0.0;
    std::vector<Matrix> activations;  // h_l, T x D
    std::vector<Matrix> gradients;    // d f / d h_l
    std::vector<Matrix> tangents;     // d h_l / d alpha along (x - x')
    Matrix input_gradient;            // d f / d x
};

namespace detail {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

inline double gelu_grad(double u) {
    const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

/// GELU value and slope sharing one tanh evaluation.
inline void gelu_with_slope(const Matrix& pre, Matrix& value, Matrix& slope) {
    value.resize(pre.rows(), pre.cols());
    slope.resize(pre.rows(), pre.cols());
    for (Eigen::Index i = 0; i < pre.size(); ++i) {
        const double u = pre.data()[i];
        const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
        value.data()[i] = 0.5 * u * (1.0 + t);
        slope.data()[i] = 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
    }
}

struct LayerNormCache {
    Matrix normalized;    // (x - mean) / std
    Eigen::VectorXd rstd; // per row
};

inline Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& bias, double eps,
                         LayerNormCache& cache) {
    const Eigen::Index d = x.cols();
    cache.normalized.resize(x.rows(), d);
    cache.rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + eps);
        cache.rstd(r) = rstd;
        cache.normalized.row(r) = (x.row(r).array() - mean) * rstd;
    }
    Matrix y = cache.normalized.array().rowwise() * gain.array();
    y.rowwise() += bias;
    return y;
}

/// The normalization Jacobian is symmetric, so the same map serves as the
/// tangent (applied to dx) and the adjoint (applied to gain * dy).
inline Matrix layer_norm_jacobian(const LayerNormCache& cache, const Matrix& v) {
    Matrix out(v.rows(), v.cols());
    const double d = static_cast<double>(v.cols());
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double mean_v = v.row(r).sum() / d;
        const double mean_xv = cache.normalized.row(r).dot(v.row(r)) / d;
        out.row(r) = (v.row(r).array() - mean_v - cache.normalized.row(r).array() * mean_xv) * cache.rstd(r);
    }
    return out;
}

struct BlockCache {
    LayerNormCache ln1, ln2;
    Matrix qkv;
    std::vector<Matrix> probs;  // per head, T x T, causal
    Matrix fc_pre;              // pre-activation of the MLP
    Matrix fc_slope;            // GELU derivative at fc_pre
};

}  // namespace detail

/// GPT-2 style decoder: learned positions, pre-norm blocks, tanh GELU,
/// tied output embedding. All arithmetic is in double precision.
class Transformer {
public:
    Transformer(TransformerConfig config, TransformerWeights weights)
        : config_(config), weights_(std::move(weights)) {
        validate();
    }

    /// Fixed-seed Gaussian weights; `scale` is the standard deviation of
    /// every weight matrix, gains are 1 + scale/4 noise.
    static Transformer random(const TransformerConfig& config, std::uint64_t seed, double scale) {
        std::mt19937_64 rng(seed);
        auto mat = [&](int r, int c, double s) {
            Matrix m(r, c);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * standard_normal(rng);
            return m;
        };
        auto vec = [&](int n, double offset, double s) {
            RowVector v(n);
            for (int i = 0; i < n; ++i) v(i) = offset + s * standard_normal(rng);
            return v;
        };
        const int d = config.embedding_dim;
        TransformerWeights w;
        w.token_embedding = mat(config.vocab_size, d, scale);
        w.position_embedding = mat(config.context_length, d, scale);
        for (int l = 0; l < config.layer_count; ++l) {
            BlockWeights b;
            b.ln1_gain = vec(d, 1.0, scale / 4);
            b.ln1_bias = vec(d, 0.0, scale / 4);
            b.qkv_weight = mat(d, 3 * d, scale);
            b.qkv_bias = vec(3 * d, 0.0, scale / 4);
            b.attn_out_weight = mat(d, d, scale);
            b.attn_out_bias = vec(d, 0.0, scale / 4);
            b.ln2_gain = vec(d, 1.0, scale / 4);
            b.ln2_bias = vec(d, 0.0, scale / 4);
            b.fc_weight = mat(d, 4 * d, scale);
            b.fc_bias = vec(4 * d, 0.0, scale / 4);
            b.fc_out_weight = mat(4 * d, d, scale);
            b.fc_out_bias = vec(d, 0.0, scale / 4);
            w.blocks.push_back(std::move(b));
        }
        w.final_ln_gain = vec(d, 1.0, scale / 4);
        w.final_ln_bias = vec(d, 0.0, scale / 4);
        return Transformer(config, std::move(w));
    }

    const TransformerConfig& config() const { return config_; }
    const TransformerWeights& weights() const { return weights_; }
    int layer_count() const { return config_.layer_count; }

    /// Token-embedding rows (positions are added inside the model).
    Matrix embed(std::span<const int> ids) const {
        Matrix x(static_cast<Eigen::Index>(ids.size()), config_.embedding_dim);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= config_.vocab_size) {
                fail(ErrorKind::BackendFailure, "token id " + std::to_string(ids[i]) + " out of range");
            }
            x.row(static_cast<Eigen::Index>(i)) = weights_.token_embedding.row(ids[i]);
        }
        return x;
    }

    /// Residual stream after every block for input embeddings `x`.
    std::vector<Matrix> hidden_states(const Matrix& x) const {
        check_length(x.rows());
        std::vector<Matrix> out;
        Matrix h = x + weights_.position_embedding.topRows(x.rows());
        for (const auto& block : weights_.blocks) {
            detail::BlockCache cache;
            h = block_forward(block, h, nullptr, nullptr, cache);
            out.push_back(h);
        }
        return out;
    }

    /// Logits for the token following the last position.
    RowVector next_token_logits(const Matrix& x) const {
        const auto hs = hidden_states(x);
        detail::LayerNormCache cache;
        const Matrix z = detail::layer_norm(hs.back().bottomRows(1), weights_.final_ln_gain,
                                            weights_.final_ln_bias, config_.layer_norm_eps, cache);
        return z * weights_.token_embedding.transpose();
    }

    /// Target logit when the residual stream after block `layer` (1-based) is `hidden`.
    double logit_from_layer(int layer, const Matrix& hidden, int target) const {
        Matrix h = hidden;
        for (int l = layer; l < config_.layer_count; ++l) {
            detail::BlockCache cache;
            h = block_forward(weights_.blocks[static_cast<std::size_t>(l)], h, nullptr, nullptr, cache);
        }
        detail::LayerNormCache cache;
        const Matrix z = detail::layer_norm(h.bottomRows(1), weights_.final_ln_gain, weights_.final_ln_bias,
                                            config_.layer_norm_eps, cache);
        return z.row(0).dot(weights_.token_embedding.row(target));
    }

    /// Forward pass at x' + alpha (x - x') with forward-mode tangents along
    /// (x - x') and a reverse pass from the target logit.
    /// With `with_tangents` false the tangents are left empty.
    PathPoint path_point(const Matrix& input, const Matrix& baseline, int target, double alpha,
                         bool with_tangents = true) const {
        check_length(input.rows());
        if (target < 0 || target >= config_.vocab_size) fail(ErrorKind::BackendFailure, "target id out of range");
        const Matrix direction = input - baseline;
        const Eigen::Index rows = input.rows();

        PathPoint pp;
        pp.alpha = alpha;
        std::vector<detail::BlockCache> caches(weights_.blocks.size());
        Matrix h = baseline + alpha * direction + weights_.position_embedding.topRows(rows);
        Matrix dh = direction;
        for (std::size_t l = 0; l < weights_.blocks.size(); ++l) {
            if (with_tangents) {
                Matrix tangent_out;
                h = block_forward(weights_.blocks[l], h, &dh, &tangent_out, caches[l]);
                dh = std::move(tangent_out);
                pp.tangents.push_back(dh);
            } else {
                h = block_forward(weights_.blocks[l], h, nullptr, nullptr, caches[l]);
            }
            pp.activations.push_back(h);
        }

        detail::LayerNormCache final_cache;
        const Matrix z = detail::layer_norm(h.bottomRows(1), weights_.final_ln_gain, weights_.final_ln_bias,
                                            config_.layer_norm_eps, final_cache);
        pp.target_logit = z.row(0).dot(weights_.token_embedding.row(target));

        Matrix grad = Matrix::Zero(rows, config_.embedding_dim);
        const Matrix dz = weights_.token_embedding.row(target).cwiseProduct(weights_.final_ln_gain);
        grad.bottomRows(1) = detail::layer_norm_jacobian(final_cache, dz);

        pp.gradients.resize(weights_.blocks.size());
        for (std::size_t l = weights_.blocks.size(); l-- > 0;) {
            pp.gradients[l] = grad;
            grad = block_backward(weights_.blocks[l], caches[l], grad);
        }
        pp.input_gradient = std::move(grad);
        return pp;
    }

private:
    void validate() const {
        const auto& c = config_;
        if (c.layer_count < 1 || c.embedding_dim < 1 || c.head_count < 1 || c.embedding_dim % c.head_count != 0 ||
            c.vocab_size < 1 || c.context_length < 1) {
            fail(ErrorKind::BackendFailure, "invalid transformer configuration");
        }
        if (weights_.blocks.size() != static_cast<std::size_t>(c.layer_count) ||
            weights_.token_embedding.rows() != c.vocab_size || weights_.token_embedding.cols() != c.embedding_dim ||
            weights_.position_embedding.rows() < c.context_length) {
            fail(ErrorKind::BackendFailure, "weights do not match transformer configuration");
        }
    }

    void check_length(Eigen::Index rows) const {
        if (rows < 1 || rows > config_.context_length) {
            fail(ErrorKind::BackendFailure, "sequence length " + std::to_string(rows) + " outside 1.." +
                                                std::to_string(config_.context_length));
        }
    }

    /// One block; when `tangent_in` is set the matching tangent is written
    /// to `tangent_out`.
    Matrix block_forward(const BlockWeights& b, const Matrix& x, const Matrix* tangent_in, Matrix* tangent_out,
                         detail::BlockCache& cache) const {
        const int d = config_.embedding_dim;
        const int heads = config_.head_count;
        const int hd = config_.head_dim();
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        const Eigen::Index t = x.rows();

        const Matrix a = detail::layer_norm(x, b.ln1_gain, b.ln1_bias, config_.layer_norm_eps, cache.ln1);
        cache.qkv.noalias() = a * b.qkv_weight;
        cache.qkv.rowwise() += b.qkv_bias;

        Matrix da, dqkv;
        if (tangent_in) {
            da = detail::layer_norm_jacobian(cache.ln1, *tangent_in).array().rowwise() * b.ln1_gain.array();
            dqkv.noalias() = da * b.qkv_weight;
        }

        Matrix attn(t, d);
        Matrix dattn;
        if (tangent_in) dattn.resize(t, d);
        cache.probs.assign(static_cast<std::size_t>(heads), Matrix());
        for (int h = 0; h < heads; ++h) {
            const auto q = cache.qkv.middleCols(h * hd, hd);
            const auto k = cache.qkv.middleCols(d + h * hd, hd);
            const auto v = cache.qkv.middleCols(2 * d + h * hd, hd);
            Matrix s = (q * k.transpose()) * scale;
            Matrix& p = cache.probs[static_cast<std::size_t>(h)];
            p = Matrix::Zero(t, t);
            for (Eigen::Index i = 0; i < t; ++i) {
                const double m = s.row(i).head(i + 1).maxCoeff();
                double total = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    p(i, j) = std::exp(s(i, j) - m);
                    total += p(i, j);
                }
                p.row(i).head(i + 1) /= total;
            }
            attn.middleCols(h * hd, hd).noalias() = p * v;
            if (tangent_in) {
                const auto dq = dqkv.middleCols(h * hd, hd);
                const auto dk = dqkv.middleCols(d + h * hd, hd);
                const auto dv = dqkv.middleCols(2 * d + h * hd, hd);
                Matrix ds = (dq * k.transpose() + q * dk.transpose()) * scale;
                Matrix dp = Matrix::Zero(t, t);
                for (Eigen::Index i = 0; i < t; ++i) {
                    double inner = 0.0;
                    for (Eigen::Index j = 0; j <= i; ++j) inner += p(i, j) * ds(i, j);
                    for (Eigen::Index j = 0; j <= i; ++j) dp(i, j) = p(i, j) * (ds(i, j) - inner);
                }
                dattn.middleCols(h * hd, hd).noalias() = dp * v + p * dv;
            }
        }
        Matrix x1 = x + attn * b.attn_out_weight;
        x1.rowwise() += b.attn_out_bias;

        const Matrix m = detail::layer_norm(x1, b.ln2_gain, b.ln2_bias, config_.layer_norm_eps, cache.ln2);
        cache.fc_pre.noalias() = m * b.fc_weight;
        cache.fc_pre.rowwise() += b.fc_bias;
        Matrix act;
        detail::gelu_with_slope(cache.fc_pre, act, cache.fc_slope);
        Matrix out = x1 + act * b.fc_out_weight;
        out.rowwise() += b.fc_out_bias;

        if (tangent_in) {
            const Matrix dx1 = *tangent_in + dattn * b.attn_out_weight;
            const Matrix dm = detail::layer_norm_jacobian(cache.ln2, dx1).array().rowwise() * b.ln2_gain.array();
            const Matrix dpre = dm * b.fc_weight;
            const Matrix dact = dpre.cwiseProduct(cache.fc_slope);
            *tangent_out = dx1 + dact * b.fc_out_weight;
        }
        return out;
    }

    /// Adjoint of block_forward with respect to its input.
    Matrix block_backward(const BlockWeights& b, const detail::BlockCache& cache, const Matrix& grad_out) const {
        const int d = config_.embedding_dim;
        const int heads = config_.head_count;
        const int hd = config_.head_dim();
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        const Eigen::Index t = grad_out.rows();

        // MLP branch.
        Matrix dact = grad_out * b.fc_out_weight.transpose();
        dact.array() *= cache.fc_slope.array();
        const Matrix dm = dact * b.fc_weight.transpose();
        Matrix dx1 = grad_out + detail::layer_norm_jacobian(cache.ln2, dm.array().rowwise() * b.ln2_gain.array());

        // Attention branch.
        const Matrix dattn = dx1 * b.attn_out_weight.transpose();
        Matrix dqkv(t, 3 * d);
        for (int h = 0; h < heads; ++h) {
            const auto q = cache.qkv.middleCols(h * hd, hd);
            const auto k = cache.qkv.middleCols(d + h * hd, hd);
            const auto v = cache.qkv.middleCols(2 * d + h * hd, hd);
            const Matrix& p = cache.probs[static_cast<std::size_t>(h)];
            const auto dout = dattn.middleCols(h * hd, hd);
            const Matrix dp = dout * v.transpose();
            dqkv.middleCols(2 * d + h * hd, hd).noalias() = p.transpose() * dout;
            Matrix ds = Matrix::Zero(t, t);
            for (Eigen::Index i = 0; i < t; ++i) {
                double inner = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) inner += p(i, j) * dp(i, j);
                for (Eigen::Index j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - inner) * scale;
            }
            dqkv.middleCols(h * hd, hd).noalias() = ds * k;
            dqkv.middleCols(d + h * hd, hd).noalias() = ds.transpose() * q;
        }
        const Matrix da = dqkv * b.qkv_weight.transpose();
        return dx1 + detail::layer_norm_jacobian(cache.ln1, da.array().rowwise() * b.ln1_gain.array());
    }

    TransformerConfig config_;
    TransformerWeights weights_;
};

}  // namespace poscond
