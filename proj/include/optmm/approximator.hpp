#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "optmm/matrix.hpp"
#include "optmm/rng.hpp"

namespace optmm {

struct LayerShape {
    std::size_t in = 0;
    std::size_t out = 0;
};

/// Normalization applied to (t, q [, S]) before it reaches a network.
struct EncodingConfig {
    double t_scale = 1.0;   // trading horizon
    double q_scale = 5.0;   // inventory units per unit input
    bool include_price = false;
    double s_scale = 100.0; // initial underlying price

    std::size_t dim(std::size_t num_options) const {
        return 1 + num_options + (include_price ? 1 : 0);
    }
};

inline void encode_state(double t, const IntMatrix& q, double S, const EncodingConfig& cfg,
                         std::span<double> out) {
    if (out.size() != cfg.dim(q.size())) throw std::invalid_argument("encode_state: bad buffer size");
    out[0] = t / cfg.t_scale;
    for (std::size_t k = 0; k < q.size(); ++k)
        out[1 + k] = static_cast<double>(q.at_flat(k)) / cfg.q_scale;
    if (cfg.include_price) out[1 + q.size()] = S / cfg.s_scale;
}

/// Plain stochastic-gradient update with optional gradient-norm clipping.
/// Non-finite gradient components signal training divergence.
inline void sgd_step(std::vector<double>& params, std::span<const double> grad, double lr,
                     double clip_norm = 0.0) {
    if (params.size() != grad.size()) throw std::invalid_argument("sgd_step: shape mismatch");
    if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: lr must be nonnegative");
    double norm_sq = 0.0;
    for (double g : grad) {
        if (!std::isfinite(g)) throw std::runtime_error("sgd_step: non-finite gradient");
        norm_sq += g * g;
    }
    double scale = lr;
    if (clip_norm > 0.0) {
        const double norm = std::sqrt(norm_sq);
        if (norm > clip_norm) scale = lr * clip_norm / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= scale * grad[i];
}

/// Dense feed-forward approximator with optional residual blocks and
/// hand-written reverse-mode differentiation.
///
/// With residual_blocks == R > 0 the layer list must be
///   [stem] + R x [block first, block second] + [head]
/// and a block computes h + W2 relu(W1 h + b1) + b2 on matching widths.
/// With R == 0 the layers form a plain chain with ReLU between layers and a
/// linear final layer.
class Approximator {
public:
    Approximator(std::vector<LayerShape> layers, std::size_t residual_blocks)
        : layers_(std::move(layers)), blocks_(residual_blocks) {
        if (layers_.empty()) throw std::invalid_argument("approximator: no layers");
        if (blocks_ > 0 && layers_.size() != 2 + 2 * blocks_)
            throw std::invalid_argument("approximator: residual topology needs 2 + 2R layers");
        for (std::size_t k = 0; k + 1 < layers_.size(); ++k)
            if (layers_[k].out != layers_[k + 1].in)
                throw std::invalid_argument("approximator: layer widths do not chain");
        if (blocks_ > 0) {
            const std::size_t w = layers_[0].out;
            for (std::size_t k = 1; k + 1 < layers_.size(); ++k)
                if (layers_[k].in != w || layers_[k].out != w)
                    throw std::invalid_argument("approximator: residual blocks need matching widths");
        }
        offsets_.reserve(layers_.size());
        std::size_t off = 0;
        for (const auto& l : layers_) {
            offsets_.push_back(off);
            off += l.in * l.out + l.out;
        }
        params_.assign(off, 0.0);
    }

    /// Stem -> R residual blocks -> linear head.
    static Approximator make(std::size_t input_dim, std::size_t hidden_width,
                             std::size_t residual_blocks, std::size_t out_dim) {
        std::vector<LayerShape> layers;
        layers.push_back({input_dim, hidden_width});
        for (std::size_t b = 0; b < residual_blocks; ++b) {
            layers.push_back({hidden_width, hidden_width});
            layers.push_back({hidden_width, hidden_width});
        }
        layers.push_back({hidden_width, out_dim});
        return Approximator(std::move(layers), residual_blocks);
    }

    /// Glorot-uniform weights, zero biases; the head stays all-zero so a
    /// fresh value net evaluates to exactly 0 everywhere.
    void init_params(RngStream& rng) {
        for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
            const auto& l = layers_[k];
            const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
            double* w = params_.data() + offsets_[k];
            for (std::size_t i = 0; i < l.in * l.out; ++i)
                w[i] = (2.0 * rng.uniform01() - 1.0) * bound;
            // biases already zero
        }
        const std::size_t last = layers_.size() - 1;
        const auto& l = layers_[last];
        std::fill_n(params_.data() + offsets_[last], l.in * l.out + l.out, 0.0);
    }

    std::size_t param_count() const { return params_.size(); }
    std::size_t input_dim() const { return layers_.front().in; }
    std::size_t out_dim() const { return layers_.back().out; }
    std::size_t residual_blocks() const { return blocks_; }
    const std::vector<LayerShape>& layer_shapes() const { return layers_; }
    const std::vector<std::size_t>& offsets() const { return offsets_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    void forward(std::span<const double> x, std::span<double> out) const {
        if (x.size() != input_dim()) throw std::invalid_argument("forward: input size mismatch");
        if (out.size() != out_dim()) throw std::invalid_argument("forward: output size mismatch");
        Tape& tape = scratch();
        run_forward(x, tape);
        std::copy(tape.output.begin(), tape.output.end(), out.begin());
    }

    std::vector<double> forward(std::span<const double> x) const {
        std::vector<double> out(out_dim());
        forward(x, out);
        return out;
    }

    double forward_scalar(std::span<const double> x) const {
        if (out_dim() != 1) throw std::invalid_argument("forward_scalar: out_dim != 1");
        double out;
        forward(x, std::span<double>(&out, 1));
        return out;
    }

    /// Accumulates scale * d<upstream, f(x)>/dparams into grad; when
    /// input_grad is non-empty also accumulates the input-side gradient.
    void accumulate_grad(std::span<const double> x, std::span<const double> upstream,
                         std::span<double> grad, double scale = 1.0,
                         std::span<double> input_grad = {}) const {
        if (x.size() != input_dim()) throw std::invalid_argument("grad: input size mismatch");
        if (upstream.size() != out_dim()) throw std::invalid_argument("grad: upstream size mismatch");
        if (grad.size() != params_.size()) throw std::invalid_argument("grad: gradient size mismatch");
        if (!input_grad.empty() && input_grad.size() != input_dim())
            throw std::invalid_argument("grad: input_grad size mismatch");
        Tape& tape = scratch();
        run_forward(x, tape);
        run_backward(x, upstream, tape, grad, scale, input_grad);
    }

private:
    struct Tape {
        // pre[k]: pre-activation output of layer k (post-activation for plain
        // chains); hidden[b]: input of block b; block_act[b]: relu of the
        // block's first affine
        std::vector<std::vector<double>> pre;
        std::vector<std::vector<double>> hidden;
        std::vector<std::vector<double>> block_act;
        std::vector<double> output;
        std::vector<double> g_cur, g_tmp, g_block;
    };

    Tape& scratch() const {
        thread_local Tape tape;
        const std::size_t L = layers_.size();
        if (tape.pre.size() != L) tape.pre.resize(L);
        for (std::size_t k = 0; k < L; ++k) tape.pre[k].resize(layers_[k].out);
        tape.hidden.resize(blocks_ + 1);
        tape.block_act.resize(blocks_);
        if (blocks_ > 0) {
            for (auto& h : tape.hidden) h.resize(layers_[0].out);
            for (auto& a : tape.block_act) a.resize(layers_[0].out);
        }
        tape.output.resize(out_dim());
        return tape;
    }

    void affine(std::size_t k, const double* in, double* out) const {
        const auto& l = layers_[k];
        const double* w = params_.data() + offsets_[k];
        const double* b = w + l.in * l.out;
        for (std::size_t o = 0; o < l.out; ++o) {
            double acc = b[o];
            const double* row = w + o * l.in;
            for (std::size_t i = 0; i < l.in; ++i) acc += row[i] * in[i];
            out[o] = acc;
        }
    }

    // g_in += W^T g_out; weight/bias grads += scale * g_out (x) in
    void affine_backward(std::size_t k, const double* in, const double* g_out, double* g_in,
                         std::span<double> grad, double scale) const {
        const auto& l = layers_[k];
        double* gw = grad.data() + offsets_[k];
        double* gb = gw + l.in * l.out;
        const double* w = params_.data() + offsets_[k];
        for (std::size_t o = 0; o < l.out; ++o) {
            const double g = g_out[o];
            gb[o] += scale * g;
            double* grow = gw + o * l.in;
            const double* wrow = w + o * l.in;
            const double sg = scale * g;
            for (std::size_t i = 0; i < l.in; ++i) {
                grow[i] += sg * in[i];
                if (g_in) g_in[i] += wrow[i] * g;
            }
        }
    }

    void run_forward(std::span<const double> x, Tape& tape) const {
        const std::size_t L = layers_.size();
        if (blocks_ == 0) {
            const double* cur = x.data();
            for (std::size_t k = 0; k < L; ++k) {
                affine(k, cur, tape.pre[k].data());
                if (k + 1 < L)
                    for (auto& v : tape.pre[k]) v = std::max(v, 0.0);
                cur = tape.pre[k].data();
            }
            tape.output = tape.pre[L - 1];
            return;
        }
        affine(0, x.data(), tape.pre[0].data());
        auto& h0 = tape.hidden[0];
        for (std::size_t i = 0; i < h0.size(); ++i) h0[i] = std::max(tape.pre[0][i], 0.0);
        for (std::size_t b = 0; b < blocks_; ++b) {
            const std::size_t k1 = 1 + 2 * b, k2 = k1 + 1;
            affine(k1, tape.hidden[b].data(), tape.pre[k1].data());
            auto& relu_u = tape.block_act[b];
            for (std::size_t i = 0; i < relu_u.size(); ++i)
                relu_u[i] = std::max(tape.pre[k1][i], 0.0);
            affine(k2, relu_u.data(), tape.pre[k2].data());
            auto& next = tape.hidden[b + 1];
            for (std::size_t i = 0; i < next.size(); ++i)
                next[i] = tape.hidden[b][i] + tape.pre[k2][i];
        }
        affine(L - 1, tape.hidden[blocks_].data(), tape.output.data());
        tape.pre[L - 1] = tape.output;
    }

    void run_backward(std::span<const double> x, std::span<const double> upstream, Tape& tape,
                      std::span<double> grad, double scale, std::span<double> input_grad) const {
        const std::size_t L = layers_.size();
        if (blocks_ == 0) {
            // recompute layer inputs: pre[k] already holds post-activation for k < L-1
            auto& g = tape.g_cur;
            auto& gnext = tape.g_tmp;
            g.assign(upstream.begin(), upstream.end());
            for (std::size_t k = L; k-- > 0;) {
                const double* in = k == 0 ? x.data() : tape.pre[k - 1].data();
                gnext.assign(layers_[k].in, 0.0);
                affine_backward(k, in, g.data(), gnext.data(), grad, scale);
                if (k > 0) {
                    // relu mask of the previous layer's output
                    for (std::size_t i = 0; i < gnext.size(); ++i)
                        if (tape.pre[k - 1][i] <= 0.0) gnext[i] = 0.0;
                }
                g = gnext;
            }
            if (!input_grad.empty())
                for (std::size_t i = 0; i < g.size(); ++i) input_grad[i] += scale * g[i];
            return;
        }
        auto& g = tape.g_cur;
        auto& gnext = tape.g_tmp;
        g.assign(layers_[0].out, 0.0);
        affine_backward(L - 1, tape.hidden[blocks_].data(), upstream.data(), g.data(), grad, scale);
        for (std::size_t b = blocks_; b-- > 0;) {
            const std::size_t k1 = 1 + 2 * b, k2 = k1 + 1;
            gnext.assign(layers_[k2].in, 0.0);
            affine_backward(k2, tape.block_act[b].data(), g.data(), gnext.data(), grad, scale);
            for (std::size_t i = 0; i < gnext.size(); ++i)
                if (tape.pre[k1][i] <= 0.0) gnext[i] = 0.0;
            auto& g_block = tape.g_block;
            g_block.assign(layers_[k1].in, 0.0);
            affine_backward(k1, tape.hidden[b].data(), gnext.data(), g_block.data(), grad, scale);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += g_block[i];  // skip connection
        }
        for (std::size_t i = 0; i < g.size(); ++i)
            if (tape.pre[0][i] <= 0.0) g[i] = 0.0;
        gnext.assign(layers_[0].in, 0.0);
        affine_backward(0, x.data(), g.data(), gnext.data(), grad, scale);
        if (!input_grad.empty())
            for (std::size_t i = 0; i < gnext.size(); ++i) input_grad[i] += scale * gnext[i];
    }

    std::vector<LayerShape> layers_;
    std::size_t blocks_;
    std::vector<std::size_t> offsets_;
    std::vector<double> params_;
};

enum class OptimizerKind { sgd, adam };

/// Single-writer parameter updater; adam state lives here.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, double clip_norm = 0.0)
        : kind_(kind), lr_(lr), clip_norm_(clip_norm) {}

    void step(std::vector<double>& params, std::span<const double> grad) {
        if (kind_ == OptimizerKind::sgd) {
            sgd_step(params, grad, lr_, clip_norm_);
            return;
        }
        if (m_.size() != params.size()) {
            m_.assign(params.size(), 0.0);
            v_.assign(params.size(), 0.0);
        }
        ++t_;
        double norm_sq = 0.0;
        for (double g : grad) {
            if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient");
            norm_sq += g * g;
        }
        double gscale = 1.0;
        if (clip_norm_ > 0.0) {
            const double norm = std::sqrt(norm_sq);
            if (norm > clip_norm_) gscale = clip_norm_ / norm;
        }
        const double b1t = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double b2t = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grad[i] * gscale;
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
            params[i] -= lr_ * (m_[i] / b1t) / (std::sqrt(v_[i] / b2t) + eps_);
        }
    }

    double lr() const { return lr_; }

private:
    OptimizerKind kind_;
    double lr_;
    double clip_norm_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<double> m_, v_;
    long t_ = 0;
};

}  // namespace optmm
