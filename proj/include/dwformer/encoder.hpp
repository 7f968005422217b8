#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dwformer/autodiff.hpp"

namespace dwformer {

using ParamList = std::vector<std::pair<std::string, Var>>;

// One transformer encoder layer's weights: Q/K/V/output projections, the
// two-layer FFN, and the two layer-norm affine pairs.
struct EncoderLayerParams {
    int64_t dim = 0;
    int64_t heads = 0;
    int64_t ffn_mult = 4;
    Var wq, bq, wk, bk, wv, bv, wo, bo;
    Var w1, b1, w2, b2;
    Var ln1_g, ln1_b, ln2_g, ln2_b;

    static EncoderLayerParams init(int64_t dim, int64_t heads, int64_t ffn_mult,
                                   std::mt19937_64& rng) {
        if (dim % heads != 0)
            throw ConfigError("encoder: dim " + std::to_string(dim) + " not divisible by " +
                              std::to_string(heads) + " heads");
        EncoderLayerParams p;
        p.dim = dim;
        p.heads = heads;
        p.ffn_mult = ffn_mult;
        const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
        auto w = [&](int64_t r, int64_t c) {
            return Var::param(Tensor::uniform({r, c}, -bound, bound, rng));
        };
        auto zeros = [&](int64_t n) { return Var::param(Tensor::zeros({n})); };
        p.wq = w(dim, dim); p.bq = zeros(dim);
        p.wk = w(dim, dim); p.bk = zeros(dim);
        p.wv = w(dim, dim); p.bv = zeros(dim);
        p.wo = w(dim, dim); p.bo = zeros(dim);
        const int64_t hidden = ffn_mult * dim;
        p.w1 = w(dim, hidden); p.b1 = zeros(hidden);
        p.w2 = Var::param(Tensor::uniform({hidden, dim}, -bound, bound, rng));
        p.b2 = zeros(dim);
        p.ln1_g = Var::param(Tensor::full({dim}, 1.0)); p.ln1_b = zeros(dim);
        p.ln2_g = Var::param(Tensor::full({dim}, 1.0)); p.ln2_b = zeros(dim);
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) const {
        out.emplace_back(prefix + ".wq", wq); out.emplace_back(prefix + ".bq", bq);
        out.emplace_back(prefix + ".wk", wk); out.emplace_back(prefix + ".bk", bk);
        out.emplace_back(prefix + ".wv", wv); out.emplace_back(prefix + ".bv", bv);
        out.emplace_back(prefix + ".wo", wo); out.emplace_back(prefix + ".bo", bo);
        out.emplace_back(prefix + ".w1", w1); out.emplace_back(prefix + ".b1", b1);
        out.emplace_back(prefix + ".w2", w2); out.emplace_back(prefix + ".b2", b2);
        out.emplace_back(prefix + ".ln1_g", ln1_g); out.emplace_back(prefix + ".ln1_b", ln1_b);
        out.emplace_back(prefix + ".ln2_g", ln2_g); out.emplace_back(prefix + ".ln2_b", ln2_b);
    }
};

struct EncoderOutput {
    Var hidden; // [T, D]
    Var attn;   // [H, T, T], post-softmax
};

// Forward context for stochastic pieces; rng == nullptr means inference.
struct ForwardCtx {
    double dropout = 0.0;
    std::mt19937_64* rng = nullptr;
    bool active() const { return dropout > 0.0 && rng != nullptr; }
};

// Scaled dot-product attention over all heads with an optional additive
// {0,-inf} mask shared across heads. Returns the output-projected hidden
// state (no residual/norm) and the post-softmax attention weights.
inline EncoderOutput multi_head_attention(const EncoderLayerParams& p, const Var& x,
                                          const Var* mask = nullptr) {
    if (x.rank() != 2 || x.dim(1) != p.dim)
        throw ShapeError("multi_head_attention: input " + shape_str(x.shape()) + " vs dim " +
                         std::to_string(p.dim));
    const int64_t dh = p.dim / p.heads;
    Var q = split_heads(add(matmul(x, p.wq), p.bq), p.heads); // [H,T,dh]
    Var k = split_heads(add(matmul(x, p.wk), p.bk), p.heads);
    Var v = split_heads(add(matmul(x, p.wv), p.bv), p.heads);
    Var scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh))); // [H,T,T]
    Var attn = mask ? masked_softmax(scores, *mask) : softmax(scores);
    Var ctx = merge_heads(matmul(attn, v)); // [T,D]
    Var hidden = add(matmul(ctx, p.wo), p.bo);
    return {hidden, attn};
}

// Post-norm transformer encoder layer:
//   y   = LN(x + MHA(x))
//   out = LN(y + FFN(y)),  FFN = Linear -> ReLU -> Linear
inline EncoderOutput encoder_layer(const EncoderLayerParams& p, const Var& x,
                                   const Var* mask = nullptr, ForwardCtx ctx = {}) {
    EncoderOutput mha = multi_head_attention(p, x, mask);
    Var h = mha.hidden;
    if (ctx.active()) h = dropout(h, ctx.dropout, *ctx.rng);
    Var y = layer_norm(add(x, h), p.ln1_g, p.ln1_b);
    Var f = add(matmul(relu(add(matmul(y, p.w1), p.b1)), p.w2), p.b2);
    if (ctx.active()) f = dropout(f, ctx.dropout, *ctx.rng);
    Var out = layer_norm(add(y, f), p.ln2_g, p.ln2_b);
    return {out, mha.attn};
}

// Sinusoidal position table, added to inputs only when configured on.
inline Tensor sinusoidal_encoding(int64_t T, int64_t D) {
    Tensor pe({T, D});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t i = 0; i < D; ++i) {
            const double angle =
                static_cast<double>(t) /
                std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / static_cast<double>(D));
            pe.at({t, i}) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

} // namespace dwformer
