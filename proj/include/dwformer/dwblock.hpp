#pragma once

#include <random>
#include <string>
#include <vector>

#include "dwformer/encoder.hpp"
#include "dwformer/importance.hpp"
#include "dwformer/window.hpp"

namespace dwformer {

// One DWFormer block: a local (intra-window) encoder shared across that
// block's windows and a separate global encoder over window summary tokens.
struct DWBlockParams {
    EncoderLayerParams local;
    EncoderLayerParams global; // acts on [A+B, D] window tokens
    double lambda = 0.85;

    static DWBlockParams init(int64_t dim, int64_t heads, int64_t ffn_mult, double lambda,
                              std::mt19937_64& rng) {
        DWBlockParams p;
        p.local = EncoderLayerParams::init(dim, heads, ffn_mult, rng);
        p.global = EncoderLayerParams::init(dim, heads, ffn_mult, rng);
        p.lambda = lambda;
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) const {
        local.collect(prefix + ".local", out);
        global.collect(prefix + ".global", out);
    }
};

struct DlwtOutput {
    Var x;                 // x_a2, [T, D]
    ImportanceScores impt; // impt_a2, per-window scoped, length T
};

// Intra-window transformer pass: one shared encoder layer under the
// block-diagonal mask, lambda down-weighting of weak spans, and per-window
// importance concatenated in chronological order.
inline DlwtOutput dlwt(const DWBlockParams& p, const Var& x, const WindowPartition& part,
                       ForwardCtx ctx = {}) {
    if (p.lambda <= 0.0 || p.lambda > 1.0)
        throw ContractError("dlwt: lambda must be in (0,1], got " + std::to_string(p.lambda));
    const int64_t T = x.dim(0);
    Var mask{build_mask(part, T)};
    EncoderOutput enc = encoder_layer(p.local, x, &mask, ctx);

    Var scaled = enc.hidden;
    if (p.lambda != 1.0 && part.weak_count() > 0) {
        Tensor weights({T, x.dim(1)});
        for (const Span& s : part.spans) {
            const double w = s.strength == Strength::weak ? p.lambda : 1.0;
            for (int64_t t = s.begin; t <= s.end; ++t)
                for (int64_t d = 0; d < x.dim(1); ++d) weights.at({t, d}) = w;
        }
        scaled = mul(enc.hidden, Var(std::move(weights)));
    }

    std::vector<ImportanceScores> per_window;
    per_window.reserve(part.spans.size());
    for (const Span& s : part.spans)
        per_window.push_back(ic(enc.attn, s.begin, s.end, ImportanceScope::per_window));
    return {scaled, concat_window_importance(per_window, part)};
}

// wt_k = sum over window k of impt_a2[p] * x_a2[p]; one row per window.
inline Var window_weighted_sum(const Var& x, const ImportanceScores& impt,
                               const WindowPartition& part) {
    if (impt.scope != ImportanceScope::per_window)
        throw ContractError("window_weighted_sum: importance must be per-window scoped");
    if (impt.len() != x.dim(0))
        throw ContractError("window_weighted_sum: " + std::to_string(impt.len()) +
                            " scores for " + std::to_string(x.dim(0)) + " tokens");
    Var w2 = reshape(impt.values, {1, impt.len()});
    std::vector<Var> rows;
    rows.reserve(part.spans.size());
    for (const Span& s : part.spans) {
        Var wk = slice(w2, 1, s.begin, s.end + 1);          // [1, len]
        Var xk = slice(x, 0, s.begin, s.end + 1);           // [len, D]
        rows.push_back(matmul(wk, xk));                     // [1, D]
    }
    return concat(rows, 0); // [A+B, D]
}

struct DgwtOutput {
    Var x;                 // [A+B, D]
    ImportanceScores impt; // impt_a3, over-windows scoped
};

// Unmasked encoder over the window tokens plus importance between windows.
inline DgwtOutput dgwt(const DWBlockParams& p, const Var& wt, ForwardCtx ctx = {}) {
    EncoderOutput enc = encoder_layer(p.global, wt, nullptr, ctx);
    const int64_t K = wt.dim(0);
    return {enc.hidden, ic(enc.attn, 0, K - 1, ImportanceScope::over_windows)};
}

struct BlockState {
    Var x;                 // [T, D]
    ImportanceScores impt; // global scoped, length T
};

struct BlockResult {
    BlockState next;
    WindowPartition partition;    // the split this block used
    std::vector<double> saliency; // per-token trace: normalized impt_a2 * up(impt_a3)
};

// Full block: split -> mask -> DLWT -> window weighted sum -> DGWT ->
// upsampled fusion -> importance update. `forced` overrides the dynamic
// split (fixed-window oracle and baselines).
//
// The next block splits on the softmaxed update (impt_next); the traced
// per-token saliency is the softmax argument normalized to sum 1. The
// softmax flattens its [0,1) inputs to a near-uniform vector, which is fine
// for the median split (order is preserved) but useless for inspecting what
// the block considered important.
inline BlockResult block_forward(const DWBlockParams& p, const BlockState& state,
                                 const WindowPartition* forced = nullptr, ForwardCtx ctx = {}) {
    if (state.impt.len() != state.x.dim(0))
        throw ContractError("block_forward: importance length " + std::to_string(state.impt.len()) +
                            " vs " + std::to_string(state.x.dim(0)) + " tokens");
    WindowPartition part =
        forced ? *forced : dynamic_window_split(state.impt.values.value().data);
    part.validate();

    DlwtOutput local = dlwt(p, state.x, part, ctx);
    Var wt = window_weighted_sum(local.x, local.impt, part);
    DgwtOutput global = dgwt(p, wt, ctx);
    Var x_a3 = upsample_spans(global.x, part.lengths());
    Var x_next = add(local.x, x_a3);
    ImportanceScores impt_next = update_importance(local.impt, global.impt, part);

    std::vector<double> saliency(local.impt.values.value().data);
    const Tensor up = upsample(global.impt, part).value();
    double total = 0.0;
    for (size_t t = 0; t < saliency.size(); ++t) {
        saliency[t] *= up.data[t];
        total += saliency[t];
    }
    for (double& v : saliency) v /= total;
    return {{x_next, impt_next}, part, std::move(saliency)};
}

} // namespace dwformer
