#pragma once

#include <string>
#include <vector>

#include "dwformer/autodiff.hpp"
#include "dwformer/window.hpp"

namespace dwformer {

// Normalization scope of an importance vector: softmaxed over the whole
// token sequence, within each window span, or across window summary tokens.
enum class ImportanceScope { global, per_window, over_windows };

struct ImportanceScores {
    Var values; // nonnegative, rank-1
    ImportanceScope scope = ImportanceScope::global;

    int64_t len() const { return values.size(); }
};

// Importance of each position in [begin, end]: average the post-softmax
// attention over heads, restrict rows and columns to the span, sum over the
// row index (attention each column receives), then softmax over the span.
inline ImportanceScores ic(const Var& attn, int64_t begin, int64_t end,
                           ImportanceScope scope = ImportanceScope::global) {
    if (attn.rank() != 3 || attn.dim(1) != attn.dim(2))
        throw ShapeError("ic: attention must be [H,T,T], got " + shape_str(attn.shape()));
    const int64_t T = attn.dim(1);
    if (begin < 0 || end < begin || end >= T)
        throw ContractError("ic: span [" + std::to_string(begin) + "," + std::to_string(end) +
                            "] invalid for T=" + std::to_string(T));
    Var avg = mean_over_axis(attn, 0);                    // [T,T]
    Var block = slice(slice(avg, 0, begin, end + 1), 1, begin, end + 1);
    Var received = sum_over_axis(block, 0);               // [len]
    return {softmax(received), scope};
}

// Places per-window score vectors at their token positions, chronologically.
// The spans must be an exact ordered cover; each window's scores keep their
// own normalization (sum 1 within the window).
inline ImportanceScores concat_window_importance(const std::vector<ImportanceScores>& per_window,
                                                 const WindowPartition& part) {
    part.validate();
    if (per_window.size() != part.spans.size())
        throw PartitionError("concat_window_importance: " + std::to_string(per_window.size()) +
                             " score vectors for " + std::to_string(part.spans.size()) + " windows");
    std::vector<Var> parts;
    parts.reserve(per_window.size());
    for (size_t k = 0; k < per_window.size(); ++k) {
        if (per_window[k].len() != part.spans[k].len())
            throw PartitionError("concat_window_importance: window " + std::to_string(k) +
                                 " has " + std::to_string(per_window[k].len()) + " scores for " +
                                 std::to_string(part.spans[k].len()) + " tokens");
        parts.push_back(per_window[k].values);
    }
    return {concat(parts, 0), ImportanceScope::per_window};
}

// Copies each window's score to every token position of that window.
inline Var upsample(const ImportanceScores& win_scores, const WindowPartition& part) {
    if (win_scores.len() != part.window_count())
        throw PartitionError("upsample: " + std::to_string(win_scores.len()) + " scores for " +
                             std::to_string(part.window_count()) + " windows");
    return upsample_spans(win_scores.values, part.lengths());
}

// impt_{(a+1)1} = Softmax(impt_a2 * Upsampling(impt_a3)), softmaxed over the
// whole valid token range.
inline ImportanceScores update_importance(const ImportanceScores& impt_a2,
                                          const ImportanceScores& impt_a3,
                                          const WindowPartition& part) {
    if (impt_a2.scope != ImportanceScope::per_window)
        throw ContractError("update_importance: impt_a2 must be per-window scoped");
    if (impt_a3.scope != ImportanceScope::over_windows)
        throw ContractError("update_importance: impt_a3 must be over-windows scoped");
    if (impt_a2.len() != part.valid_len)
        throw ContractError("update_importance: impt_a2 length " + std::to_string(impt_a2.len()) +
                            " vs valid_len " + std::to_string(part.valid_len));
    Var up = upsample(impt_a3, part);
    return {softmax(mul(impt_a2.values, up)), ImportanceScope::global};
}

} // namespace dwformer
