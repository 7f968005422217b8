#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dwformer/error.hpp"
#include "dwformer/tensor.hpp"

namespace dwformer {

enum class Strength { strong, weak };

inline const char* strength_name(Strength s) { return s == Strength::strong ? "strong" : "weak"; }

struct Span {
    int64_t begin = 0; // first token
    int64_t end = 0;   // last token, inclusive
    Strength strength = Strength::strong;
    int64_t len() const { return end - begin + 1; }
};

// Ordered, contiguous, exact cover of [0, valid_len) by maximal runs of
// equal strength label.
struct WindowPartition {
    std::vector<Span> spans;
    int64_t valid_len = 0;

    int64_t window_count() const { return static_cast<int64_t>(spans.size()); }

    int64_t strong_count() const {
        int64_t n = 0;
        for (const Span& s : spans) n += s.strength == Strength::strong;
        return n;
    }
    int64_t weak_count() const { return window_count() - strong_count(); }

    std::vector<int64_t> lengths() const {
        std::vector<int64_t> out;
        out.reserve(spans.size());
        for (const Span& s : spans) out.push_back(s.len());
        return out;
    }

    // Span index owning token t.
    int64_t span_of(int64_t t) const {
        for (size_t k = 0; k < spans.size(); ++k)
            if (t >= spans[k].begin && t <= spans[k].end) return static_cast<int64_t>(k);
        throw IndexError("token " + std::to_string(t) + " outside partition of length " +
                         std::to_string(valid_len));
    }

    void validate() const {
        if (spans.empty()) throw PartitionError("partition has no spans");
        if (spans.front().begin != 0)
            throw PartitionError("partition does not start at token 0");
        for (size_t k = 0; k < spans.size(); ++k) {
            if (spans[k].begin > spans[k].end)
                throw PartitionError("span " + std::to_string(k) + " is empty");
            if (k > 0) {
                if (spans[k].begin != spans[k - 1].end + 1)
                    throw PartitionError("spans " + std::to_string(k - 1) + " and " +
                                         std::to_string(k) + " are not contiguous");
                if (spans[k].strength == spans[k - 1].strength)
                    throw PartitionError("adjacent spans " + std::to_string(k - 1) + " and " +
                                         std::to_string(k) + " share strength " +
                                         strength_name(spans[k].strength));
            }
        }
        if (spans.back().end != valid_len - 1)
            throw PartitionError("partition covers [0," + std::to_string(spans.back().end + 1) +
                                 ") but valid_len is " + std::to_string(valid_len));
    }
};

// Median of the values; even counts average the two middle order statistics.
inline double median(std::vector<double> values) {
    if (values.empty()) throw ContractError("median of empty vector");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Labels each token strong iff its score is strictly above the median, then
// merges maximal runs of equal label into spans. When nothing lands above
// the median (uniform scores, or the upper half all tied at the maximum) the
// whole sequence becomes one strong window.
inline WindowPartition dynamic_window_split(const std::vector<double>& scores) {
    if (scores.empty()) throw ContractError("dynamic_window_split: no scores");
    const double thresh = median(scores);
    const int64_t T = static_cast<int64_t>(scores.size());
    std::vector<Strength> label(scores.size());
    bool any_strong = false;
    for (size_t i = 0; i < scores.size(); ++i) {
        label[i] = scores[i] > thresh ? Strength::strong : Strength::weak;
        any_strong |= label[i] == Strength::strong;
    }
    WindowPartition part;
    part.valid_len = T;
    if (!any_strong) {
        part.spans.push_back({0, T - 1, Strength::strong});
        return part;
    }
    int64_t begin = 0;
    for (int64_t t = 1; t <= T; ++t) {
        if (t == T || label[static_cast<size_t>(t)] != label[static_cast<size_t>(begin)]) {
            part.spans.push_back({begin, t - 1, label[static_cast<size_t>(begin)]});
            begin = t;
        }
    }
    return part;
}

// Equal windows of `window_len` tokens (last one may be shorter), used by the
// fixed-window baseline and the reduction oracles. Strength labels alternate
// only to satisfy the partition invariant; callers pair this with lambda = 1
// so the labels carry no weight.
inline WindowPartition fixed_window_partition(int64_t valid_len, int64_t window_len) {
    if (valid_len < 1 || window_len < 1)
        throw ContractError("fixed_window_partition: lengths must be positive");
    WindowPartition part;
    part.valid_len = valid_len;
    Strength s = Strength::strong;
    for (int64_t b = 0; b < valid_len; b += window_len) {
        part.spans.push_back({b, std::min(b + window_len, valid_len) - 1, s});
        s = s == Strength::strong ? Strength::weak : Strength::strong;
    }
    return part;
}

// Block-diagonal additive mask: 0 where i and j share a span, -inf elsewhere.
// Rows/cols at or beyond the partition (padding) see only themselves.
inline Tensor build_mask(const WindowPartition& part, int64_t T) {
    part.validate();
    if (part.valid_len > T)
        throw PartitionError("build_mask: partition of length " + std::to_string(part.valid_len) +
                             " does not fit T=" + std::to_string(T));
    const double neg_inf = -std::numeric_limits<double>::infinity();
    Tensor mask = Tensor::full({T, T}, neg_inf);
    for (const Span& s : part.spans)
        for (int64_t i = s.begin; i <= s.end; ++i)
            for (int64_t j = s.begin; j <= s.end; ++j) mask.at({i, j}) = 0.0;
    for (int64_t i = part.valid_len; i < T; ++i) mask.at({i, i}) = 0.0;
    return mask;
}

} // namespace dwformer
