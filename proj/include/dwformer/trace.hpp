#pragma once

#include <ostream>
#include <vector>

#include "dwformer/model.hpp"
#include "dwformer/training.hpp"

namespace dwformer {

// Importance rows: sample_id, block_index, token_index, score.
// block_index b (1..N) carries the per-token saliency block b assigned while
// it ran; the seed vector (index 0 in the trace) is not exported.
inline int64_t write_importance_csv(std::ostream& out, const std::vector<SampleTrace>& traces) {
    out << "sample_id,block_index,token_index,score\n";
    int64_t rows = 0;
    for (size_t s = 0; s < traces.size(); ++s) {
        const SampleTrace& tr = traces[s];
        for (size_t b = 1; b < tr.importance.size(); ++b) {
            const auto& scores = tr.importance[b];
            for (size_t t = 0; t < scores.size(); ++t) {
                out << s << ',' << b << ',' << t << ',' << fmt_double(scores[t]) << '\n';
                ++rows;
            }
        }
    }
    return rows;
}

// Partition rows: sample_id, block_index, span_begin, span_end, strength.
inline int64_t write_partition_csv(std::ostream& out, const std::vector<SampleTrace>& traces) {
    out << "sample_id,block_index,span_begin,span_end,strength\n";
    int64_t rows = 0;
    for (size_t s = 0; s < traces.size(); ++s) {
        const SampleTrace& tr = traces[s];
        for (size_t b = 0; b < tr.partitions.size(); ++b) {
            for (const Span& span : tr.partitions[b].spans) {
                out << s << ',' << (b + 1) << ',' << span.begin << ',' << span.end << ','
                    << strength_name(span.strength) << '\n';
                ++rows;
            }
        }
    }
    return rows;
}

} // namespace dwformer
