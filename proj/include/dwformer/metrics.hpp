#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "dwformer/data.hpp"
#include "dwformer/error.hpp"
#include "dwformer/model.hpp"

namespace dwformer {

// WA: overall accuracy. UA: mean per-class recall over classes present in the
// evaluation set (absent classes are excluded and reported). WF1: support-
// weighted F1.
struct MetricsReport {
    double wa = 0.0;
    double ua = 0.0;
    double wf1 = 0.0;
    std::vector<std::vector<int64_t>> confusion; // [true][pred]
    std::vector<int64_t> support;
    std::vector<bool> present;
    int64_t total = 0;

    std::string summary() const {
        std::ostringstream os;
        os << "WA " << wa << "  UA " << ua << "  WF1 " << wf1 << "  (n=" << total << ")";
        for (size_t c = 0; c < present.size(); ++c)
            if (!present[c]) os << "  [class " << c << " absent, excluded from UA]";
        return os.str();
    }
};

inline MetricsReport evaluate_predictions(const std::vector<int>& preds,
                                          const std::vector<int>& labels, int64_t num_classes) {
    if (preds.size() != labels.size())
        throw ContractError("metrics: " + std::to_string(preds.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
    if (preds.empty()) throw ContractError("metrics: empty evaluation set");
    MetricsReport rep;
    rep.total = static_cast<int64_t>(preds.size());
    rep.confusion.assign(static_cast<size_t>(num_classes),
                         std::vector<int64_t>(static_cast<size_t>(num_classes), 0));
    for (size_t i = 0; i < preds.size(); ++i) {
        const int t = labels[i], p = preds[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw ContractError("metrics: class id outside [0," + std::to_string(num_classes) + ")");
        rep.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)]++;
    }
    rep.support.assign(static_cast<size_t>(num_classes), 0);
    rep.present.assign(static_cast<size_t>(num_classes), false);
    std::vector<int64_t> predicted(static_cast<size_t>(num_classes), 0);
    int64_t correct = 0;
    for (int64_t c = 0; c < num_classes; ++c) {
        for (int64_t p = 0; p < num_classes; ++p) {
            rep.support[static_cast<size_t>(c)] += rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(p)];
            predicted[static_cast<size_t>(p)] += rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(p)];
        }
        rep.present[static_cast<size_t>(c)] = rep.support[static_cast<size_t>(c)] > 0;
        correct += rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    }
    rep.wa = static_cast<double>(correct) / static_cast<double>(rep.total);

    double recall_sum = 0.0;
    int64_t present_count = 0;
    rep.wf1 = 0.0;
    for (int64_t c = 0; c < num_classes; ++c) {
        const int64_t tp = rep.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
        const int64_t sup = rep.support[static_cast<size_t>(c)];
        const int64_t pred = predicted[static_cast<size_t>(c)];
        if (sup > 0) {
            recall_sum += static_cast<double>(tp) / static_cast<double>(sup);
            ++present_count;
        }
        double f1 = 0.0;
        if (sup > 0 && pred > 0 && tp > 0) {
            const double precision = static_cast<double>(tp) / static_cast<double>(pred);
            const double recall = static_cast<double>(tp) / static_cast<double>(sup);
            f1 = 2.0 * precision * recall / (precision + recall);
        }
        rep.wf1 += (static_cast<double>(sup) / static_cast<double>(rep.total)) * f1;
    }
    rep.ua = recall_sum / static_cast<double>(present_count);
    return rep;
}

// Deterministic argmax: ties resolve to the lowest class id.
inline int argmax_class(const double* row, int64_t num_classes) {
    int best = 0;
    for (int64_t c = 1; c < num_classes; ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);
    return best;
}

inline MetricsReport evaluate(const Model& model, const Dataset& ds) {
    if (ds.empty()) throw ContractError("evaluate: empty dataset");
    std::vector<int> preds, labels;
    preds.reserve(ds.size());
    labels.reserve(ds.size());
    for (const SampleRecord& rec : ds) {
        SampleForward sf = model.forward_sample(rec.features);
        preds.push_back(argmax_class(sf.logits.value().data.data(), model.config().num_classes));
        labels.push_back(rec.label);
    }
    return evaluate_predictions(preds, labels, model.config().num_classes);
}

} // namespace dwformer
