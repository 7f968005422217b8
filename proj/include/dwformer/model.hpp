#pragma once

#include <random>
#include <string>
#include <vector>

#include "dwformer/dwblock.hpp"
#include "dwformer/encoder.hpp"
#include "dwformer/importance.hpp"
#include "dwformer/window.hpp"

namespace dwformer {

enum class ModelVariant { dwformer, fixed_window, vanilla };

inline const char* variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::dwformer: return "dwformer";
        case ModelVariant::fixed_window: return "fixed-window";
        case ModelVariant::vanilla: return "vanilla";
    }
    return "?";
}

inline ModelVariant parse_variant(const std::string& s) {
    if (s == "dwformer") return ModelVariant::dwformer;
    if (s == "fixed-window") return ModelVariant::fixed_window;
    if (s == "vanilla") return ModelVariant::vanilla;
    throw ConfigError("unknown model variant '" + s + "' (dwformer|fixed-window|vanilla)");
}

struct ModelConfig {
    int64_t dim = 64;
    int64_t heads = 8;
    int64_t blocks = 2;
    int64_t ffn_mult = 4;
    double lambda = 0.85;
    int64_t num_classes = 4;
    double dropout = 0.0;
    bool pos_encoding = false;
    ModelVariant variant = ModelVariant::dwformer;
    int64_t fixed_window = 8;

    void validate() const {
        if (dim < 1 || heads < 1 || dim % heads != 0)
            throw ConfigError("model: dim " + std::to_string(dim) + " must be divisible by heads " +
                              std::to_string(heads));
        if (blocks < 1) throw ConfigError("model: blocks must be >= 1");
        if (ffn_mult < 1) throw ConfigError("model: ffn_mult must be >= 1");
        if (lambda <= 0.0 || lambda > 1.0)
            throw ConfigError("model: lambda must be in (0,1], got " + std::to_string(lambda));
        if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
        if (fixed_window < 1) throw ConfigError("model: fixed_window must be >= 1");
    }
};

// Per-sample forward record: the seeded importance plus one per-token
// saliency vector per block, and the window partition each block used. Every
// vector is nonnegative and sums to 1 over the valid tokens.
struct SampleTrace {
    std::vector<std::vector<double>> importance; // blocks+1 vectors, [0] is the seed
    std::vector<WindowPartition> partitions;     // one per block (empty for vanilla)
};

struct SampleForward {
    Var logits; // [1, classes]
    SampleTrace trace;
};

struct ForwardResult {
    Tensor logits; // [batch, classes]
    std::vector<SampleTrace> traces;
};

// Front vanilla encoder layer, N DWFormer blocks (or baseline layers),
// temporal average pooling over valid tokens, then an MLP classifier.
class Model {
public:
    Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        front_ = EncoderLayerParams::init(cfg_.dim, cfg_.heads, cfg_.ffn_mult, rng);
        for (int64_t b = 0; b < cfg_.blocks; ++b) {
            if (cfg_.variant == ModelVariant::dwformer)
                blocks_.push_back(DWBlockParams::init(cfg_.dim, cfg_.heads, cfg_.ffn_mult,
                                                      cfg_.lambda, rng));
            else
                layers_.push_back(EncoderLayerParams::init(cfg_.dim, cfg_.heads, cfg_.ffn_mult, rng));
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
        const int64_t hidden = cfg_.dim / 2;
        mlp_w1_ = Var::param(Tensor::uniform({cfg_.dim, hidden}, -bound, bound, rng));
        mlp_b1_ = Var::param(Tensor::zeros({hidden}));
        mlp_w2_ = Var::param(Tensor::uniform({hidden, cfg_.num_classes}, -bound, bound, rng));
        mlp_b2_ = Var::param(Tensor::zeros({cfg_.num_classes}));
    }

    const ModelConfig& config() const { return cfg_; }

    ParamList params() const {
        ParamList out;
        front_.collect("front", out);
        for (size_t b = 0; b < blocks_.size(); ++b)
            blocks_[b].collect("block" + std::to_string(b), out);
        for (size_t b = 0; b < layers_.size(); ++b)
            layers_[b].collect("layer" + std::to_string(b), out);
        out.emplace_back("mlp.w1", mlp_w1_);
        out.emplace_back("mlp.b1", mlp_b1_);
        out.emplace_back("mlp.w2", mlp_w2_);
        out.emplace_back("mlp.b2", mlp_b2_);
        return out;
    }

    // Forward over one sample's valid tokens ([T, dim], no padding).
    SampleForward forward_sample(const Tensor& features, ForwardCtx ctx = {}) const {
        if (features.rank() != 2 || features.dim(1) != cfg_.dim)
            throw ShapeError("model: sample features " + shape_str(features.shape) +
                             " vs dim " + std::to_string(cfg_.dim));
        const int64_t T = features.dim(0);
        Var x(features);
        if (cfg_.pos_encoding) x = add(x, Var(sinusoidal_encoding(T, cfg_.dim)));

        EncoderOutput front = encoder_layer(front_, x, nullptr, ctx);
        ImportanceScores impt = ic(front.attn, 0, T - 1);

        SampleTrace trace;
        trace.importance.push_back(impt.values.value().data);

        Var hidden = front.hidden;
        if (cfg_.variant == ModelVariant::dwformer) {
            BlockState state{hidden, impt};
            for (const DWBlockParams& block : blocks_) {
                BlockResult res = block_forward(block, state, nullptr, ctx);
                trace.importance.push_back(res.saliency);
                trace.partitions.push_back(res.partition);
                state = res.next;
            }
            hidden = state.x;
        } else {
            const bool fixed = cfg_.variant == ModelVariant::fixed_window;
            WindowPartition part;
            Var mask;
            if (fixed) {
                part = fixed_window_partition(T, std::min(cfg_.fixed_window, T));
                mask = Var(build_mask(part, T));
            }
            for (const EncoderLayerParams& layer : layers_) {
                EncoderOutput enc = encoder_layer(layer, hidden, fixed ? &mask : nullptr, ctx);
                hidden = enc.hidden;
                trace.importance.push_back(ic(enc.attn, 0, T - 1).values.value().data);
                if (fixed) trace.partitions.push_back(part);
            }
        }

        Var pooled = reshape(mean_over_axis(hidden, 0), {1, cfg_.dim});
        Var h1 = relu(add(matmul(pooled, mlp_w1_), mlp_b1_));
        Var logits = add(matmul(h1, mlp_w2_), mlp_b2_);
        return {logits, std::move(trace)};
    }

    // Batch forward; each sample is cut down to its valid tokens, so padded
    // rows can never influence the logits.
    ForwardResult forward(const Tensor& batch, const std::vector<int64_t>& valid_lens) const {
        if (batch.rank() != 3 || batch.dim(2) != cfg_.dim)
            throw ShapeError("model: batch " + shape_str(batch.shape) + " vs dim " +
                             std::to_string(cfg_.dim));
        const int64_t B = batch.dim(0), T = batch.dim(1);
        if (static_cast<int64_t>(valid_lens.size()) != B)
            throw ShapeError("model: " + std::to_string(valid_lens.size()) + " valid_lens for batch " +
                             std::to_string(B));
        ForwardResult out;
        out.logits = Tensor({B, cfg_.num_classes});
        for (int64_t s = 0; s < B; ++s) {
            const int64_t len = valid_lens[static_cast<size_t>(s)];
            if (len < 1 || len > T)
                throw ContractError("model: valid_len " + std::to_string(len) + " outside [1," +
                                    std::to_string(T) + "]");
            SampleForward sf = forward_sample(sample_slice(batch, s, len));
            std::copy_n(sf.logits.value().data.data(), cfg_.num_classes,
                        out.logits.data.data() + s * cfg_.num_classes);
            out.traces.push_back(std::move(sf.trace));
        }
        return out;
    }

    static Tensor sample_slice(const Tensor& batch, int64_t s, int64_t valid_len) {
        const int64_t T = batch.dim(1), D = batch.dim(2);
        Tensor out({valid_len, D});
        std::copy_n(batch.data.data() + (s * T) * D, valid_len * D, out.data.data());
        return out;
    }

private:
    ModelConfig cfg_;
    EncoderLayerParams front_;
    std::vector<DWBlockParams> blocks_;      // dwformer variant
    std::vector<EncoderLayerParams> layers_; // baseline variants
    Var mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
};

// Mean cross entropy; gradient w.r.t. logits is softmax - onehot over the batch.
inline Var loss(const Var& logits, const std::vector<int>& labels) {
    return cross_entropy(logits, labels);
}

} // namespace dwformer
