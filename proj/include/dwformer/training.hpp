#pragma once

#include <charconv>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dwformer/data.hpp"
#include "dwformer/metrics.hpp"
#include "dwformer/model.hpp"

namespace dwformer {

struct TrainConfig {
    int64_t epochs = 120;
    int64_t batch_size = 32;
    double base_lr = 3e-4;
    double warmup_frac = 0.05;
    double momentum = 0.9;
    uint64_t seed = 1;
    int64_t eval_every = 1; // epochs between evaluations
    int64_t threads = 1;

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
        if (base_lr <= 0) throw ConfigError("train: base_lr must be > 0");
        if (warmup_frac < 0 || warmup_frac >= 1)
            throw ConfigError("train: warmup fraction must be in [0,1)");
        if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0,1)");
        if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
        if (threads < 1) throw ConfigError("train: threads must be >= 1");
    }
};

// Cosine warmup to base_lr over the first warmup_frac of steps, then cosine
// decay towards zero over the remainder.
inline double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
    if (step < 0 || step >= total_steps)
        throw ContractError("lr_at: step " + std::to_string(step) + " outside [0," +
                            std::to_string(total_steps) + ")");
    const int64_t warm = static_cast<int64_t>(cfg.warmup_frac * static_cast<double>(total_steps));
    if (warm > 0 && step <= warm) {
        const double phase = static_cast<double>(step) / static_cast<double>(warm);
        return cfg.base_lr * (1.0 - std::cos(std::numbers::pi * phase)) / 2.0;
    }
    const double progress =
        static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return cfg.base_lr * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

// SGD with classical momentum: v <- mu*v + g; p <- p - lr*v.
class SgdOptimizer {
public:
    SgdOptimizer(ParamList params, double momentum) : params_(std::move(params)), momentum_(momentum) {
        for (auto& [name, v] : params_) velocity_.emplace_back(v.shape());
    }

    void zero_grad() {
        for (auto& [name, v] : params_) v.zero_grad();
    }

    void step(double lr) {
        for (size_t i = 0; i < params_.size(); ++i) {
            Var& p = params_[i].second;
            Tensor& vel = velocity_[i];
            const Tensor& g = p.grad();
            Tensor& val = p.mutable_value();
            for (size_t j = 0; j < val.data.size(); ++j) {
                vel.data[j] = momentum_ * vel.data[j] + g.data[j];
                val.data[j] -= lr * vel.data[j];
            }
        }
    }

    const ParamList& params() const { return params_; }
    ParamList& params() { return params_; }

private:
    ParamList params_;
    double momentum_;
    std::vector<Tensor> velocity_;
};

struct LogEntry {
    int64_t epoch = 0; // 1-based
    int64_t step = 0;  // global, 0-based
    double lr = 0.0;
    double loss = 0.0;
    bool has_eval = false;
    double wa = 0.0, ua = 0.0, wf1 = 0.0;
};

inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// "epoch step lr loss WA UA WF1", dashes when the step carries no evaluation.
inline std::string format_log_line(const LogEntry& e) {
    std::string line = std::to_string(e.epoch) + " " + std::to_string(e.step) + " " +
                       fmt_double(e.lr) + " " + fmt_double(e.loss);
    if (e.has_eval)
        line += " " + fmt_double(e.wa) + " " + fmt_double(e.ua) + " " + fmt_double(e.wf1);
    else
        line += " - - -";
    return line;
}

struct TrainResult {
    std::vector<LogEntry> log;
    MetricsReport best_eval;
    int64_t best_epoch = 0;
    int64_t epochs_run = 0;
    bool stopped_early = false;
};

namespace detail {

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    uint64_t x = a * 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull + c + 0x94d049bb133111ebull;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

} // namespace detail

// Mini-batch SGD over shuffled samples. Per-sample forward/backward passes
// accumulate parameter gradients; with several threads each worker sums into
// its own buffers and the buffers reduce in sample order, so a given thread
// count always reproduces itself. Keeps the best-UA parameters and (unless
// restore_best is false) restores them into the model before returning.
//
// `stop` (optional) is consulted after each evaluation; returning true ends
// training at that epoch.
inline TrainResult train(Model& model, const Dataset& train_set, const Dataset& eval_set,
                         const TrainConfig& cfg,
                         const std::function<bool(int64_t, const MetricsReport&)>& stop = {},
                         bool restore_best = true) {
    cfg.validate();
    if (train_set.empty()) throw ContractError("train: empty training set");
    if (eval_set.empty()) throw ContractError("train: empty evaluation set");

    SgdOptimizer opt(model.params(), cfg.momentum);
    const int64_t n = static_cast<int64_t>(train_set.size());
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = cfg.epochs * steps_per_epoch;

    std::mt19937_64 shuffle_rng(cfg.seed);
    std::vector<size_t> order(static_cast<size_t>(n));
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    std::vector<Tensor> best_params;
    double best_ua = -1.0;

    auto snapshot = [&] {
        best_params.clear();
        for (const auto& [name, v] : opt.params()) best_params.push_back(v.value());
    };

    int64_t global_step = 0;
    for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (int64_t b = 0; b < steps_per_epoch; ++b, ++global_step) {
            const int64_t lo = b * cfg.batch_size;
            const int64_t hi = std::min(lo + cfg.batch_size, n);
            const double lr = lr_at(global_step, total_steps, cfg);
            opt.zero_grad();

            double batch_loss = 0.0;
            const int64_t batch_n = hi - lo;
            auto run_sample = [&](int64_t idx, detail::GradSink* sink) {
                const SampleRecord& rec = train_set[order[static_cast<size_t>(idx)]];
                std::mt19937_64 drop_rng(
                    detail::mix_seed(cfg.seed, static_cast<uint64_t>(global_step),
                                     static_cast<uint64_t>(idx)));
                ForwardCtx ctx{model.config().dropout, &drop_rng};
                SampleForward sf = model.forward_sample(rec.features, ctx);
                Var sample_loss = loss(sf.logits, {rec.label});
                const double raw = sample_loss.value().data[0];
                backward(scale(sample_loss, 1.0 / static_cast<double>(batch_n)), sink);
                return raw;
            };

            if (cfg.threads == 1 || batch_n == 1) {
                for (int64_t i = lo; i < hi; ++i) batch_loss += run_sample(i, nullptr);
            } else {
                const int64_t workers = std::min<int64_t>(cfg.threads, batch_n);
                std::vector<std::vector<Tensor>> sink_bufs(static_cast<size_t>(workers));
                std::vector<detail::GradSink> sinks(static_cast<size_t>(workers));
                for (int64_t w = 0; w < workers; ++w) {
                    auto& bufs = sink_bufs[static_cast<size_t>(w)];
                    for (const auto& [name, v] : opt.params()) bufs.emplace_back(v.shape());
                    size_t pi = 0;
                    for (const auto& [name, v] : opt.params())
                        sinks[static_cast<size_t>(w)].buffers[v.node()] = &bufs[pi++];
                }
                std::vector<double> losses(static_cast<size_t>(workers), 0.0);
                std::vector<std::thread> pool;
                for (int64_t w = 0; w < workers; ++w) {
                    pool.emplace_back([&, w] {
                        for (int64_t i = lo + w; i < hi; i += workers)
                            losses[static_cast<size_t>(w)] +=
                                run_sample(i, &sinks[static_cast<size_t>(w)]);
                    });
                }
                for (auto& t : pool) t.join();
                for (int64_t w = 0; w < workers; ++w) {
                    batch_loss += losses[static_cast<size_t>(w)];
                    size_t pi = 0;
                    for (auto& [name, v] : opt.params()) {
                        Tensor& dst = v.grad();
                        const Tensor& src = sink_bufs[static_cast<size_t>(w)][pi++];
                        for (size_t j = 0; j < dst.data.size(); ++j) dst.data[j] += src.data[j];
                    }
                }
            }
            batch_loss /= static_cast<double>(batch_n);
            if (!std::isfinite(batch_loss))
                throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) +
                                      " step " + std::to_string(global_step));
            opt.step(lr);
            for (const auto& [name, v] : opt.params())
                for (double val : v.value().data)
                    if (!std::isfinite(val))
                        throw DivergenceError("parameter '" + name + "' became non-finite at epoch " +
                                              std::to_string(epoch) + " step " +
                                              std::to_string(global_step) + " (lr " + fmt_double(lr) +
                                              ")");
            result.log.push_back({epoch, global_step, lr, batch_loss});
        }

        result.epochs_run = epoch;
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            MetricsReport rep = evaluate(model, eval_set);
            LogEntry& last = result.log.back();
            last.has_eval = true;
            last.wa = rep.wa;
            last.ua = rep.ua;
            last.wf1 = rep.wf1;
            if (rep.ua > best_ua) {
                best_ua = rep.ua;
                result.best_eval = rep;
                result.best_epoch = epoch;
                snapshot();
            }
            if (stop && stop(epoch, rep)) {
                result.stopped_early = true;
                break;
            }
        }
    }

    if (restore_best && !best_params.empty()) {
        size_t pi = 0;
        for (auto& [name, v] : opt.params()) v.mutable_value() = best_params[pi++];
    }
    return result;
}

} // namespace dwformer
