#include <gtest/gtest.h>

#include <cmath>

#include "dwformer/training.hpp"

using namespace dwformer;

namespace {

SyntheticSpec tiny_task() {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.t_min = 8;
    spec.t_max = 12;
    spec.dim = 8;
    spec.event_min = 2;
    spec.event_max = 4;
    spec.noise_sigma = 0.1;
    spec.amplitude = 3.0; // strongly separable; these tests probe mechanics, not learning
    spec.per_class = 12;
    spec.seed = 3;
    return spec;
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.num_classes = 2;
    return cfg;
}

TrainConfig quick_train(int64_t epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.base_lr = 0.05;
    cfg.warmup_frac = 0.1;
    cfg.seed = 5;
    return cfg;
}

} // namespace

TEST(LrSchedule, WarmupAndDecayShape) {
    TrainConfig cfg;
    cfg.base_lr = 1.0;
    cfg.warmup_frac = 0.1;
    const int64_t total = 1000; // warm = 100
    EXPECT_DOUBLE_EQ(lr_at(0, total, cfg), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(100, total, cfg), 1.0);
    // midpoint of the decay phase: step = 100 + 450 = 550
    EXPECT_NEAR(lr_at(550, total, cfg), 0.5, 1e-12);
    // monotone rise through warmup
    EXPECT_LT(lr_at(10, total, cfg), lr_at(50, total, cfg));
    // decay approaches zero
    EXPECT_LT(lr_at(999, total, cfg), 0.01);
    EXPECT_THROW(lr_at(-1, total, cfg), ContractError);
    EXPECT_THROW(lr_at(1000, total, cfg), ContractError);
}

TEST(LrSchedule, ZeroWarmupStartsAtBase) {
    TrainConfig cfg;
    cfg.base_lr = 2.0;
    cfg.warmup_frac = 0.0;
    EXPECT_DOUBLE_EQ(lr_at(0, 100, cfg), 2.0);
}

TEST(Sgd, ZeroLearningRateLeavesParametersBitIdentical) {
    std::mt19937_64 rng(7);
    Var p = Var::param(Tensor::uniform({4, 4}, -1, 1, rng));
    const std::vector<double> before = p.value().data;
    SgdOptimizer opt({{"p", p}}, 0.9);
    backward(sum_all(mul(p, p)));
    opt.step(0.0);
    EXPECT_EQ(p.value().data, before);
}

TEST(Sgd, MomentumAccumulates) {
    Var p = Var::param(Tensor({1}, {0.0}));
    SgdOptimizer opt({{"p", p}}, 0.5);
    // constant gradient 1: v1=1, v2=1.5
    p.grad().data[0] = 1.0;
    opt.step(1.0);
    EXPECT_DOUBLE_EQ(p.value().data[0], -1.0);
    p.zero_grad();
    p.grad().data[0] = 1.0;
    opt.step(1.0);
    EXPECT_DOUBLE_EQ(p.value().data[0], -2.5);
}

TEST(Train, SameSeedGivesIdenticalLogs) {
    Dataset ds = generate(tiny_task());
    auto [train_set, eval_set] = split_dataset(ds, 0.25, 11);
    auto run = [&] {
        Model model(tiny_model(), 13);
        return train(model, train_set, eval_set, quick_train(2));
    };
    TrainResult a = run();
    TrainResult b = run();
    ASSERT_EQ(a.log.size(), b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i)
        EXPECT_EQ(format_log_line(a.log[i]), format_log_line(b.log[i]));
}

TEST(Train, LossDecreasesAfterFirstEpoch) {
    Dataset ds = generate(tiny_task());
    auto [train_set, eval_set] = split_dataset(ds, 0.25, 11);
    Model model(tiny_model(), 13);

    // initial loss over the training set
    double init_loss = 0;
    for (const auto& rec : train_set) {
        SampleForward sf = model.forward_sample(rec.features);
        init_loss += loss(sf.logits, {rec.label}).value().data[0];
    }
    init_loss /= static_cast<double>(train_set.size());

    TrainResult res = train(model, train_set, eval_set, quick_train(1));
    double sum = 0;
    for (const LogEntry& e : res.log) sum += e.loss;
    EXPECT_LT(sum / static_cast<double>(res.log.size()), init_loss);
}

TEST(Train, LearningRateLogMatchesSchedule) {
    Dataset ds = generate(tiny_task());
    auto [train_set, eval_set] = split_dataset(ds, 0.25, 11);
    Model model(tiny_model(), 13);
    TrainConfig cfg = quick_train(3);
    TrainResult res = train(model, train_set, eval_set, cfg);
    const int64_t steps_per_epoch =
        (static_cast<int64_t>(train_set.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total = cfg.epochs * steps_per_epoch;
    ASSERT_EQ(static_cast<int64_t>(res.log.size()), total);
    for (const LogEntry& e : res.log) EXPECT_DOUBLE_EQ(e.lr, lr_at(e.step, total, cfg));
}

TEST(Train, ThreadedGradientsReproduceWithSameThreadCount) {
    Dataset ds = generate(tiny_task());
    auto [train_set, eval_set] = split_dataset(ds, 0.25, 11);
    auto run = [&] {
        Model model(tiny_model(), 13);
        TrainConfig cfg = quick_train(1);
        cfg.threads = 2;
        return train(model, train_set, eval_set, cfg);
    };
    TrainResult a = run();
    TrainResult b = run();
    ASSERT_EQ(a.log.size(), b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i)
        EXPECT_EQ(format_log_line(a.log[i]), format_log_line(b.log[i]));
}

TEST(Train, EarlyStopCallback) {
    Dataset ds = generate(tiny_task());
    auto [train_set, eval_set] = split_dataset(ds, 0.25, 11);
    Model model(tiny_model(), 13);
    TrainResult res = train(model, train_set, eval_set, quick_train(50),
                            [](int64_t epoch, const MetricsReport&) { return epoch >= 2; });
    EXPECT_TRUE(res.stopped_early);
    EXPECT_EQ(res.epochs_run, 2);
}

TEST(Train, DivergenceGuardTriggers) {
    Dataset ds = generate(tiny_task());
    auto [train_set, eval_set] = split_dataset(ds, 0.25, 11);
    Model model(tiny_model(), 13);
    TrainConfig cfg = quick_train(3);
    cfg.base_lr = 1e9; // blows up within the first epochs
    EXPECT_THROW(train(model, train_set, eval_set, cfg), DivergenceError);
}

TEST(Train, BestUaParametersRestored) {
    Dataset ds = generate(tiny_task());
    auto [train_set, eval_set] = split_dataset(ds, 0.25, 11);
    Model model(tiny_model(), 13);
    TrainResult res = train(model, train_set, eval_set, quick_train(4));
    MetricsReport now = evaluate(model, eval_set);
    EXPECT_DOUBLE_EQ(now.ua, res.best_eval.ua);
}
