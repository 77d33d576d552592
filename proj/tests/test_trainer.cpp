#include <cmath>

#include <gtest/gtest.h>

#include "affect/byte_io.hpp"
#include "affect/error.hpp"
#include "affect/trainer.hpp"
#include "fixtures.hpp"

using namespace affect;
using namespace affect::testing;

namespace {

NamedParams single_param(const std::vector<double>& values, const std::vector<double>& grad) {
    Tensor p = Tensor::from({values.size()}, values, true);
    if (!grad.empty()) p.accumulate_grad(grad);
    return {{"p", p}};
}

Model tiny_model(const Dataset& ds, RunConfig cfg = tiny_config()) {
    cfg.model.d_v = ds.dim;
    cfg.model.seed = cfg.train.seed;
    return Model(cfg.model, init_params(cfg.model, cfg.model.seed));
}

std::vector<std::vector<double>> grads_of(const Model& m) {
    std::vector<std::vector<double>> out;
    for (const auto& [name, p] : m.params().named()) {
        auto g = p.grad();
        out.emplace_back(g.begin(), g.end());
        if (out.back().empty()) out.back().assign(p.numel(), 0.0);
    }
    return out;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    auto params = single_param({0.5, -1.0, 2.0}, {0.0, 0.0, 0.0});
    auto state = AdamState{{}, 0, {{0, 0, 0}}, {{0, 0, 0}}};
    adam_step(params, state);
    EXPECT_EQ(state.step, 1u);
    const auto d = params[0].second.data();
    EXPECT_EQ(std::vector<double>(d.begin(), d.end()), (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(Adam, FirstUnitStepIsLearningRate) {
    // t = 1, g = 1: m_hat = v_hat = 1, so the update is lr / (1 + eps).
    auto params = single_param({0.0, 1.0}, {1.0, 1.0});
    AdamState state{{}, 0, {{0, 0}}, {{0, 0}}};
    adam_step(params, state);
    const double expected = -1e-4 / (1.0 + 1e-8);
    EXPECT_NEAR(params[0].second.data()[0], expected, 1e-18);
    EXPECT_NEAR(params[0].second.data()[1], 1.0 + expected, 1e-15);
}

TEST(Adam, MatchesStraightLineReference) {
    Rng rng(8);
    const AdamConfig h{3e-3, 0.85, 0.99, 1e-7};
    std::vector<double> p(17), m(17, 0.0), v(17, 0.0);
    for (auto& x : p) x = rng.normal();
    auto params = single_param(p, {});
    AdamState state{h, 0, {m}, {v}};
    for (int step = 1; step <= 25; ++step) {
        std::vector<double> g(17);
        for (auto& x : g) x = rng.normal() * 3.0;
        Tensor t = params[0].second;
        t.zero_grad();
        t.accumulate_grad(g);
        adam_step(params, state);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = h.beta1 * m[i] + (1 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1 - h.beta2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(h.beta1, step));
            const double vh = v[i] / (1 - std::pow(h.beta2, step));
            p[i] -= h.lr * mh / (std::sqrt(vh) + h.eps);
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            ASSERT_NEAR(params[0].second.data()[i], p[i], 1e-15);
            ASSERT_GE(state.v[0][i], 0.0);
        }
    }
}

TEST(Adam, NonFiniteGradientAbortsBeforeAnyUpdate) {
    Tensor a = Tensor::from({2}, {1.0, 2.0}, true), b = Tensor::from({1}, {3.0}, true);
    a.accumulate_grad(std::vector<double>{0.5, 0.5});
    b.accumulate_grad(std::vector<double>{NAN});
    NamedParams params{{"a", a}, {"b", b}};
    AdamState state{{}, 0, {{0, 0}, {0}}, {{0, 0}, {0}}};
    try {
        adam_step(params, state);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_EQ(e.param(), "b");
    }
    EXPECT_EQ(a.data()[0], 1.0);
    EXPECT_EQ(state.step, 0u);
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
    auto run = [] {
        Rng rng(1);
        auto params = single_param({0.1, 0.2, 0.3}, {});
        AdamState state{{}, 0, {{0, 0, 0}}, {{0, 0, 0}}};
        for (int i = 0; i < 10; ++i) {
            Tensor t = params[0].second;
            t.zero_grad();
            t.accumulate_grad(std::vector<double>{rng.normal(), rng.normal(), rng.normal()});
            adam_step(params, state);
        }
        auto d = params[0].second.data();
        return std::vector<double>(d.begin(), d.end());
    };
    EXPECT_EQ(run(), run());
}

TEST(BatchGradient, IdenticalWindowsEqualSingleWindow) {
    auto ds = synth_split(tiny_spec(), "train");
    Model model = tiny_model(ds);
    const auto w = materialize(ds, {0, 0, 8});
    const TaskWeights weights{std::vector<double>(8, 1.0), std::vector<double>(12, 1.0)};
    const std::uint64_t seed = 77;
    batch_gradient(model, std::vector<Window>{w}, std::vector<std::uint64_t>{seed}, TrainTask::multi, weights);
    const auto single = grads_of(model);
    batch_gradient(model, std::vector<Window>(4, w), std::vector<std::uint64_t>(4, seed), TrainTask::multi, weights);
    const auto batched = grads_of(model);
    for (std::size_t i = 0; i < single.size(); ++i)
        for (std::size_t j = 0; j < single[i].size(); ++j) ASSERT_NEAR(batched[i][j], single[i][j], 1e-12);
}

TEST(BatchGradient, EqualsMeanOfPerWindowGradients) {
    auto ds = synth_split(tiny_spec(), "train");
    Model model = tiny_model(ds);
    const TaskWeights weights{std::vector<double>(8, 1.0), std::vector<double>(12, 1.0)};
    std::vector<Window> windows{materialize(ds, {0, 0, 8}), materialize(ds, {0, 4, 8}), materialize(ds, {1, 10, 6})};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<std::vector<double>> mean;
    for (std::size_t k = 0; k < windows.size(); ++k) {
        batch_gradient(model, std::span(&windows[k], 1), std::span(&seeds[k], 1), TrainTask::expr, weights);
        auto g = grads_of(model);
        if (mean.empty()) mean.assign(g.size(), {});
        for (std::size_t i = 0; i < g.size(); ++i) {
            mean[i].resize(g[i].size(), 0.0);
            for (std::size_t j = 0; j < g[i].size(); ++j) mean[i][j] += g[i][j] / 3.0;
        }
    }
    batch_gradient(model, windows, seeds, TrainTask::expr, weights);
    const auto batched = grads_of(model);
    for (std::size_t i = 0; i < mean.size(); ++i)
        for (std::size_t j = 0; j < mean[i].size(); ++j) ASSERT_NEAR(batched[i][j], mean[i][j], 1e-12);
}

TEST(WindowLoss, SkipsWhenNoValidFrames) {
    auto ds = synth_split(tiny_spec(), "train");
    Model model = tiny_model(ds);
    auto w = materialize(ds, {0, 0, 8});
    for (auto& m : w.labels.mask) m = 0;
    const TaskWeights weights{std::vector<double>(8, 1.0), std::vector<double>(12, 1.0)};
    auto loss = window_loss(model.forward(w.to_tensor(), Mode::infer), w.labels, TrainTask::multi, weights);
    EXPECT_FALSE(loss.total.has_value());
}

TEST(TrainEpoch, StatsAreDeterministic) {
    auto ds = synth_split(tiny_spec(), "train");
    auto cfg = tiny_config();
    cfg.train.augment.noise_prob = 0.5;
    cfg.train.augment.crop_prob = 0.5;
    auto run = [&] {
        Model model = tiny_model(ds, cfg);
        auto adam = make_adam_state(model.params(), cfg.train.adam);
        const auto windows = index_windows(ds, cfg.train.win_len, cfg.train.stride);
        const auto weights = compute_task_weights(ds, cfg.train);
        auto s = train_epoch(model, ds, windows, adam, cfg.train, weights, 1);
        return std::pair(s.loss, std::vector<double>(model.params().va_w.data().begin(), model.params().va_w.data().end()));
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
}

TEST(TrainEpoch, LossDecreasesOnSeparableData) {
    auto spec = tiny_spec();
    spec.videos = 4;
    auto ds = synth_split(spec, "train");
    auto cfg = tiny_config();
    cfg.model.dropout_rate = 0.0;
    cfg.train.adam.lr = 3e-3;
    Model model = tiny_model(ds, cfg);
    auto adam = make_adam_state(model.params(), cfg.train.adam);
    const auto windows = index_windows(ds, cfg.train.win_len, cfg.train.stride);
    const auto weights = compute_task_weights(ds, cfg.train);
    const double first = train_epoch(model, ds, windows, adam, cfg.train, weights, 1).loss;
    double last = first;
    for (std::uint64_t e = 2; e <= 20; ++e) last = train_epoch(model, ds, windows, adam, cfg.train, weights, e).loss;
    EXPECT_LT(last, 0.5 * first);
}

TEST(EpochOrder, AutoSamplerFollowsTask) {
    WindowIndex idx;
    for (int i = 0; i < 10; ++i) idx.spans.push_back({0, static_cast<std::size_t>(i), 1}), idx.classes.push_back(i < 9 ? 0 : 1);
    TrainConfig cfg;
    cfg.task = TrainTask::va;
    auto order = epoch_order(idx, cfg, 1);
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sorted[i], i);
    cfg.task = TrainTask::expr;
    EXPECT_EQ(epoch_order(idx, cfg, 1), epoch_order(idx, cfg, 1));
    EXPECT_NE(epoch_order(idx, cfg, 1), epoch_order(idx, cfg, 2));
}

TEST(Predict, NoOverlapMatchesDirectForward) {
    auto ds = synth_split(tiny_spec(), "train");
    Model model = tiny_model(ds);
    const auto& seq = ds.videos[0].features;
    const auto pred = predict_sequence(model, seq, 8, 8);
    for (std::size_t start = 0; start < seq.length(); start += 8) {
        const auto out = model.forward(materialize(ds, {0, start, 8}).to_tensor(), Mode::infer);
        for (std::size_t r = 0; r < 8; ++r) {
            EXPECT_EQ(pred.va[2 * (start + r)], out.va.at(r, 0));
            EXPECT_EQ(pred.va[2 * (start + r) + 1], out.va.at(r, 1));
        }
    }
}

TEST(Predict, OverlapUsesNearestWindowCenter) {
    auto ds = synth_split(tiny_spec(), "train");
    Model model = tiny_model(ds);
    const auto& seq = ds.videos[0].features;
    // Windows start at 0, 4, ..., 16 with centers 3.5, 7.5, ...
    const auto pred = predict_sequence(model, seq, 8, 4);
    const auto w0 = model.forward(materialize(ds, {0, 0, 8}).to_tensor(), Mode::infer);
    const auto w1 = model.forward(materialize(ds, {0, 4, 8}).to_tensor(), Mode::infer);
    EXPECT_EQ(pred.va[2 * 5], w0.va.at(5, 0));  // |5-3.5| < |5-7.5|
    EXPECT_EQ(pred.va[2 * 6], w1.va.at(2, 0));  // |6-7.5| < |6-3.5|
}

TEST(Predict, ThreadsDoNotChangeResults) {
    auto ds = synth_split(tiny_spec(), "train");
    Model model = tiny_model(ds);
    const auto a = predict_sequence(model, ds.videos[0].features, 8, 2, 2, 1);
    const auto b = predict_sequence(model, ds.videos[0].features, 8, 2, 2, 4);
    EXPECT_EQ(a.va, b.va);
    EXPECT_EQ(a.expr, b.expr);
    EXPECT_EQ(a.au, b.au);
}

TEST(Predict, DimMismatchRejected) {
    auto ds = synth_split(tiny_spec(), "train");
    Model model = tiny_model(ds);
    FeatureSequence seq = ds.videos[0].features;
    seq.dim = 3;
    seq.features.resize(seq.length() * 3);
    EXPECT_THROW(predict_sequence(model, seq, 8, 8), DimensionError);
}

TEST(Evaluate, RepeatableAndOmitsEmptyTracks) {
    auto ds = synth_split(tiny_spec(), "val");
    Model model = tiny_model(ds);
    const auto cfg = tiny_config().train;
    EXPECT_EQ(evaluate(model, ds, cfg).to_flat(), evaluate(model, ds, cfg).to_flat());
    for (auto& v : ds.videos)
        for (auto& a : v.labels.au) a = static_cast<int>(kLabelSentinel);
    const auto report = evaluate(model, ds, cfg);
    EXPECT_FALSE(report.au_f1_mean.has_value());
    EXPECT_EQ(report.omitted(), "au");
    EXPECT_TRUE(report.expr_macro_f1.has_value());
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    auto ds = synth_split(tiny_spec(), "train");
    auto cfg = tiny_config();
    cfg.model.d_v = ds.dim;
    cfg.model.seed = cfg.train.seed;
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params(cfg.model, cfg.model.seed);
    ck.adam = make_adam_state(ck.params, cfg.train.adam);
    ck.adam.step = 5;
    ck.adam.m[0][0] = 0.25;
    ck.epoch = 3;
    ck.metric = "expr_macro_f1";
    ck.best_score = 0.125;
    ck.best_epoch = 2;
    ck.rng_seed = 21;
    const auto bytes = encode_checkpoint(ck);
    const auto back = decode_checkpoint(bytes);
    EXPECT_EQ(encode_checkpoint(back), bytes);
    EXPECT_EQ(back.epoch, 3u);
    EXPECT_EQ(back.metric, "expr_macro_f1");
    EXPECT_EQ(back.adam.m[0][0], 0.25);
}

TEST(Checkpoint, CorruptionIsFormatError) {
    auto ds = synth_split(tiny_spec(), "train");
    auto cfg = tiny_config();
    cfg.model.d_v = ds.dim;
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params(cfg.model, 0);
    ck.adam = make_adam_state(ck.params, cfg.train.adam);
    auto bytes = encode_checkpoint(ck);
    auto bad = bytes;
    bad[1] = 'X';
    try {
        decode_checkpoint(bad);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 0u);
    }
    bad = bytes;
    bad[4] = 9;
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bad.assign(bytes.begin(), bytes.end() - 3);
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad.push_back(0);
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
}

class FitTest : public ::testing::Test {
protected:
    Dataset train = synth_split(tiny_spec(), "train");
    Dataset val = synth_split(tiny_spec(), "val");
};

TEST_F(FitTest, ZeroEpochsEvaluatesInitialWeights) {
    auto cfg = tiny_config();
    cfg.train.epochs = 0;
    const auto dir = fresh_dir("fit0");
    auto result = fit(cfg, train, val, {dir});
    ASSERT_EQ(result.epoch_scores.size(), 1u);
    EXPECT_EQ(result.best.epoch, 0u);
    EXPECT_TRUE(std::filesystem::exists(dir / "best.afck"));
    const auto log = read_file_text(dir / "train.log");
    EXPECT_EQ(log.rfind("epoch=0 ", 0), 0u);
}

TEST_F(FitTest, BestScoreIsMaxOfEpochScores) {
    auto cfg = tiny_config();
    cfg.train.epochs = 4;
    const auto dir = fresh_dir("fitbest");
    auto result = fit(cfg, train, val, {dir});
    ASSERT_EQ(result.epoch_scores.size(), 4u);
    const double best = *std::max_element(result.epoch_scores.begin(), result.epoch_scores.end());
    EXPECT_EQ(result.best.best_score, best);
    auto saved = load_checkpoint(dir / "best.afck");
    EXPECT_EQ(saved.best_score, best);
    Model model(saved.config.model, saved.params);
    const auto rescored = tracked_score(evaluate(model, val, saved.config.train), "expr");
    EXPECT_NEAR(rescored, best, 1e-9);
}

TEST_F(FitTest, ResumeReproducesStraightRun) {
    auto cfg = tiny_config();
    cfg.train.epochs = 4;
    const auto straight = fresh_dir("fit_straight"), resumed = fresh_dir("fit_resumed");
    fit(cfg, train, val, {straight});
    cfg.train.epochs = 2;
    fit(cfg, train, val, {resumed});
    cfg.train.epochs = 4;
    fit(cfg, train, val, {resumed, true});
    for (const char* f : {"best.afck", "last.afck", "train.log"}) {
        EXPECT_EQ(read_file_bytes(straight / f), read_file_bytes(resumed / f)) << f;
    }
}

TEST_F(FitTest, ResumeWithDifferentConfigRejected) {
    auto cfg = tiny_config();
    cfg.train.epochs = 1;
    const auto dir = fresh_dir("fit_mismatch");
    fit(cfg, train, val, {dir});
    cfg.train.epochs = 2;
    cfg.train.adam.lr = 0.5;
    EXPECT_THROW(fit(cfg, train, val, {dir, true}), ConfigError);
}

TEST_F(FitTest, MissingTaskLabelsIsConfigError) {
    for (auto& v : train.videos)
        for (auto& e : v.labels.expr) e = static_cast<int>(kLabelSentinel);
    EXPECT_THROW(fit(tiny_config(), train, val, {fresh_dir("fit_nolabels")}), ConfigError);
}
