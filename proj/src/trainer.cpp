#include "affect/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <system_error>
#include <thread>

#include "affect/byte_io.hpp"
#include "affect/error.hpp"

namespace affect {

namespace {

constexpr std::uint64_t kSamplerStream = 0x5A;
constexpr std::uint64_t kAugmentStream = 0xA6;
constexpr std::uint64_t kDropoutStream = 0xD0;

bool trains(TrainTask task, Task t) {
    switch (task) {
        case TrainTask::va: return t == Task::va;
        case TrainTask::expr: return t == Task::expr;
        case TrainTask::au: return t == Task::au;
        case TrainTask::multi: return true;
    }
    return false;
}

const char* task_label(Task t) { return t == Task::va ? "valence/arousal" : t == Task::expr ? "expression" : "AU"; }

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

ModelParams clone_params(const ModelConfig& cfg, const ModelParams& src) {
    ModelParams out = init_params(cfg, cfg.seed);
    auto dst = out.named();
    auto from = src.named();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        auto d = dst[i].second.mutable_data();
        auto s = from[i].second.data();
        std::copy(s.begin(), s.end(), d.begin());
    }
    return out;
}

std::vector<std::uint8_t> au_label_bits(const LabelSet& labels) {
    std::vector<std::uint8_t> bits(labels.au.size());
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = labels.au[i] == 1;
    return bits;
}

}  // namespace

void adam_step(const NamedParams& params, AdamState& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ContractError("optimizer state has " + std::to_string(state.m.size()) + " entries for " +
                            std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, p] = params[i];
        if (state.m[i].size() != p.numel() || state.v[i].size() != p.numel()) {
            throw ContractError("optimizer moments for " + name + " do not match its shape");
        }
        for (double g : p.grad()) {
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + name, name);
        }
    }
    const auto& h = state.hyper;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(h.beta1, t);
    const double bc2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i].second;
        const auto grad = p.grad();
        auto data = p.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            data[j] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
        }
    }
}

TaskWeights compute_task_weights(const Dataset& train, const TrainConfig& cfg) {
    TaskWeights w;
    std::vector<int> expr;
    std::vector<std::uint8_t> au;
    for (const auto& v : train.videos) {
        for (std::size_t t = 0; t < v.labels.length(); ++t) {
            if (v.labels.expr_valid(t)) expr.push_back(v.labels.expr[t]);
            if (v.labels.au_valid(t)) {
                for (std::size_t u = 0; u < kNumActionUnits; ++u) au.push_back(v.labels.au[t * kNumActionUnits + u] == 1);
            }
        }
    }
    w.class_weights = cfg.class_weighting ? inverse_frequency_weights(expr, kNumExpressions)
                                          : std::vector<double>(kNumExpressions, 1.0);
    w.au_pos_weights = cfg.au_pos_weighting ? au_pos_weights(au, kNumActionUnits)
                                            : std::vector<double>(kNumActionUnits, 1.0);
    return w;
}

WindowLoss window_loss(const TaskOutputs& out, const LabelSet& labels, TrainTask task, const TaskWeights& weights) {
    WindowLoss result;
    auto add_term = [&](const std::optional<Tensor>& term, std::optional<double>& slot) {
        if (!term) return;
        slot = term->item();
        result.total = result.total ? add(*result.total, *term) : *term;
    };
    if (trains(task, Task::va)) {
        add_term(ccc_loss(out.va, labels.va, labels.task_mask(Task::va)), result.va);
    }
    if (trains(task, Task::expr)) {
        add_term(weighted_cross_entropy(out.expr_logits, labels.expr, weights.class_weights, labels.task_mask(Task::expr)),
                 result.expr);
    }
    if (trains(task, Task::au)) {
        add_term(bce_multilabel(out.au_logits, au_label_bits(labels), weights.au_pos_weights, labels.task_mask(Task::au)),
                 result.au);
    }
    return result;
}

WindowIndex index_windows(const Dataset& data, std::size_t win_len, std::size_t stride) {
    WindowIndex idx;
    for (std::size_t v = 0; v < data.videos.size(); ++v) {
        const auto& video = data.videos[v];
        for (const auto& span : make_windows(video.features.length(), &video.labels, win_len, stride, v)) {
            idx.spans.push_back(span);
            idx.classes.push_back(window_class(video.labels.slice(span.start, span.length)));
        }
    }
    return idx;
}

std::vector<std::size_t> epoch_order(const WindowIndex& windows, const TrainConfig& cfg, std::uint64_t epoch) {
    const std::size_t n = windows.spans.size();
    if (n == 0) throw DataError("training split yields no windows");
    const std::uint64_t seed = derive_seed(cfg.seed, {kSamplerStream, epoch});
    const bool balanced = cfg.sampler == "balanced" ||
                          (cfg.sampler == "auto" && (cfg.task == TrainTask::expr || cfg.task == TrainTask::multi));
    if (!balanced) return shuffled_indices(n, seed);
    BalancedSampler sampler(windows.classes, seed);
    std::vector<std::size_t> order(n);
    for (auto& i : order) i = sampler.next();
    return order;
}

std::vector<WindowLoss> batch_gradient(Model& model, std::span<const Window> windows,
                                       std::span<const std::uint64_t> dropout_seeds, TrainTask task,
                                       const TaskWeights& weights) {
    if (dropout_seeds.size() != windows.size()) throw ContractError("one dropout seed per window required");
    const auto params = model.params().named();
    for (auto [name, p] : params) p.zero_grad();
    std::vector<WindowLoss> losses;
    std::size_t used = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        Rng dropout_rng(dropout_seeds[i]);
        Tape tape;
        TapeScope scope(tape);
        const auto out = model.forward(windows[i].to_tensor(), Mode::train, &dropout_rng);
        auto loss = window_loss(out, windows[i].labels, task, weights);
        if (loss.total) {
            tape.backward(*loss.total);
            ++used;
        }
        losses.push_back(std::move(loss));
    }
    if (used > 1) {
        const double inv = 1.0 / static_cast<double>(used);
        for (auto [name, p] : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.mutable_grad()) g *= inv;
        }
    }
    return losses;
}

EpochStats train_epoch(Model& model, const Dataset& data, const WindowIndex& windows, AdamState& adam,
                       const TrainConfig& cfg, const TaskWeights& weights, std::uint64_t epoch) {
    const auto order = epoch_order(windows, cfg, epoch);
    const auto params = model.params().named();
    EpochStats stats;
    double total = 0.0, sums[3] = {0, 0, 0};
    std::size_t counts[3] = {0, 0, 0}, used = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
        const std::size_t last = std::min(order.size(), first + cfg.batch_size);
        std::vector<Window> batch;
        std::vector<std::uint64_t> seeds;
        for (std::size_t pos = first; pos < last; ++pos) {
            Rng aug_rng(derive_seed(cfg.seed, {kAugmentStream, epoch, pos}));
            batch.push_back(augment_window(materialize(data, windows.spans[order[pos]]), cfg.augment, aug_rng));
            seeds.push_back(derive_seed(cfg.seed, {kDropoutStream, epoch, pos}));
        }
        const auto losses = batch_gradient(model, batch, seeds, cfg.task, weights);
        std::size_t batch_used = 0;
        for (const auto& l : losses) {
            ++stats.windows;
            if (!l.total) {
                ++stats.skipped_windows;
                continue;
            }
            ++batch_used;
            total += l.total->item();
            const std::optional<double>* parts[3] = {&l.va, &l.expr, &l.au};
            for (int k = 0; k < 3; ++k) {
                if (*parts[k]) sums[k] += **parts[k], ++counts[k];
            }
        }
        if (batch_used == 0) {
            ++stats.skipped_batches;
            continue;
        }
        used += batch_used;
        adam_step(params, adam);
        ++stats.steps;
    }
    for (auto [name, p] : params) p.zero_grad();
    if (used > 0) stats.loss = total / static_cast<double>(used);
    std::optional<double>* outs[3] = {&stats.va_loss, &stats.expr_loss, &stats.au_loss};
    for (int k = 0; k < 3; ++k) {
        if (counts[k]) *outs[k] = sums[k] / static_cast<double>(counts[k]);
    }
    return stats;
}

FramePredictions predict_sequence(const Model& model, const FeatureSequence& seq, std::size_t win_len,
                                  std::size_t stride, std::size_t batch_size, std::size_t threads) {
    if (seq.dim != model.config().d_v) {
        throw DimensionError("features of '" + seq.video_id + "' have dim " + std::to_string(seq.dim) +
                             ", model expects " + std::to_string(model.config().d_v));
    }
    const auto spans = make_windows(seq.length(), nullptr, win_len, stride);
    std::vector<TaskOutputs> outputs(spans.size());
    auto run = [&](std::size_t i) {
        const auto& s = spans[i];
        std::vector<double> x(seq.features.begin() + static_cast<long>(s.start * seq.dim),
                              seq.features.begin() + static_cast<long>((s.start + s.length) * seq.dim));
        outputs[i] = model.forward(Tensor::from({s.length, seq.dim}, std::move(x)), Mode::infer);
    };
    const std::size_t chunk = std::max<std::size_t>(1, batch_size);
    const std::size_t num_chunks = (spans.size() + chunk - 1) / chunk;
    const std::size_t workers = std::min(threads, num_chunks);
    if (workers <= 1) {
        for (std::size_t i = 0; i < spans.size(); ++i) run(i);
    } else {
        // Each window writes only its own slot, so the schedule cannot change the result.
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t c; (c = next.fetch_add(1)) < num_chunks;) {
                    for (std::size_t i = c * chunk; i < std::min(spans.size(), (c + 1) * chunk); ++i) run(i);
                }
            });
        }
    }

    const std::size_t T = seq.length();
    FramePredictions pred;
    pred.va.resize(2 * T);
    pred.expr.resize(T);
    pred.au.resize(kNumActionUnits * T);
    std::vector<double> best_dist(T, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const auto& s = spans[i];
        const double center = static_cast<double>(s.start) + 0.5 * static_cast<double>(s.length - 1);
        const auto& out = outputs[i];
        for (std::size_t r = 0; r < s.length; ++r) {
            const std::size_t t = s.start + r;
            const double dist = std::abs(static_cast<double>(t) - center);
            if (!(dist < best_dist[t])) continue;
            best_dist[t] = dist;
            pred.va[2 * t] = out.va.at(r, 0);
            pred.va[2 * t + 1] = out.va.at(r, 1);
            const auto logits = out.expr_logits.data().subspan(r * kNumExpressions, kNumExpressions);
            pred.expr[t] = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
            for (std::size_t u = 0; u < kNumActionUnits; ++u) pred.au[t * kNumActionUnits + u] = out.au_logits.at(r, u) > 0.0;
        }
    }
    return pred;
}

MetricReport evaluate(const Model& model, const Dataset& data, const TrainConfig& cfg) {
    std::vector<double> va_pred[2], va_gold[2];
    std::vector<int> expr_pred, expr_gold;
    std::vector<std::uint8_t> au_pred, au_gold;
    for (const auto& video : data.videos) {
        const auto pred = predict_sequence(model, video.features, cfg.win_len, cfg.stride, cfg.eval_batch_size, cfg.threads);
        const auto& l = video.labels;
        for (std::size_t t = 0; t < l.length(); ++t) {
            if (l.va_valid(t)) {
                for (int k = 0; k < 2; ++k) {
                    va_pred[k].push_back(pred.va[2 * t + k]);
                    va_gold[k].push_back(l.va[2 * t + k]);
                }
            }
            if (l.expr_valid(t)) {
                expr_pred.push_back(pred.expr[t]);
                expr_gold.push_back(l.expr[t]);
            }
            if (l.au_valid(t)) {
                for (std::size_t u = 0; u < kNumActionUnits; ++u) {
                    au_pred.push_back(pred.au[t * kNumActionUnits + u]);
                    au_gold.push_back(l.au[t * kNumActionUnits + u] == 1);
                }
            }
        }
    }
    MetricReport report;
    report.frames_va = va_gold[0].size();
    report.frames_expr = expr_gold.size();
    report.frames_au = au_gold.size() / kNumActionUnits;
    if (report.frames_va > 0) {
        report.ccc_valence = ccc(va_pred[0], va_gold[0]);
        report.ccc_arousal = ccc(va_pred[1], va_gold[1]);
        report.ccc_mean = 0.5 * (*report.ccc_valence + *report.ccc_arousal);
    }
    if (report.frames_expr > 0) report.expr_macro_f1 = macro_f1(expr_pred, expr_gold, kNumExpressions);
    if (report.frames_au > 0) {
        auto f = au_f1(au_pred, au_gold, kNumActionUnits);
        report.au_f1_per_unit = std::move(f.per_unit);
        report.au_f1_mean = f.mean;
    }
    return report;
}

FitResult fit(RunConfig cfg, const Dataset& train, const Dataset& val, const FitOptions& options) {
    if (cfg.model.d_v != 0 && cfg.model.d_v != train.dim) {
        throw DimensionError("config model.d_v " + std::to_string(cfg.model.d_v) + " does not match the training dim " +
                             std::to_string(train.dim));
    }
    if (val.dim != train.dim) {
        throw DimensionError("validation features have dim " + std::to_string(val.dim) + ", training features " +
                             std::to_string(train.dim));
    }
    cfg.model.d_v = train.dim;
    cfg.model.seed = cfg.train.seed;
    cfg.validate();
    const TrainTask task = cfg.train.task;
    for (Task t : {Task::va, Task::expr, Task::au}) {
        if (!trains(task, t)) continue;
        if (train.count_valid(t) == 0 || val.count_valid(t) == 0) {
            throw ConfigError(std::string("task/label mismatch: task '") + task_name(task) + "' needs " + task_label(t) +
                              " labels but the " + (train.count_valid(t) == 0 ? "training" : "validation") +
                              " split has none");
        }
    }
    const std::string metric = tracked_metric_name(task_name(task));
    const TaskWeights weights = compute_task_weights(train, cfg.train);
    const WindowIndex windows = index_windows(train, cfg.train.win_len, cfg.train.stride);
    if (windows.spans.empty()) throw DataError("training split yields no windows");

    const auto& dir = options.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    const auto log_path = dir / "train.log", best_path = dir / "best.afck", last_path = dir / "last.afck";

    Checkpoint state;
    std::string log;
    std::optional<Checkpoint> best;
    if (options.resume) {
        state = load_checkpoint(last_path);
        if (format_config(state.config, false) != format_config(cfg, false)) {
            throw ConfigError("cannot resume: the config differs from the one stored in " + last_path.string());
        }
        if (std::filesystem::exists(best_path)) best = load_checkpoint(best_path);
        // Keep the log lines of the epochs the checkpoint covers.
        if (std::filesystem::exists(log_path)) {
            const std::string old = read_file_text(log_path);
            std::size_t pos = 0;
            while (pos < old.size()) {
                std::size_t end = old.find('\n', pos);
                if (end == std::string::npos) end = old.size();
                const std::string line = old.substr(pos, end - pos);
                pos = end + 1;
                unsigned long long e = 0;
                if (std::sscanf(line.c_str(), "epoch=%llu", &e) == 1 && e <= state.epoch) log += line + "\n";
            }
        }
    } else {
        state.config = cfg;
        state.params = init_params(cfg.model, cfg.model.seed);
        state.adam = make_adam_state(state.params, cfg.train.adam);
        state.metric = metric;
        state.best_score = -std::numeric_limits<double>::infinity();
        state.rng_seed = cfg.train.seed;
        std::filesystem::remove(best_path, ec);
        std::filesystem::remove(last_path, ec);
    }
    Model model(state.config.model, state.params);

    auto record_epoch = [&](std::uint64_t epoch, const MetricReport& report, const EpochStats* stats) {
        const double score = tracked_score(report, task_name(task));
        std::string line = "epoch=" + std::to_string(epoch) + " " + report.to_line() + " tracked=" + metric +
                           " score=" + fmt("%.17g", score);
        if (stats) {
            line += " train_loss=" + fmt("%.6f", stats->loss) + " skipped=" + std::to_string(stats->skipped_windows);
        }
        log += line + "\n";
        write_file_text(log_path, log);
        if (options.on_epoch) options.on_epoch(line);
        state.epoch = epoch;
        state.params = model.params();
        if (score > state.best_score) {
            state.best_score = score;
            state.best_epoch = epoch;
            save_checkpoint(best_path, state);
            best = state;
            best->params = clone_params(state.config.model, state.params);
        }
        save_checkpoint(last_path, state);
        return score;
    };

    FitResult result;
    if (!options.resume && cfg.train.epochs == 0) {
        result.epoch_scores.push_back(record_epoch(0, evaluate(model, val, cfg.train), nullptr));
    }
    for (std::uint64_t epoch = state.epoch + 1; epoch <= cfg.train.epochs; ++epoch) {
        const EpochStats stats = train_epoch(model, train, windows, state.adam, cfg.train, weights, epoch);
        result.epoch_scores.push_back(record_epoch(epoch, evaluate(model, val, cfg.train), &stats));
    }
    if (!best) throw ContractError("fit finished without a best checkpoint in " + dir.string());
    result.best = std::move(*best);
    return result;
}

}  // namespace affect
