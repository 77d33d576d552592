#include "affect/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include "CLI11.hpp"
#include "affect/byte_io.hpp"
#include "affect/checkpoint.hpp"
#include "affect/config.hpp"
#include "affect/data.hpp"
#include "affect/error.hpp"
#include "affect/synth.hpp"
#include "affect/trainer.hpp"

namespace affect {

namespace {

namespace fs = std::filesystem;

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Seed from AFFECT_SEED, if set.
std::optional<std::uint64_t> env_seed() {
    const char* raw = std::getenv("AFFECT_SEED");
    if (!raw || !*raw) return std::nullopt;
    std::string_view s(raw);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw ConfigError("AFFECT_SEED='" + std::string(s) + "' is not a non-negative integer");
    }
    return v;
}

struct SynthArgs {
    std::string spec;
    std::string out;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

struct TrainArgs {
    std::string config, train_manifest, val_manifest, task, out;
    std::size_t epochs = 0, threads = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> sets;
    bool resume = false;
    CLI::Option *epochs_opt = nullptr, *seed_opt = nullptr, *threads_opt = nullptr;
};

struct EvalArgs {
    std::string checkpoint, manifest;
    std::size_t threads = 1;
};

struct PredictArgs {
    std::string checkpoint, features, out;
    std::size_t threads = 1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
    SynthSpec spec;
    if (auto s = env_seed()) spec.seed = *s;
    if (!a.spec.empty()) {
        const bool is_file = fs::is_regular_file(a.spec);
        spec = parse_synth_spec(is_file ? read_file_text(a.spec) : a.spec, spec);
    }
    if (a.seed_opt->count()) spec.seed = a.seed;
    spec.validate();
    err << "synthesizing " << spec.videos << "+" << spec.val_videos << " videos of " << spec.frames
        << " frames, seed " << spec.seed << "\n";
    const auto summary = synthesize_dataset(spec, a.out);
    out << "videos=" << summary.videos << "\n";
    out << "frames=" << summary.frames << "\n";
    out << "dim=" << spec.dim() << "\n";
    for (std::size_t c = 0; c < kNumExpressions; ++c) out << "class." << expression_name(static_cast<int>(c)) << "=" << summary.class_histogram[c] << "\n";
    out << "train_manifest=" << (fs::path(a.out) / "train.manifest").string() << "\n";
    if (spec.val_videos > 0) out << "val_manifest=" << (fs::path(a.out) / "val.manifest").string() << "\n";
    return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    if (auto s = env_seed()) cfg.train.seed = *s;
    if (!a.config.empty()) cfg = parse_config_text(read_file_text(a.config), cfg);
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(' '));
            s.erase(s.find_last_not_of(' ') + 1);
            return s;
        };
        apply_setting(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (!a.task.empty()) cfg.train.task = parse_task(a.task);
    if (a.epochs_opt->count()) cfg.train.epochs = a.epochs;
    if (a.seed_opt->count()) cfg.train.seed = a.seed;
    if (a.threads_opt->count()) cfg.train.threads = a.threads;
    cfg.validate();

    const Dataset train = load_dataset(read_manifest(a.train_manifest));
    const Dataset val = load_dataset(read_manifest(a.val_manifest));
    if (cfg.model.d_v == 0) cfg.model.d_v = train.dim;

    const std::string effective = format_config(cfg);
    err << "# effective config\n" << effective;
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw IoError("cannot create output directory " + a.out + ": " + ec.message());
    write_file_text(fs::path(a.out) / "config.txt", effective);

    FitOptions options{a.out, a.resume, [&](const std::string& line) { err << line << "\n"; }};
    const auto result = fit(cfg, train, val, options);
    out << "best_epoch=" << result.best.best_epoch << "\n";
    out << "metric=" << result.best.metric << "\n";
    out << "best_score=" << exact(result.best.best_score) << "\n";
    out << "checkpoint=" << (fs::path(a.out) / "best.afck").string() << "\n";
    return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Dataset data = load_dataset(read_manifest(a.manifest));
    if (data.dim != ck.config.model.d_v) {
        throw DimensionError("manifest features have dim " + std::to_string(data.dim) + " but the checkpoint expects " +
                             std::to_string(ck.config.model.d_v));
    }
    Model model(ck.config.model, ck.params);
    TrainConfig tc = ck.config.train;
    tc.threads = a.threads;
    const MetricReport report = evaluate(model, data, tc);
    out << report.to_flat();
    out << "tracked=" << ck.metric << "\n";
    try {
        out << "score=" << exact(tracked_score(report, task_name(tc.task))) << "\n";
    } catch (const EvaluationError&) {
        // The tracked track has no labels here; the report says which.
    }
    return kExitOk;
}

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    std::vector<std::string> paths;
    for (std::size_t pos = 0; pos <= a.features.size();) {
        const std::size_t comma = std::min(a.features.find(',', pos), a.features.size());
        if (comma > pos) paths.push_back(a.features.substr(pos, comma - pos));
        pos = comma + 1;
    }
    if (paths.empty() || paths.size() > 2) throw ConfigError("--features takes one or two comma-separated files");
    FeatureSequence seq = read_feature_file(paths[0]);
    if (paths.size() == 2) seq = merge_streams(seq, read_feature_file(paths[1]));
    if (seq.dim != ck.config.model.d_v) {
        throw DimensionError("features have dim " + std::to_string(seq.dim) + " but the checkpoint expects " +
                             std::to_string(ck.config.model.d_v));
    }
    Model model(ck.config.model, ck.params);
    const auto& tc = ck.config.train;
    const auto pred = predict_sequence(model, seq, tc.win_len, tc.stride, tc.eval_batch_size, a.threads);
    LabelSet labels;
    std::vector<int> bits(kNumActionUnits);
    for (std::size_t t = 0; t < seq.length(); ++t) {
        for (std::size_t u = 0; u < kNumActionUnits; ++u) bits[u] = pred.au[t * kNumActionUnits + u];
        labels.push_frame(seq.frame_ids[t], &pred.va[2 * t], pred.expr[t], bits.data(), true);
    }
    write_label_file(a.out, labels);
    err << "wrote " << seq.length() << " frame predictions for " << seq.video_id << "\n";
    out << "video_id=" << seq.video_id << "\n";
    out << "frames=" << seq.length() << "\n";
    out << "out=" << a.out << "\n";
    return kExitOk;
}

void inspect_features(const FeatureSequence& seq, std::ostream& out) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
    for (double v : seq.features) lo = std::min(lo, v), hi = std::max(hi, v), sum += v;
    out << "format=AFSQ\nversion=1\n";
    out << "video_id=" << seq.video_id << "\n";
    out << "frames=" << seq.length() << "\n";
    out << "dim=" << seq.dim << "\n";
    out << "first_frame=" << seq.frame_ids.front() << "\nlast_frame=" << seq.frame_ids.back() << "\n";
    out << "min=" << num(lo) << "\nmax=" << num(hi) << "\nmean=" << num(sum / static_cast<double>(seq.features.size())) << "\n";
}

void inspect_checkpoint(const Checkpoint& ck, std::ostream& out) {
    out << "format=AFCK\nversion=1\n";
    out << "epoch=" << ck.epoch << "\nbest_epoch=" << ck.best_epoch << "\n";
    out << "metric=" << ck.metric << "\nbest_score=" << exact(ck.best_score) << "\n";
    out << "adam_step=" << ck.adam.step << "\n";
    std::size_t total = 0;
    const auto named = ck.params.named();
    for (const auto& [name, p] : named) {
        std::string shape;
        for (auto e : p.shape()) shape += (shape.empty() ? "" : "x") + std::to_string(e);
        out << "param." << name << "=" << shape << "\n";
        total += p.numel();
    }
    out << "params=" << named.size() << "\nparam_values=" << total << "\n";
    const std::string cfg = format_config(ck.config, false);
    for (std::size_t pos = 0; pos < cfg.size();) {
        const std::size_t end = cfg.find('\n', pos);
        std::string line = cfg.substr(pos, end - pos);
        line.replace(line.find(" = "), 3, "=");
        out << "config." << line << "\n";
        pos = end + 1;
    }
}

void inspect_labels(const LabelSet& l, std::ostream& out) {
    out << "format=labels\nversion=1\n";
    out << "frames=" << l.length() << "\n";
    out << "valid_va=" << l.count_valid(Task::va) << "\nvalid_expr=" << l.count_valid(Task::expr)
        << "\nvalid_au=" << l.count_valid(Task::au) << "\n";
    std::vector<std::size_t> hist(kNumExpressions, 0);
    std::vector<std::size_t> au_on(kNumActionUnits, 0);
    double va_sum[2] = {0, 0};
    for (std::size_t t = 0; t < l.length(); ++t) {
        if (l.expr_valid(t)) ++hist[static_cast<std::size_t>(l.expr[t])];
        if (l.va_valid(t)) va_sum[0] += l.va[2 * t], va_sum[1] += l.va[2 * t + 1];
        if (l.au_valid(t))
            for (std::size_t u = 0; u < kNumActionUnits; ++u) au_on[u] += l.au[t * kNumActionUnits + u] == 1;
    }
    for (std::size_t c = 0; c < kNumExpressions; ++c) out << "class." << expression_name(static_cast<int>(c)) << "=" << hist[c] << "\n";
    if (const auto n = l.count_valid(Task::va)) {
        out << "valence_mean=" << num(va_sum[0] / static_cast<double>(n)) << "\n";
        out << "arousal_mean=" << num(va_sum[1] / static_cast<double>(n)) << "\n";
    }
    for (std::size_t u = 0; u < kNumActionUnits; ++u) out << "au" << u << "_active=" << au_on[u] << "\n";
}

int cmd_inspect(const std::string& file, std::ostream& out) {
    const auto bytes = read_file_bytes(file);
    const std::string_view head(reinterpret_cast<const char*>(bytes.data()), std::min<std::size_t>(bytes.size(), 32));
    try {
        if (head.starts_with("AFSQ")) {
            inspect_features(decode_feature_file(bytes), out);
        } else if (head.starts_with("AFCK")) {
            inspect_checkpoint(decode_checkpoint(bytes), out);
        } else if (head.starts_with("#affectlabels")) {
            inspect_labels(parse_label_file(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())), out);
        } else if (head.starts_with("#affectmanifest")) {
            const auto m = read_manifest(file);
            out << "format=manifest\nsplit=" << m.split << "\nvideos=" << m.records.size() << "\nstreams="
                << (m.records.empty() ? m.stream_dims.size() : m.records.front().feature_paths.size()) << "\n";
        } else {
            throw FormatError("unknown file format (expected AFSQ, AFCK, label or manifest file)", 0);
        }
    } catch (const FormatError& e) {
        throw e.with_context(file);
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Temporal transformer for frame-level affect recognition from pre-extracted face features", "affect"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "affect 1.0");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic train/val dataset with manifests");
    synth->add_option("--spec", sa.spec, "Spec file or inline key=value,key=value text");
    synth->add_option("--out", sa.out, "Output directory")->required();
    sa.seed_opt = synth->add_option("--seed", sa.seed, "Random seed (overrides the spec and AFFECT_SEED)");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train with best-on-validation checkpointing");
    train->add_option("--config", ta.config, "Config file (section.key = value)")->check(CLI::ExistingFile);
    train->add_option("--train-manifest", ta.train_manifest, "Training manifest")->required()->check(CLI::ExistingFile);
    train->add_option("--val-manifest", ta.val_manifest, "Validation manifest")->required()->check(CLI::ExistingFile);
    train->add_option("--task", ta.task, "va, expr, au or multi")->check(CLI::IsMember({"va", "expr", "au", "multi"}));
    ta.epochs_opt = train->add_option("--epochs", ta.epochs, "Number of training epochs");
    ta.seed_opt = train->add_option("--seed", ta.seed, "Random seed (overrides config and AFFECT_SEED)");
    ta.threads_opt = train->add_option("--threads", ta.threads, "Evaluation worker threads");
    train->add_option("--set", ta.sets, "Config override key=value, repeatable");
    train->add_flag("--resume", ta.resume, "Continue from <out>/last.afck");
    train->add_option("--out", ta.out, "Output directory")->required();

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and print the metric report");
    eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--manifest", ea.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    eval->add_option("--threads", ea.threads, "Worker threads")->check(CLI::PositiveNumber);

    PredictArgs pa;
    auto* predict = app.add_subcommand("predict", "Write per-frame predictions as a label file");
    predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    predict->add_option("--features", pa.features, "Feature file, or two comma-separated stream files")->required();
    predict->add_option("--out", pa.out, "Output label file")->required();
    predict->add_option("--threads", pa.threads, "Worker threads")->check(CLI::PositiveNumber);

    std::string inspect_file;
    auto* inspect = app.add_subcommand("inspect", "Describe an AFSQ, AFCK, label or manifest file");
    inspect->add_option("--file", inspect_file, "File to inspect")->required()->check(CLI::ExistingFile);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(sa, out, err);
        if (*train) return cmd_train(ta, out, err);
        if (*eval) return cmd_eval(ea, out, err);
        if (*predict) return cmd_predict(pa, out, err);
        if (*inspect) return cmd_inspect(inspect_file, out);
    } catch (const NumericError& e) {
        err << "error: training aborted: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace affect
