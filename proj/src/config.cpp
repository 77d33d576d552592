#include "affect/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>

#include "affect/error.hpp"

namespace affect {

namespace {

std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

ConfigError bad_value(std::string_view key, std::string_view value, const char* expected) {
    return ConfigError("config: " + std::string(key) + " = '" + std::string(value) + "' is not " + expected);
}

std::size_t to_size(std::string_view key, std::string_view v) {
    std::uint64_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw bad_value(key, v, "a non-negative integer");
    return static_cast<std::size_t>(x);
}

double to_real(std::string_view key, std::string_view v) {
    double x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x)) throw bad_value(key, v, "a finite number");
    return x;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw bad_value(key, v, "true or false");
}

std::string real_str(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

struct Entry {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
};

#define SIZE_ENTRY(field) \
    Entry{[](const RunConfig& c) { return std::to_string(c.field); }, \
          [](RunConfig& c, std::string_view k, std::string_view v) { c.field = to_size(k, v); }}
#define REAL_ENTRY(field) \
    Entry{[](const RunConfig& c) { return real_str(c.field); }, \
          [](RunConfig& c, std::string_view k, std::string_view v) { c.field = to_real(k, v); }}
#define BOOL_ENTRY(field) \
    Entry{[](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
          [](RunConfig& c, std::string_view k, std::string_view v) { c.field = to_bool(k, v); }}

const std::map<std::string, Entry, std::less<>>& entries() {
    static const std::map<std::string, Entry, std::less<>> table = {
        {"model.d_v", SIZE_ENTRY(model.d_v)},
        {"model.d_m", SIZE_ENTRY(model.d_m)},
        {"model.num_heads", SIZE_ENTRY(model.num_heads)},
        {"model.d_k", SIZE_ENTRY(model.d_k)},
        {"model.d_ffn", SIZE_ENTRY(model.d_ffn)},
        {"model.num_layers", SIZE_ENTRY(model.num_layers)},
        {"model.conv_kernel", SIZE_ENTRY(model.conv_kernel)},
        {"model.max_T", SIZE_ENTRY(model.max_T)},
        {"model.dropout", REAL_ENTRY(model.dropout_rate)},
        {"model.positional_encoding", BOOL_ENTRY(model.positional_encoding)},
        {"train.task",
         Entry{[](const RunConfig& c) { return std::string(task_name(c.train.task)); },
               [](RunConfig& c, std::string_view, std::string_view v) { c.train.task = parse_task(v); }}},
        {"train.lr", REAL_ENTRY(train.adam.lr)},
        {"train.beta1", REAL_ENTRY(train.adam.beta1)},
        {"train.beta2", REAL_ENTRY(train.adam.beta2)},
        {"train.eps", REAL_ENTRY(train.adam.eps)},
        {"train.batch_size", SIZE_ENTRY(train.batch_size)},
        {"train.eval_batch_size", SIZE_ENTRY(train.eval_batch_size)},
        {"train.win_len", SIZE_ENTRY(train.win_len)},
        {"train.stride", SIZE_ENTRY(train.stride)},
        {"train.epochs", SIZE_ENTRY(train.epochs)},
        {"train.sampler",
         Entry{[](const RunConfig& c) { return c.train.sampler; },
               [](RunConfig& c, std::string_view k, std::string_view v) {
                   if (v != "auto" && v != "balanced" && v != "shuffle") throw bad_value(k, v, "auto, balanced or shuffle");
                   c.train.sampler = std::string(v);
               }}},
        {"train.class_weighting", BOOL_ENTRY(train.class_weighting)},
        {"train.au_pos_weighting", BOOL_ENTRY(train.au_pos_weighting)},
        {"train.threads", SIZE_ENTRY(train.threads)},
        {"train.seed", SIZE_ENTRY(train.seed)},
        {"augment.noise_prob", REAL_ENTRY(train.augment.noise_prob)},
        {"augment.noise_sigma", REAL_ENTRY(train.augment.noise_sigma)},
        {"augment.crop_prob", REAL_ENTRY(train.augment.crop_prob)},
        {"augment.crop_min_fraction", REAL_ENTRY(train.augment.crop_min_fraction)},
        {"augment.frame_dropout_prob", REAL_ENTRY(train.augment.frame_dropout_prob)},
        {"augment.frame_dropout_max_fraction", REAL_ENTRY(train.augment.frame_dropout_max_fraction)},
    };
    return table;
}

#undef SIZE_ENTRY
#undef REAL_ENTRY
#undef BOOL_ENTRY

}  // namespace

TrainTask parse_task(std::string_view name) {
    if (name == "va") return TrainTask::va;
    if (name == "expr") return TrainTask::expr;
    if (name == "au") return TrainTask::au;
    if (name == "multi") return TrainTask::multi;
    throw ConfigError("unknown task '" + std::string(name) + "' (expected va, expr, au or multi)");
}

const char* task_name(TrainTask task) {
    switch (task) {
        case TrainTask::va: return "va";
        case TrainTask::expr: return "expr";
        case TrainTask::au: return "au";
        case TrainTask::multi: return "multi";
    }
    return "?";
}

void RunConfig::validate() const {
    if (model.d_v != 0) model.validate();
    const auto& t = train;
    if (t.batch_size == 0 || t.eval_batch_size == 0) throw ConfigError("batch sizes must be at least 1");
    if (t.win_len == 0 || t.stride == 0) throw ConfigError("train.win_len and train.stride must be at least 1");
    if (t.stride > t.win_len) throw ConfigError("train.stride must not exceed train.win_len, or frames are skipped");
    if (t.win_len > model.max_T) {
        throw ConfigError("train.win_len " + std::to_string(t.win_len) + " exceeds model.max_T " +
                          std::to_string(model.max_T));
    }
    if (t.threads == 0) throw ConfigError("train.threads must be at least 1");
    if (!(t.adam.lr > 0.0) || !(t.adam.eps > 0.0)) throw ConfigError("train.lr and train.eps must be positive");
    for (double b : {t.adam.beta1, t.adam.beta2}) {
        if (!(b >= 0.0 && b < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
    }
    t.augment.validate();
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
    const auto it = entries().find(key);
    if (it == entries().end()) throw ConfigError("config: unknown key '" + std::string(key) + "'");
    it->second.set(cfg, key, value);
}

RunConfig parse_config_text(std::string_view text, RunConfig cfg) {
    std::string section;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        ++line_no;
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view raw = text.substr(pos, end - pos);
        pos = end + 1;
        if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key = trim(std::string_view(line).substr(0, eq));
        if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
        apply_setting(cfg, key, trim(std::string_view(line).substr(eq + 1)));
    }
    return cfg;
}

std::string format_config(const RunConfig& cfg, bool with_run_settings) {
    std::string out;
    for (const auto& [key, entry] : entries()) {
        if (!with_run_settings && (key == "train.epochs" || key == "train.threads")) continue;
        out += key + " = " + entry.get(cfg) + "\n";
    }
    return out;
}

}  // namespace affect
