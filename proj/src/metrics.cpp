#include "affect/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "affect/error.hpp"

namespace affect {

namespace {

struct Moments {
    double mean_p = 0.0, mean_g = 0.0, var_p = 0.0, var_g = 0.0, cov = 0.0;
};

Moments moments(const std::vector<double>& p, const std::vector<double>& g) {
    const double n = static_cast<double>(p.size());
    Moments m;
    for (std::size_t i = 0; i < p.size(); ++i) {
        m.mean_p += p[i];
        m.mean_g += g[i];
    }
    m.mean_p /= n;
    m.mean_g /= n;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double dp = p[i] - m.mean_p, dg = g[i] - m.mean_g;
        m.var_p += dp * dp;
        m.var_g += dg * dg;
        m.cov += dp * dg;
    }
    m.var_p /= n;
    m.var_g /= n;
    m.cov /= n;
    return m;
}

double ccc_from(const Moments& m) {
    const double diff = m.mean_p - m.mean_g;
    const double denom = m.var_p + m.var_g + diff * diff;
    if (denom == 0.0) return 1.0;
    return 2.0 * m.cov / denom;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_rows(const Tensor& t, std::size_t cols, std::size_t mask_len, const char* op) {
    if (t.rank() != 2 || t.dim(1) != cols || t.dim(0) != mask_len) {
        throw DimensionError(std::string(op) + ": expected " + std::to_string(mask_len) + "x" + std::to_string(cols) +
                             " input, got " + shape_str(t.shape()));
    }
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

double ccc(std::span<const double> pred, std::span<const double> gold) {
    if (pred.empty() || gold.empty()) throw EvaluationError("ccc: empty input");
    if (pred.size() != gold.size()) {
        throw EvaluationError("ccc: length mismatch " + std::to_string(pred.size()) + " vs " +
                              std::to_string(gold.size()));
    }
    return ccc_from(moments({pred.begin(), pred.end()}, {gold.begin(), gold.end()}));
}

std::optional<Tensor> ccc_loss(const Tensor& pred, std::span<const double> gold, std::span<const std::uint8_t> mask) {
    check_rows(pred, 2, mask.size(), "ccc_loss");
    if (gold.size() != 2 * mask.size()) throw DimensionError("ccc_loss: gold must be T×2");
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t < mask.size(); ++t)
        if (mask[t]) rows.push_back(t);
    if (rows.size() < 2) return std::nullopt;

    const double n = static_cast<double>(rows.size());
    const std::size_t T = mask.size();
    std::vector<double> grad(T * 2, 0.0);
    double loss = 1.0;
    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<double> p, g;
        for (std::size_t t : rows) {
            p.push_back(pred.data()[t * 2 + c]);
            g.push_back(gold[t * 2 + c]);
        }
        const Moments m = moments(p, g);
        const double diff = m.mean_p - m.mean_g;
        const double denom = m.var_p + m.var_g + diff * diff;
        loss -= 0.5 * ccc_from(m);
        if (denom == 0.0) continue;
        const double num = 2.0 * m.cov;
        // d ccc / d p_i = [2 (g_i - mean_g) D - num (2 (p_i - mean_p) + 2 diff)] / (n D^2)
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double dccc =
                (2.0 * (g[i] - m.mean_g) * denom - num * (2.0 * (p[i] - m.mean_p) + 2.0 * diff)) / (n * denom * denom);
            grad[rows[i] * 2 + c] = -0.5 * dccc;
        }
    }
    return make_result({}, {loss}, {pred}, [pred, grad = std::move(grad)](std::span<const double> g) {
        std::vector<double> d(grad);
        for (double& v : d) v *= g[0];
        pred.accumulate_grad(d);
    });
}

std::optional<Tensor> weighted_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                             std::span<const double> class_weights,
                                             std::span<const std::uint8_t> mask) {
    const std::size_t C = class_weights.size();
    check_rows(logits, C, mask.size(), "weighted_cross_entropy");
    if (labels.size() != mask.size()) throw DimensionError("weighted_cross_entropy: labels/mask length mismatch");
    for (double w : class_weights)
        if (!(w > 0.0)) throw ContractError("weighted_cross_entropy: class weights must be positive");

    const std::size_t T = mask.size();
    std::size_t valid = 0;
    for (std::size_t t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= C) {
            throw DataError("weighted_cross_entropy: label " + std::to_string(labels[t]) + " out of range at frame " +
                            std::to_string(t));
        }
        ++valid;
    }
    if (valid == 0) return std::nullopt;

    const auto Z = logits.data();
    const double n = static_cast<double>(valid);
    double loss = 0.0;
    std::vector<double> grad(T * C, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        const double* row = Z.data() + t * C;
        const double mx = *std::max_element(row, row + C);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        const double lse = mx + std::log(z);
        const auto y = static_cast<std::size_t>(labels[t]);
        const double w = class_weights[y];
        loss += w * (lse - row[y]) / n;
        for (std::size_t c = 0; c < C; ++c) {
            const double prob = std::exp(row[c] - lse);
            grad[t * C + c] = w * (prob - (c == y ? 1.0 : 0.0)) / n;
        }
    }
    return make_result({}, {loss}, {logits}, [logits, grad = std::move(grad)](std::span<const double> g) {
        std::vector<double> d(grad);
        for (double& v : d) v *= g[0];
        logits.accumulate_grad(d);
    });
}

std::optional<Tensor> bce_multilabel(const Tensor& logits, std::span<const std::uint8_t> labels,
                                     std::span<const double> pos_weights, std::span<const std::uint8_t> mask) {
    const std::size_t U = pos_weights.size();
    check_rows(logits, U, mask.size(), "bce_multilabel");
    if (labels.size() != mask.size() * U) throw DimensionError("bce_multilabel: labels must be T×units");
    for (double w : pos_weights)
        if (!(w > 0.0)) throw ContractError("bce_multilabel: positive weights must be positive");

    const std::size_t T = mask.size();
    std::size_t valid_frames = 0;
    for (std::size_t t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        ++valid_frames;
        for (std::size_t u = 0; u < U; ++u)
            if (labels[t * U + u] > 1) {
                throw DataError("bce_multilabel: non-binary label at frame " + std::to_string(t) + ", unit " +
                                std::to_string(u));
            }
    }
    if (valid_frames == 0) return std::nullopt;

    const auto Z = logits.data();
    const double cells = static_cast<double>(valid_frames * U);
    double loss = 0.0;
    std::vector<double> grad(T * U, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        for (std::size_t u = 0; u < U; ++u) {
            const double z = Z[t * U + u];
            if (labels[t * U + u]) {
                // -log sigmoid(z) = softplus(-z)
                loss += pos_weights[u] * softplus(-z) / cells;
                grad[t * U + u] = pos_weights[u] * (sigmoid(z) - 1.0) / cells;
            } else {
                // -log(1 - sigmoid(z)) = softplus(z)
                loss += softplus(z) / cells;
                grad[t * U + u] = sigmoid(z) / cells;
            }
        }
    }
    return make_result({}, {loss}, {logits}, [logits, grad = std::move(grad)](std::span<const double> g) {
        std::vector<double> d(grad);
        for (double& v : d) v *= g[0];
        logits.accumulate_grad(d);
    });
}

double macro_f1(std::span<const int> pred, std::span<const int> gold, std::size_t num_classes) {
    if (pred.empty() || gold.empty()) throw EvaluationError("macro_f1: empty input");
    if (pred.size() != gold.size()) throw EvaluationError("macro_f1: length mismatch");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        for (int v : {pred[i], gold[i]})
            if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
                throw EvaluationError("macro_f1: label " + std::to_string(v) + " out of range at index " +
                                      std::to_string(i));
            }
        const auto p = static_cast<std::size_t>(pred[i]), g = static_cast<std::size_t>(gold[i]);
        if (p == g) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[g];
        }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
        if (denom) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    }
    return sum / static_cast<double>(num_classes);
}

AuF1 au_f1(std::span<const std::uint8_t> pred_bits, std::span<const std::uint8_t> gold_bits, std::size_t units) {
    if (pred_bits.empty() || gold_bits.empty()) throw EvaluationError("au_f1: empty input");
    if (pred_bits.size() != gold_bits.size() || units == 0 || pred_bits.size() % units != 0) {
        throw EvaluationError("au_f1: bit matrices must share an N×" + std::to_string(units) + " shape");
    }
    const std::size_t n = pred_bits.size() / units;
    AuF1 out;
    out.per_unit.assign(units, 0.0);
    for (std::size_t u = 0; u < units; ++u) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool p = pred_bits[i * units + u] != 0, g = gold_bits[i * units + u] != 0;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
        const std::size_t denom = 2 * tp + fp + fn;
        out.per_unit[u] = denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
    }
    double sum = 0.0;
    for (double v : out.per_unit) sum += v;
    out.mean = sum / static_cast<double>(units);
    return out;
}

std::vector<double> inverse_frequency_weights(std::span<const int> labels, std::size_t num_classes) {
    std::vector<double> counts(num_classes, 0.0);
    for (int y : labels)
        if (y >= 0 && static_cast<std::size_t>(y) < num_classes) counts[static_cast<std::size_t>(y)] += 1.0;
    std::vector<double> w(num_classes, 1.0);
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] > 0.0) {
            w[c] = 1.0 / counts[c];
            sum += w[c];
            ++present;
        }
    }
    if (present == 0) return w;
    const double norm = static_cast<double>(present) / sum;
    for (std::size_t c = 0; c < num_classes; ++c)
        if (counts[c] > 0.0) w[c] *= norm;
    return w;
}

std::vector<double> au_pos_weights(std::span<const std::uint8_t> bits, std::size_t units) {
    std::vector<double> w(units, 1.0);
    if (units == 0 || bits.empty()) return w;
    const std::size_t n = bits.size() / units;
    for (std::size_t u = 0; u < units; ++u) {
        std::size_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) pos += bits[i * units + u] != 0;
        if (pos == 0 || pos == n) continue;
        w[u] = std::clamp(static_cast<double>(n - pos) / static_cast<double>(pos), 0.1, 10.0);
    }
    return w;
}

std::string MetricReport::omitted() const {
    std::string out;
    auto add = [&](bool missing, const char* name) {
        if (!missing) return;
        if (!out.empty()) out += ",";
        out += name;
    };
    add(!ccc_mean, "va");
    add(!expr_macro_f1, "expr");
    add(!au_f1_mean, "au");
    return out.empty() ? "none" : out;
}

namespace {

std::vector<std::pair<std::string, std::string>> report_pairs(const MetricReport& r) {
    std::vector<std::pair<std::string, std::string>> kv;
    if (r.ccc_mean) {
        kv.emplace_back("ccc_valence", fixed6(*r.ccc_valence));
        kv.emplace_back("ccc_arousal", fixed6(*r.ccc_arousal));
        kv.emplace_back("ccc_mean", fixed6(*r.ccc_mean));
    }
    if (r.expr_macro_f1) kv.emplace_back("expr_macro_f1", fixed6(*r.expr_macro_f1));
    if (r.au_f1_mean) {
        for (std::size_t u = 0; u < r.au_f1_per_unit.size(); ++u) {
            kv.emplace_back("au_f1_" + std::to_string(u), fixed6(r.au_f1_per_unit[u]));
        }
        kv.emplace_back("au_f1_mean", fixed6(*r.au_f1_mean));
    }
    kv.emplace_back("frames_va", std::to_string(r.frames_va));
    kv.emplace_back("frames_expr", std::to_string(r.frames_expr));
    kv.emplace_back("frames_au", std::to_string(r.frames_au));
    kv.emplace_back("omitted", r.omitted());
    return kv;
}

}  // namespace

std::string MetricReport::to_flat() const {
    std::string out;
    for (const auto& [k, v] : report_pairs(*this)) out += k + "=" + v + "\n";
    return out;
}

std::string MetricReport::to_line() const {
    std::string out;
    for (const auto& [k, v] : report_pairs(*this)) {
        if (!out.empty()) out += " ";
        out += k + "=" + v;
    }
    return out;
}

std::string tracked_metric_name(const std::string& task) {
    if (task == "va") return "ccc_mean";
    if (task == "expr") return "expr_macro_f1";
    if (task == "au") return "au_f1_mean";
    if (task == "multi") return "multi_mean";
    throw ConfigError("unknown task '" + task + "' (expected va, expr, au or multi)");
}

double tracked_score(const MetricReport& r, const std::string& task) {
    auto need = [&](const std::optional<double>& v, const char* track) {
        if (!v) throw EvaluationError(std::string("validation data has no annotated ") + track + " frames");
        return *v;
    };
    if (task == "va") return need(r.ccc_mean, "va");
    if (task == "expr") return need(r.expr_macro_f1, "expr");
    if (task == "au") return need(r.au_f1_mean, "au");
    if (task == "multi") {
        return (need(r.ccc_mean, "va") + need(r.expr_macro_f1, "expr") + need(r.au_f1_mean, "au")) / 3.0;
    }
    throw ConfigError("unknown task '" + task + "'");
}

}  // namespace affect
