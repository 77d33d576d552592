#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "affect/tensor.hpp"

namespace affect {

// Concordance correlation coefficient with population moments.
// Both sequences constant and equal is defined as 1.
double ccc(std::span<const double> pred, std::span<const double> gold);

// 1 - mean CCC over the valence and arousal columns, recorded on the active
// tape. pred is T×2, gold is T×2 row-major, mask has T entries. Returns
// nullopt (skip signal) when fewer than two frames are valid.
std::optional<Tensor> ccc_loss(const Tensor& pred, std::span<const double> gold, std::span<const std::uint8_t> mask);

// Mean over valid frames of w[y] * -log softmax(logits)[y]. Labels of masked
// frames are ignored. Returns nullopt when no frame is valid.
std::optional<Tensor> weighted_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                             std::span<const double> class_weights,
                                             std::span<const std::uint8_t> mask);

// Mean over valid (frame, unit) cells of the positive-weighted binary cross
// entropy on sigmoid(logit). labels is T×U row-major with entries in {0,1}.
std::optional<Tensor> bce_multilabel(const Tensor& logits, std::span<const std::uint8_t> labels,
                                     std::span<const double> pos_weights, std::span<const std::uint8_t> mask);

// Unweighted mean of per-class F1; a class with no true positives, false
// positives or false negatives scores 0.
double macro_f1(std::span<const int> pred, std::span<const int> gold, std::size_t num_classes = 8);

struct AuF1 {
    std::vector<double> per_unit;
    double mean = 0.0;
};

// Per-column binary F1 over N×units bit matrices (0/0 counts as 0).
AuF1 au_f1(std::span<const std::uint8_t> pred_bits, std::span<const std::uint8_t> gold_bits, std::size_t units = 12);

// Inverse class frequency normalized to mean 1 over the classes present.
// Absent classes get weight 1.
std::vector<double> inverse_frequency_weights(std::span<const int> labels, std::size_t num_classes);

// Per-unit negatives/positives ratio clamped to [0.1, 10]; 1 for a unit with
// no positives or no negatives. bits is N×units.
std::vector<double> au_pos_weights(std::span<const std::uint8_t> bits, std::size_t units);

struct MetricReport {
    std::optional<double> ccc_valence;
    std::optional<double> ccc_arousal;
    std::optional<double> ccc_mean;
    std::optional<double> expr_macro_f1;
    std::vector<double> au_f1_per_unit;  // empty when the AU track is omitted
    std::optional<double> au_f1_mean;
    std::size_t frames_va = 0;
    std::size_t frames_expr = 0;
    std::size_t frames_au = 0;

    // "va,expr,au" subset of tracks that had no annotated frame, or "none".
    std::string omitted() const;

    // One `name=value` per line, values with six decimals.
    std::string to_flat() const;
    // Same pairs joined by single spaces, for one-line logs.
    std::string to_line() const;
};

// Metric the validation loop maximizes for a task ("va", "expr", "au",
// "multi"). Throws EvaluationError if the needed track is missing.
double tracked_score(const MetricReport& report, const std::string& task);
std::string tracked_metric_name(const std::string& task);

}  // namespace affect
