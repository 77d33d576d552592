#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "affect/checkpoint.hpp"
#include "affect/config.hpp"
#include "affect/data.hpp"
#include "affect/metrics.hpp"
#include "affect/model.hpp"

namespace affect {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// One Adam update from the gradients stored on params (a parameter without a
// gradient counts as zero). Every gradient is checked before anything is
// modified; a non-finite entry throws NumericError naming the parameter.
void adam_step(const NamedParams& params, AdamState& state);

// Loss weights derived from the training split.
struct TaskWeights {
    std::vector<double> class_weights;   // 8, for weighted cross-entropy
    std::vector<double> au_pos_weights;  // 12, for the AU binary cross-entropy
};

TaskWeights compute_task_weights(const Dataset& train, const TrainConfig& cfg);

struct WindowLoss {
    std::optional<Tensor> total;  // nullopt when no task had a valid frame
    std::optional<double> va, expr, au;
};

// Sum of the losses of the tasks trained under `task`, each on its valid frames.
WindowLoss window_loss(const TaskOutputs& out, const LabelSet& labels, TrainTask task, const TaskWeights& weights);

struct EpochStats {
    double loss = 0.0;  // mean total loss over windows that produced one
    std::optional<double> va_loss, expr_loss, au_loss;
    std::size_t windows = 0;
    std::size_t skipped_windows = 0;  // no valid frame for the trained task
    std::size_t skipped_batches = 0;  // every window skipped, no update
    std::size_t steps = 0;
};

// Training windows of a split and their sampling classes.
struct WindowIndex {
    std::vector<WindowSpan> spans;
    std::vector<int> classes;  // window_class of each span
};

WindowIndex index_windows(const Dataset& data, std::size_t win_len, std::size_t stride);

// Window order of one epoch: windows.spans.size() draws from the balanced
// sampler or one shuffled pass, seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(const WindowIndex& windows, const TrainConfig& cfg, std::uint64_t epoch);

// Replaces the parameter gradients with the mean gradient of the window
// losses; windows without a loss are left out of the mean. dropout_seeds has
// one entry per window. Returns each window's losses.
std::vector<WindowLoss> batch_gradient(Model& model, std::span<const Window> windows,
                                       std::span<const std::uint64_t> dropout_seeds, TrainTask task,
                                       const TaskWeights& weights);

// Batches of cfg.batch_size windows; each window is augmented, run forward in
// train mode and backpropagated on its own tape. Gradients are averaged over
// the windows that produced a loss before one Adam step.
EpochStats train_epoch(Model& model, const Dataset& data, const WindowIndex& windows, AdamState& adam,
                       const TrainConfig& cfg, const TaskWeights& weights, std::uint64_t epoch);

struct FramePredictions {
    std::vector<double> va;              // T×2
    std::vector<int> expr;               // T, argmax class
    std::vector<std::uint8_t> au;        // T×12, logit > 0
};

// Inference over windows of one sequence. A frame covered by several windows
// takes the prediction of the window whose center is nearest, the earlier
// window on ties.
FramePredictions predict_sequence(const Model& model, const FeatureSequence& seq, std::size_t win_len,
                                  std::size_t stride, std::size_t batch_size = 16, std::size_t threads = 1);

// All metrics over the valid frames of every video. A task with no valid
// frame is omitted from the report.
MetricReport evaluate(const Model& model, const Dataset& data, const TrainConfig& cfg);

struct FitResult {
    Checkpoint best;
    std::vector<double> epoch_scores;  // index 0 is the first epoch run by this call
};

struct FitOptions {
    std::filesystem::path out_dir;
    bool resume = false;  // continue from out_dir/last.afck
    // Receives each train.log line as it is written.
    std::function<void(const std::string&)> on_epoch = nullptr;
};

// Epoch loop with validation after every epoch. Writes best.afck whenever the
// tracked score strictly improves, last.afck after every epoch and one line
// per epoch to train.log. epochs = 0 evaluates and saves the initial weights.
FitResult fit(RunConfig cfg, const Dataset& train, const Dataset& val, const FitOptions& options);

}  // namespace affect
