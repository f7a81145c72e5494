#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragnet/gat.hpp"
#include "ragnet/graph.hpp"

namespace ragnet {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    // Restart when validation accuracy is still below the threshold after
    // this many epochs.
    int stall_epochs = 10;
    double stall_threshold = 0.15;
    int max_restarts = 5;

    void validate() const;
};

// True when an attempt that reached `epoch` (1-based) with validation
// accuracy `val_accuracy` must be restarted.
bool should_restart(const TrainConfig& cfg, int epoch, double val_accuracy);

struct EpochRecord {
    int epoch = 0;  // 1-based
    double loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double seconds = 0.0;
    std::int64_t steps = 0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct AttemptRecord {
    std::uint64_t seed = 0;
    int epochs_run = 0;
    double last_val_accuracy = 0.0;
    bool restarted = false;

    friend bool operator==(const AttemptRecord&, const AttemptRecord&) = default;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;  // epochs of the final attempt
    std::vector<AttemptRecord> attempts;
    int best_epoch = 0;  // 0 when no epoch completed
    double best_val_accuracy = 0.0;
    std::optional<double> test_accuracy;
    int restarts = 0;
    std::int64_t optimizer_steps = 0;  // final attempt
    bool failed = false;
    std::string failure;
    int train_size = 0;
    int val_size = 0;

    std::string to_json() const;
    // Header "epoch,loss,train_acc,val_acc,seconds" plus one line per epoch.
    std::string log_csv() const;
};

// Report equality ignoring wall-clock fields.
bool same_outcome(const TrainReport& a, const TrainReport& b);

struct TrainHooks {
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(int attempt, const AttemptRecord&)> on_restart;
    // Called after every optimizer step with the mean batch loss.
    std::function<void(std::int64_t step, double loss)> on_step;
};

template <typename T>
struct TrainResult {
    GatModel<T> best_model;
    TrainReport report;
    nd::AdamState<T> optimizer;  // state at the end of the final attempt
};

// Splits `graphs` into train/validation with cfg.val_fraction and trains.
template <typename T>
TrainResult<T> train(const GatModelConfig& model_cfg, std::span<const RagGraph> graphs, const TrainConfig& cfg,
                     const TrainHooks& hooks = {});

// Explicit validation set.
template <typename T>
TrainResult<T> train(const GatModelConfig& model_cfg, std::span<const RagGraph> train_graphs,
                     std::span<const RagGraph> val_graphs, const TrainConfig& cfg, const TrainHooks& hooks = {});

struct EvalResult {
    double accuracy = 0.0;
    std::int64_t correct = 0;
    std::int64_t total = 0;
    std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
    std::vector<int> predictions;
    std::vector<double> probabilities;  // total x num_classes

    std::string confusion_csv() const;
    std::string probabilities_csv() const;
};

// Index of the largest entry; ties resolve to the lowest index.
int argmax(std::span<const double> row);

template <typename T>
EvalResult evaluate(const GatModel<T>& model, std::span<const RagGraph> graphs, int batch_size = 256);

}  // namespace ragnet
