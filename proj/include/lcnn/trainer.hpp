#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lcnn/image.hpp"
#include "lcnn/model.hpp"

namespace lcnn {

struct SolverConfig {
    float momentum = 0.9f;
    float base_lr = 1e-3f;
    float final_lr = 5e-5f;
    float gamma = 0.457f;     // multiplicative step decay
    int step_iters = 0;       // 0 -> max_iters / 10
    float weight_decay = 5e-4f;
    float fc2_weight_decay = 5e-3f;
    float dropout_ratio = 0.7f;
    int batch_size = 64;
    int max_iters = 1000;
    uint64_t seed = 42;
    int val_interval = 0;        // iterations between validation passes; 0 = never
    int checkpoint_interval = 0; // 0 = no periodic checkpoints
    bool augment = true;         // random 128x128 crop + mirror of 144x144 inputs
    float stop_loss = 0.0f;      // stop once training loss drops below; 0 = disabled

    void validate() const;
    int effective_step_iters() const;
};

// key = value text file; '#' starts a comment; unknown keys are rejected
SolverConfig parse_solver_config(const std::string& path);

float learning_rate(const SolverConfig& config, long long iter);

struct TrainSample {
    Image image;  // normalized grayscale, 144x144 (or 128x128 with augment off)
    int label = 0;
};

struct TrainValSplit {
    std::vector<int> train;  // indices into the dataset
    std::vector<int> val;    // exactly one per identity
    int singleton_identities = 0;
};

TrainValSplit split_train_val(const std::vector<TrainSample>& data, uint64_t seed);

// random crop offsets in [0,16]^2, mirror with probability 0.5, pixels
// scaled to [0,1]; draw order is top, left, mirror
Tensor augment(const Image& image, Rng& rng);

// center crop (144 inputs) or pass-through (128 inputs), no mirror
Tensor eval_input(const Image& image);

// v <- momentum*v - lr*lr_mult*(g + decay*w); w <- w + v, with the fc2
// blocks decaying at fc2_weight_decay instead of weight_decay
void sgd_step(NetworkModel& model, const SolverConfig& config, long long iter);

struct TrainLogRow {
    long long iter;
    float lr;
    float loss;
    std::optional<float> val_accuracy;
};

struct TrainCallbacks {
    std::function<void(const TrainLogRow&)> on_row;
    std::function<void(NetworkModel&, long long next_iter)> on_checkpoint;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    long long final_iter = 0;  // first iteration not executed
    bool stopped_early = false;
};

// Minibatch SGD per the solver config. Each iteration reseeds its rng from
// (seed, iter), so resuming from a checkpoint at iteration k replays the
// exact stream a straight run would have used.
TrainResult train_loop(NetworkModel& model, const std::vector<TrainSample>& data,
                       const SolverConfig& config, long long start_iter = 0,
                       const TrainCallbacks& callbacks = {});

float validation_accuracy(NetworkModel& model, const std::vector<TrainSample>& data,
                          const std::vector<int>& val_indices, int batch_size);

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& log);

}  // namespace lcnn
