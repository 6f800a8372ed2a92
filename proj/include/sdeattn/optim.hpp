#pragma once

// Adam with bias correction and global-norm gradient clipping, plus the
// seeded training loop and single-checkpoint evaluation. One optimizer state
// belongs to one run and is mutated single-threaded; independent seeds run
// as independent workers.

#include <cstdint>
#include <string>
#include <vector>

#include "sdeattn/model.hpp"
#include "sdeattn/nn.hpp"

namespace sdeattn {

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;  // <= 0 disables clipping
};

struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

AdamState make_adam_state(const ParameterStore& params);

// One update from the gradients currently in the parameter store. Returns
// false (and leaves everything untouched) when any gradient is non-finite.
bool adam_step(AdamState& state, ParameterStore& params, const AdamConfig& cfg);

// ---------------------------------------------------------------------------

enum class Task { classification, interpolation };

Task task_from_string(const std::string& name);
std::string to_string(Task task);

struct TrainConfig {
    Task task = Task::interpolation;
    std::int64_t iters = 100;
    AdamConfig adam;
    std::uint64_t seed = 0;  // drives shuffling and Brownian paths
    bool resample_brownian = false;
    // Fresh MCAR masks every epoch when >= 0 (the data must arrive unmasked);
    // negative keeps whatever masks the dataset already carries.
    double mcar_resample_rate = -1.0;
    std::uint64_t mcar_seed = 0;
    std::string log_path;  // per-iteration records when non-empty
};

struct TrainRun {
    std::vector<double> loss_trace;        // one entry per completed iteration
    std::int64_t diverged_trajectories = 0;
    std::int64_t skipped_updates = 0;
    double wall_ms = 0.0;
};

// One optimizer step per mini-batch; batches are visited in seeded shuffled
// order, re-shuffled each epoch. Brownian paths are fixed per batch for the
// whole run unless resample_brownian asks for fresh paths every iteration.
TrainRun train_model(SdeRnnModel& model, const Dataset& data, const TrainConfig& cfg);

struct EvalResult {
    double metric = 0.0;  // accuracy or mean squared error
    std::int64_t diverged = 0;
    std::int64_t evaluated = 0;
};

EvalResult evaluate_model(const SdeRnnModel& model, const Dataset& data, Task task, std::uint64_t path_seed);

// Per-seed metric aggregation: mean and population standard deviation.
struct SeedSummary {
    std::vector<double> per_seed;
    double mean = 0.0;
    double stddev = 0.0;
};

SeedSummary summarize(const std::vector<double>& per_seed);

}  // namespace sdeattn
