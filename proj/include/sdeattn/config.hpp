#pragma once

// Declarative experiment description: plain-text key=value sections, every
// default echoed back out so runs are self-describing. CLI flags override
// file values through the same set_value path.

#include <cstdint>
#include <string>
#include <vector>

#include "sdeattn/model.hpp"
#include "sdeattn/optim.hpp"

namespace sdeattn {

struct DataConfig {
    std::string kind = "periodic";  // periodic | two-class-freq | file | cache
    std::string train_path;
    std::string test_path;
    // periodic generator
    std::int64_t trajectories = 1000;
    std::int64_t eval_trajectories = 200;
    std::int64_t points = 100;
    double amp_lo = 0.5, amp_hi = 1.5;
    double freq_lo = 0.8, freq_hi = 1.2;
    double offset_lo = -0.5, offset_hi = 0.5;
    double ou_theta = 2.0, ou_mu = 0.0, ou_sigma = 0.2;
    // two-class generator
    std::int64_t train_series = 400;
    std::int64_t test_series = 200;
    double freq_a = 1.0, freq_b = 1.3;
    std::uint64_t seed = 42;  // data generation and masking
};

struct SweepConfig {
    std::vector<std::string> variants = {"sde-rnn", "sde-scha", "sde-tvf-l", "sde-tvf-t", "sde-pyr"};
    std::vector<double> missing_rates = {0.0, 0.3, 0.6, 0.9};
    std::vector<double> observed_rates = {0.1, 0.2, 0.3, 0.4};
    int workers = 1;
    std::int64_t max_cells = 0;  // 0 runs everything; useful for budgeted partial runs
};

struct TrainSection {
    std::int64_t iters = 100;
    std::int64_t batch = 32;
    AdamConfig adam;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    bool resample_brownian = false;
    bool resample_mask = false;  // fresh train-split MCAR masks every epoch
};

struct ExperimentConfig {
    DataConfig data;
    Task task = Task::classification;
    ModelConfig model;  // attention kind and init seed are set per cell
    TrainSection train;
    SweepConfig sweep;

    void set_value(const std::string& section, const std::string& key, const std::string& value);
    std::string echo() const;  // every key, defaults included, fixed order
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Model variant names: sde-rnn, sde-scha, sde-tvf-l, sde-tvf-t, sde-pyr.
AttentionKind variant_attention(const std::string& variant);
const std::vector<std::string>& known_variants();

}  // namespace sdeattn
