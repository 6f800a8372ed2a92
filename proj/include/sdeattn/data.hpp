#pragma once

// Synthetic data generation (periodic signals with Ornstein-Uhlenbeck noise,
// a two-class frequency discrimination set), missing-data transforms, and the
// binary dataset cache. Trajectories are stored in batches that share one
// time grid; batches are the unit the model consumes.

#include <cstdint>
#include <string>
#include <vector>

#include "sdeattn/tensor.hpp"

namespace sdeattn {

struct TimeSeriesBatch {
    std::vector<double> timestamps;  // [t], strictly increasing, > 0
    Tensor values;                   // [t, b, d]; zeroed wherever mask is 0
    Tensor mask;                     // [t, b, d] in {0, 1}
    Tensor targets;                  // optional [t, b, d] full-grid ground truth
    std::vector<int> labels;         // optional, size b

    std::int64_t steps() const { return values.defined() ? values.dim(0) : 0; }
    std::int64_t series() const { return values.defined() ? values.dim(1) : 0; }
    std::int64_t dim() const { return values.defined() ? values.dim(2) : 0; }
    bool has_targets() const { return targets.defined(); }
    bool has_labels() const { return !labels.empty(); }

    // mask entries are 0/1 and values vanish off the mask
    void validate() const;
};

struct Dataset {
    std::string name;
    std::string split;
    std::int64_t dim = 0;
    int classes = 0;  // 0 for unlabeled data
    std::vector<TimeSeriesBatch> batches;
    std::vector<double> norm_mean;  // per-channel stats recorded at normalization time
    std::vector<double> norm_std;
    std::string spec_echo;  // generator parameters, for self-describing caches

    std::int64_t total_series() const;
};

// ---------------------------------------------------------------------------

struct PeriodicSpec {
    std::int64_t trajectories = 1000;
    std::int64_t points = 100;
    double amp_lo = 0.5, amp_hi = 1.5;      // amplitude endpoints, linear in time
    double freq_lo = 0.8, freq_hi = 1.2;    // frequency endpoints, linear in time
    double offset_lo = -0.5, offset_hi = 0.5;
    double ou_theta = 2.0;
    double ou_mu = 0.0;
    double ou_sigma = 0.2;
    std::int64_t group = 32;  // trajectories sharing one irregular grid
    std::uint64_t seed = 0;

    std::string echo() const;
};

// Amplitude-modulated sine with integrated phase and OU measurement noise,
// sampled on sorted uniform timestamps in (0, 1]. Deterministic in the seed.
Dataset generate_periodic(const PeriodicSpec& spec);

// Exact-discretization Ornstein-Uhlenbeck series on the given timestamps;
// the first sample is drawn from the stationary law N(mu, sigma^2 / (2 theta)).
std::vector<double> ou_noise(const std::vector<double>& timestamps, double theta, double mu, double sigma,
                             std::uint64_t seed);

struct TwoClassSpec {
    std::int64_t train_series = 400;
    std::int64_t test_series = 200;
    std::int64_t points = 50;
    double freq_a = 1.0;
    double freq_b = 1.3;
    std::int64_t group = 32;
    std::uint64_t seed = 0;

    std::string echo() const;
};

// Noiseless sinusoids at one of two frequencies, alternating labels.
std::pair<Dataset, Dataset> generate_two_class_frequency(const TwoClassSpec& spec);

// ---------------------------------------------------------------------------

// Drops each currently observed entry independently with probability rate,
// per time step and per channel. Labels and targets are untouched.
TimeSeriesBatch apply_mcar(const TimeSeriesBatch& batch, double rate, std::uint64_t seed);
Dataset apply_mcar(const Dataset& data, double rate, std::uint64_t seed);

// Keeps a uniformly random ceil(q * t) subset of time points per trajectory
// as conditioning input, always including the first point; the returned
// batch carries the full-grid values as targets.
TimeSeriesBatch hold_out_observation(const TimeSeriesBatch& batch, double observed_rate, std::uint64_t seed);
Dataset hold_out_observation(const Dataset& data, double observed_rate, std::uint64_t seed);

// Splits every batch into chunks of at most `group` trajectories; chunks
// inherit the parent grid. Batches are never merged.
Dataset rebatch(const Dataset& data, std::int64_t group);

// ---------------------------------------------------------------------------

// Binary dataset container with the generator echo and all tensors.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_cached_dataset(const std::string& path);

}  // namespace sdeattn
