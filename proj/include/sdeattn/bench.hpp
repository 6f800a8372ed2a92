#pragma once

// Experiment runner: executes the (variant x rate x seed) cross-product of a
// config, one training run per cell, with per-cell flushing and resume. All
// deterministic outputs (results.csv, tables, curves) are byte-identical
// across repeated runs of the same config; wall-clock numbers live in a
// separate timings file.

#include <cstdint>
#include <string>
#include <vector>

#include "sdeattn/config.hpp"
#include "sdeattn/data.hpp"

namespace sdeattn {

struct CellKey {
    std::string dataset;
    Task task = Task::classification;
    std::string variant;
    double rate = 0.0;
    std::uint64_t seed = 0;

    std::string id() const;  // filesystem-safe, also the resume key
};

struct CellResult {
    CellKey key;
    bool ok = false;
    double metric = 0.0;
    std::int64_t diverged = 0;
    std::string error;
    std::vector<double> loss_trace;  // per-iteration training loss, not serialized
};

struct MetricsReport {
    std::vector<CellResult> cells;
};

struct AggregateRow {
    std::string dataset;
    Task task = Task::classification;
    std::string variant;
    double rate = 0.0;
    SeedSummary summary;
};

// Recomputes mean/std rows from the per-seed cells (failed cells drop out).
std::vector<AggregateRow> aggregate(const MetricsReport& report);

// The datasets a config describes, already masked per rate and batched.
struct PreparedData {
    Dataset train;
    Dataset test;
    std::string name;
    // Set when the train split is left unmasked so the training loop can
    // draw fresh per-epoch masks at this rate instead.
    double train_mask_rate = -1.0;
    std::uint64_t train_mask_seed = 0;
};

PreparedData prepare_data(const ExperimentConfig& cfg);
// Applies the task's missingness transform at one rate with split-specific
// seeds that do not depend on the training seed.
PreparedData apply_rate(const PreparedData& base, const ExperimentConfig& cfg, double rate, std::size_t rate_index);

// Trains and scores one cell; exceptions become failed results upstream.
CellResult run_cell(const ExperimentConfig& cfg, const PreparedData& rated, const CellKey& key,
                    const std::string& checkpoint_path, const std::string& log_path);

// Full cross-product with resume: cells present in <outdir>/results.csv are
// skipped; results are rewritten in canonical order after every cell.
MetricsReport run_sweep(const ExperimentConfig& cfg, const std::string& outdir);

// results.csv round trip
void write_results_csv(const MetricsReport& report, const std::string& path);
MetricsReport read_results_csv(const std::string& path);

// Aligned text table, one block per rate, best cell per row starred; ties
// within 1e-9 all starred. style: "text" (default) or "markdown".
std::string emit_table(const MetricsReport& report, const std::string& style = "text");
// CSV twin of the aggregate rows.
void write_aggregate_csv(const MetricsReport& report, const std::string& path);
// One file per dataset/task: rate column, then mean and std per variant.
void emit_curves(const MetricsReport& report, const std::string& dir);

}  // namespace sdeattn
