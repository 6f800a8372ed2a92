#include "sdeattn/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sdeattn/checkpoint.hpp"
#include "sdeattn/loader.hpp"
#include "sdeattn/rng.hpp"

namespace sdeattn {

namespace {

std::string fmt_rate(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", rate);
    return buf;
}

std::string fmt_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string sanitize(std::string s) {
    for (auto& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
    return s;
}

}  // namespace

std::string CellKey::id() const {
    return sanitize(dataset) + "_" + to_string(task) + "_" + variant + "_r" + sanitize(fmt_rate(rate)) + "_s" +
           std::to_string(seed);
}

std::vector<AggregateRow> aggregate(const MetricsReport& report) {
    std::vector<AggregateRow> rows;
    for (const auto& cell : report.cells) {
        if (!cell.ok) continue;
        auto it = std::find_if(rows.begin(), rows.end(), [&](const AggregateRow& r) {
            return r.dataset == cell.key.dataset && r.task == cell.key.task && r.variant == cell.key.variant &&
                   fmt_rate(r.rate) == fmt_rate(cell.key.rate);
        });
        if (it == rows.end()) {
            rows.push_back(AggregateRow{cell.key.dataset, cell.key.task, cell.key.variant, cell.key.rate, {}});
            it = rows.end() - 1;
        }
        it->summary.per_seed.push_back(cell.metric);
    }
    for (auto& row : rows) row.summary = summarize(row.summary.per_seed);
    return rows;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
    PreparedData out;
    const auto& d = cfg.data;
    if (d.kind == "periodic") {
        PeriodicSpec spec;
        spec.trajectories = d.trajectories;
        spec.points = d.points;
        spec.amp_lo = d.amp_lo;
        spec.amp_hi = d.amp_hi;
        spec.freq_lo = d.freq_lo;
        spec.freq_hi = d.freq_hi;
        spec.offset_lo = d.offset_lo;
        spec.offset_hi = d.offset_hi;
        spec.ou_theta = d.ou_theta;
        spec.ou_mu = d.ou_mu;
        spec.ou_sigma = d.ou_sigma;
        spec.group = cfg.train.batch;
        spec.seed = d.seed;
        out.train = generate_periodic(spec);
        out.train.split = "train";
        spec.trajectories = d.eval_trajectories;
        spec.seed = derive_seed(d.seed, SeedStream::split, 2);
        out.test = generate_periodic(spec);
        out.test.split = "test";
        out.name = "periodic";
    } else if (d.kind == "two-class-freq") {
        TwoClassSpec spec;
        spec.train_series = d.train_series;
        spec.test_series = d.test_series;
        spec.points = d.points;
        spec.freq_a = d.freq_a;
        spec.freq_b = d.freq_b;
        spec.group = cfg.train.batch;
        spec.seed = d.seed;
        auto [train, test] = generate_two_class_frequency(spec);
        out.train = std::move(train);
        out.test = std::move(test);
        out.name = "two-class-frequency";
    } else if (d.kind == "file") {
        auto pair = load_dataset_pair(d.train_path, d.test_path, sniff_format(d.train_path));
        out.train = rebatch(pair.train, cfg.train.batch);
        out.test = rebatch(pair.test, cfg.train.batch);
        out.name = pair.train.name;
    } else if (d.kind == "cache") {
        out.train = rebatch(load_cached_dataset(d.train_path), cfg.train.batch);
        out.test = rebatch(load_cached_dataset(d.test_path), cfg.train.batch);
        out.name = out.train.name;
    } else {
        throw std::invalid_argument("unknown dataset kind: " + d.kind);
    }
    if (cfg.task == Task::classification) {
        if (!out.train.batches.empty() && !out.train.batches.front().has_labels())
            throw std::invalid_argument("classification requires labeled data, dataset '" + out.name +
                                        "' has no labels");
    }
    const auto stem = std::filesystem::path(out.name).stem().string();
    if (!stem.empty()) out.name = stem;
    return out;
}

PreparedData apply_rate(const PreparedData& base, const ExperimentConfig& cfg, double rate, std::size_t rate_index) {
    PreparedData out;
    out.name = base.name;
    if (cfg.task == Task::classification) {
        // MCAR masks are static per split and independent of the training
        // seed; resample_mask defers the train-split mask to the training
        // loop, which draws a fresh one per epoch.
        if (cfg.train.resample_mask && rate > 0.0) {
            out.train = base.train;
            out.train_mask_rate = rate;
            out.train_mask_seed = derive_seed(cfg.data.seed, SeedStream::mcar, rate_index * 2);
        } else {
            out.train = rate == 0.0 ? base.train
                                    : apply_mcar(base.train, rate,
                                                 derive_seed(cfg.data.seed, SeedStream::mcar, rate_index * 2));
        }
        out.test = rate == 0.0 ? base.test
                               : apply_mcar(base.test, rate,
                                            derive_seed(cfg.data.seed, SeedStream::mcar, rate_index * 2 + 1));
    } else {
        out.train =
            hold_out_observation(base.train, rate, derive_seed(cfg.data.seed, SeedStream::holdout, rate_index * 2));
        out.test =
            hold_out_observation(base.test, rate, derive_seed(cfg.data.seed, SeedStream::holdout, rate_index * 2 + 1));
    }
    return out;
}

CellResult run_cell(const ExperimentConfig& cfg, const PreparedData& rated, const CellKey& key,
                    const std::string& checkpoint_path, const std::string& log_path) {
    CellResult result;
    result.key = key;
    try {
        std::int64_t typical_len = cfg.data.points;
        if (!rated.train.batches.empty()) typical_len = rated.train.batches.front().steps();

        ModelConfig mc = cfg.model;
        mc.attention = variant_attention(key.variant);
        mc.data_dim = rated.train.dim > 0 ? rated.train.dim : rated.train.batches.front().dim();
        mc.classes = cfg.task == Task::classification ? rated.train.classes : 0;
        mc.init_seed = key.seed;
        auto model = build_model(mc, typical_len);

        TrainConfig tc;
        tc.task = cfg.task;
        tc.iters = cfg.train.iters;
        tc.adam = cfg.train.adam;
        tc.seed = key.seed;
        tc.resample_brownian = cfg.train.resample_brownian;
        tc.mcar_resample_rate = rated.train_mask_rate;
        tc.mcar_seed = rated.train_mask_seed;
        tc.log_path = log_path;
        auto run = train_model(model, rated.train, tc);

        auto eval = evaluate_model(model, rated.test, cfg.task, derive_seed(key.seed, SeedStream::split, 7));
        result.ok = true;
        result.metric = eval.metric;
        result.diverged = run.diverged_trajectories + eval.diverged;
        result.loss_trace = std::move(run.loss_trace);

        if (!checkpoint_path.empty()) {
            MetaBlock meta = {
                {"dataset", key.dataset},
                {"task", to_string(cfg.task)},
                {"variant", key.variant},
                {"rate", fmt_rate(key.rate)},
                {"seed", std::to_string(key.seed)},
                {"metric", fmt_metric(eval.metric)},
                {"eval_batch", std::to_string(cfg.train.batch)},
                {"interpolation_eval", "full-grid"},
                {"latent", std::to_string(mc.latent)},
                {"substeps", std::to_string(mc.substeps)},
            };
            save_checkpoint(checkpoint_path, model.params, meta);
        }
    } catch (const std::exception& e) {
        result.ok = false;
        result.error = e.what();
    }
    return result;
}

// ---------------------------------------------------------------------------

void write_results_csv(const MetricsReport& report, const std::string& path) {
    const auto tmp = path + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
        os << "dataset,task,variant,rate,seed,metric,diverged,status,error\n";
        for (const auto& cell : report.cells) {
            std::string error = cell.error;
            for (auto& c : error)
                if (c == ',' || c == '\n') c = ';';
            os << cell.key.dataset << "," << to_string(cell.key.task) << "," << cell.key.variant << ","
               << fmt_rate(cell.key.rate) << "," << cell.key.seed << "," << (cell.ok ? fmt_metric(cell.metric) : "")
               << "," << cell.diverged << "," << (cell.ok ? "ok" : "failed") << "," << error << "\n";
        }
        if (!os) throw std::runtime_error("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

MetricsReport read_results_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open results file " + path);
    MetricsReport report;
    std::string line;
    if (!std::getline(is, line)) return report;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        std::istringstream row(line);
        while (std::getline(row, cur, ',')) cells.push_back(cur);
        while (cells.size() < 9) cells.push_back("");
        CellResult cell;
        cell.key.dataset = cells[0];
        cell.key.task = task_from_string(cells[1]);
        cell.key.variant = cells[2];
        cell.key.rate = std::stod(cells[3]);
        cell.key.seed = std::stoull(cells[4]);
        cell.ok = cells[7] == "ok";
        cell.metric = cell.ok ? std::stod(cells[5]) : 0.0;
        cell.diverged = std::stoll(cells[6]);
        cell.error = cells[8];
        report.cells.push_back(std::move(cell));
    }
    return report;
}

MetricsReport run_sweep(const ExperimentConfig& cfg, const std::string& outdir) {
    namespace fs = std::filesystem;
    fs::create_directories(outdir);
    fs::create_directories(outdir + "/checkpoints");
    fs::create_directories(outdir + "/logs");
    fs::create_directories(outdir + "/curves");
    {
        std::ofstream echo(outdir + "/config.echo.ini");
        echo << cfg.echo();
    }

    auto base = prepare_data(cfg);
    const auto& rates = cfg.task == Task::classification ? cfg.sweep.missing_rates : cfg.sweep.observed_rates;

    struct Slot {
        CellKey key;
        std::size_t rate_index = 0;
        bool done = false;
        CellResult result;
    };
    std::vector<Slot> slots;
    for (std::size_t ri = 0; ri < rates.size(); ++ri)
        for (const auto& variant : cfg.sweep.variants)
            for (auto seed : cfg.train.seeds) {
                Slot slot;
                slot.key = CellKey{base.name, cfg.task, variant, rates[ri], seed};
                slot.rate_index = ri;
                slots.push_back(std::move(slot));
            }

    const auto results_path = outdir + "/results.csv";
    if (fs::exists(results_path)) {
        auto existing = read_results_csv(results_path);
        for (auto& slot : slots)
            for (const auto& cell : existing.cells)
                if (cell.key.id() == slot.key.id()) {
                    slot.done = true;
                    slot.result = cell;
                    break;
                }
    }

    // rated datasets are shared read-only across workers
    std::vector<PreparedData> rated;
    rated.reserve(rates.size());
    for (std::size_t ri = 0; ri < rates.size(); ++ri) rated.push_back(apply_rate(base, cfg, rates[ri], ri));

    std::mutex io_mutex;
    std::ofstream timings(outdir + "/timings.csv", std::ios::app);
    auto flush_results = [&]() {
        MetricsReport snapshot;
        for (const auto& slot : slots)
            if (slot.done) snapshot.cells.push_back(slot.result);
        write_results_csv(snapshot, results_path);
    };

    std::atomic<std::int64_t> budget{cfg.sweep.max_cells > 0 ? cfg.sweep.max_cells
                                                             : static_cast<std::int64_t>(slots.size())};
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= slots.size()) return;
            if (slots[i].done) continue;
            if (budget.fetch_sub(1) <= 0) return;
            const auto start = std::chrono::steady_clock::now();
            auto result = run_cell(cfg, rated[slots[i].rate_index], slots[i].key,
                                   outdir + "/checkpoints/" + slots[i].key.id() + ".txt",
                                   outdir + "/logs/" + slots[i].key.id() + ".csv");
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            std::lock_guard<std::mutex> lock(io_mutex);
            slots[i].result = std::move(result);
            slots[i].done = true;
            timings << slots[i].key.id() << "," << ms << "\n";
            timings.flush();
            flush_results();
        }
    };

    const int workers = std::max(1, cfg.sweep.workers);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    MetricsReport report;
    for (const auto& slot : slots)
        if (slot.done) report.cells.push_back(slot.result);
    write_results_csv(report, results_path);
    write_aggregate_csv(report, outdir + "/aggregate.csv");
    {
        std::ofstream table(outdir + "/table.txt");
        table << emit_table(report);
    }
    emit_curves(report, outdir + "/curves");
    return report;
}

// ---------------------------------------------------------------------------

namespace {

struct TableLayout {
    std::vector<std::string> variants;
    std::vector<std::string> datasets;
    std::vector<double> rates;
};

TableLayout layout_of(const std::vector<AggregateRow>& rows) {
    TableLayout layout;
    for (const auto& r : rows) {
        if (std::find(layout.variants.begin(), layout.variants.end(), r.variant) == layout.variants.end())
            layout.variants.push_back(r.variant);
        if (std::find(layout.datasets.begin(), layout.datasets.end(), r.dataset) == layout.datasets.end())
            layout.datasets.push_back(r.dataset);
        if (std::find_if(layout.rates.begin(), layout.rates.end(),
                         [&](double x) { return fmt_rate(x) == fmt_rate(r.rate); }) == layout.rates.end())
            layout.rates.push_back(r.rate);
    }
    std::sort(layout.rates.begin(), layout.rates.end());
    return layout;
}

std::string cell_text(const SeedSummary& s) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f (%.3f)", s.mean, s.stddev);
    return buf;
}

}  // namespace

std::string emit_table(const MetricsReport& report, const std::string& style) {
    if (style != "text" && style != "markdown")
        throw std::invalid_argument("table style must be 'text' or 'markdown'");
    const auto rows = aggregate(report);
    if (rows.empty()) return "(no successful cells)\n";
    const auto layout = layout_of(rows);
    const bool higher_better = rows.front().task == Task::classification;
    const char* metric_name = higher_better ? "accuracy" : "mse";

    std::ostringstream os;
    for (double rate : layout.rates) {
        os << "== " << to_string(rows.front().task) << " " << metric_name << " at rate " << fmt_rate(rate)
           << " (mean (std), * marks best) ==\n";
        std::vector<std::vector<std::string>> grid;
        std::vector<std::string> header = {"dataset"};
        header.insert(header.end(), layout.variants.begin(), layout.variants.end());
        grid.push_back(header);
        for (const auto& dataset : layout.datasets) {
            std::vector<const AggregateRow*> present;
            for (const auto& v : layout.variants) {
                auto it = std::find_if(rows.begin(), rows.end(), [&](const AggregateRow& r) {
                    return r.dataset == dataset && r.variant == v && fmt_rate(r.rate) == fmt_rate(rate);
                });
                present.push_back(it == rows.end() ? nullptr : &*it);
            }
            double best = higher_better ? -1e300 : 1e300;
            for (const auto* r : present)
                if (r) best = higher_better ? std::max(best, r->summary.mean) : std::min(best, r->summary.mean);
            std::vector<std::string> line = {dataset};
            for (const auto* r : present) {
                if (!r) {
                    line.push_back("-");
                    continue;
                }
                const bool starred = std::abs(r->summary.mean - best) <= 1e-9;
                line.push_back((starred ? "*" : "") + cell_text(r->summary));
            }
            grid.push_back(std::move(line));
        }
        std::vector<std::size_t> width(grid[0].size(), 0);
        for (const auto& line : grid)
            for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
        for (std::size_t rix = 0; rix < grid.size(); ++rix) {
            const auto& line = grid[rix];
            for (std::size_t c = 0; c < line.size(); ++c) {
                if (style == "markdown") os << "| ";
                os << line[c] << std::string(width[c] - line[c].size() + 2, ' ');
            }
            if (style == "markdown") os << "|";
            os << "\n";
            if (style == "markdown" && rix == 0) {
                for (std::size_t c = 0; c < line.size(); ++c) os << "|" << std::string(width[c] + 3, '-');
                os << "|\n";
            }
        }
        os << "\n";
    }
    return os.str();
}

void write_aggregate_csv(const MetricsReport& report, const std::string& path) {
    const auto rows = aggregate(report);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "dataset,task,variant,rate,mean,std,seeds\n";
    for (const auto& r : rows)
        os << r.dataset << "," << to_string(r.task) << "," << r.variant << "," << fmt_rate(r.rate) << ","
           << fmt_metric(r.summary.mean) << "," << fmt_metric(r.summary.stddev) << "," << r.summary.per_seed.size()
           << "\n";
}

void emit_curves(const MetricsReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto rows = aggregate(report);
    if (rows.empty()) return;
    const auto layout = layout_of(rows);
    for (const auto& dataset : layout.datasets) {
        const auto path = dir + "/" + sanitize(dataset) + "_" + to_string(rows.front().task) + ".csv";
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot open " + path + " for writing");
        os << "rate";
        for (const auto& v : layout.variants) os << "," << v << "_mean," << v << "_std";
        os << "\n";
        for (double rate : layout.rates) {
            os << fmt_rate(rate);
            for (const auto& v : layout.variants) {
                auto it = std::find_if(rows.begin(), rows.end(), [&](const AggregateRow& r) {
                    return r.dataset == dataset && r.variant == v && fmt_rate(r.rate) == fmt_rate(rate);
                });
                if (it == rows.end())
                    os << ",,";
                else
                    os << "," << fmt_metric(it->summary.mean) << "," << fmt_metric(it->summary.stddev);
            }
            os << "\n";
        }
    }
}

}  // namespace sdeattn
