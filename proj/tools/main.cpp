// Benchmark CLI: generate datasets, train and evaluate single cells, run
// full sweeps, and rebuild report artifacts from a results file.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sdeattn/bench.hpp"
#include "sdeattn/checkpoint.hpp"
#include "sdeattn/data.hpp"

namespace {

using namespace sdeattn;

ExperimentConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config_file(path);
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        const auto dot = item.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw std::invalid_argument("--set expects section.key=value, got '" + item + "'");
        cfg.set_value(item.substr(0, dot), item.substr(dot + 1, eq - dot - 1), item.substr(eq + 1));
    }
    return cfg;
}

int cmd_generate(const ExperimentConfig& cfg, const std::string& out) {
    std::filesystem::create_directories(out);
    auto prepared = prepare_data(cfg);
    prepared.train.spec_echo = cfg.echo();
    prepared.test.spec_echo = cfg.echo();
    save_dataset(prepared.train, out + "/train.bin");
    save_dataset(prepared.test, out + "/test.bin");
    std::printf("wrote %s/train.bin (%lld series) and %s/test.bin (%lld series)\n", out.c_str(),
                static_cast<long long>(prepared.train.total_series()), out.c_str(),
                static_cast<long long>(prepared.test.total_series()));
    return 0;
}

std::size_t rate_index_of(const ExperimentConfig& cfg, double rate) {
    const auto& rates = cfg.task == Task::classification ? cfg.sweep.missing_rates : cfg.sweep.observed_rates;
    for (std::size_t i = 0; i < rates.size(); ++i)
        if (rates[i] == rate) return i;
    // rates outside the sweep list still get a deterministic mask stream
    return 1000 + static_cast<std::size_t>(rate * 1e6);
}

int cmd_train(const ExperimentConfig& cfg, const std::string& variant, double rate, std::uint64_t seed,
              const std::string& out) {
    std::filesystem::create_directories(out);
    auto base = prepare_data(cfg);
    auto rated = apply_rate(base, cfg, rate, rate_index_of(cfg, rate));
    CellKey key{base.name, cfg.task, variant, rate, seed};
    auto result = run_cell(cfg, rated, key, out + "/" + key.id() + ".txt", out + "/" + key.id() + ".csv");
    if (!result.ok) {
        std::fprintf(stderr, "cell failed: %s\n", result.error.c_str());
        return 1;
    }
    std::printf("%s metric=%.9g diverged=%lld checkpoint=%s\n", key.id().c_str(), result.metric,
                static_cast<long long>(result.diverged), (out + "/" + key.id() + ".txt").c_str());
    return 0;
}

int cmd_evaluate(const ExperimentConfig& base_cfg, const std::string& checkpoint, double rate_override,
                 bool has_rate) {
    auto meta = read_checkpoint_meta(checkpoint);
    const auto* variant = meta_value(meta, "variant");
    const auto* rate_str = meta_value(meta, "rate");
    const auto* seed_str = meta_value(meta, "seed");
    if (!variant || !rate_str || !seed_str)
        throw std::runtime_error(checkpoint + " is missing variant/rate/seed metadata");
    const double rate = has_rate ? rate_override : std::stod(*rate_str);

    ExperimentConfig cfg = base_cfg;
    auto base = prepare_data(cfg);
    auto rated = apply_rate(base, cfg, rate, rate_index_of(cfg, rate));

    ModelConfig mc = cfg.model;
    mc.attention = variant_attention(*variant);
    mc.data_dim = rated.test.dim > 0 ? rated.test.dim : rated.test.batches.front().dim();
    mc.classes = cfg.task == Task::classification ? rated.test.classes : 0;
    mc.init_seed = std::stoull(*seed_str);
    auto model = build_model(mc, rated.test.batches.front().steps());
    load_checkpoint(checkpoint, model.params);

    auto eval = evaluate_model(model, rated.test, cfg.task,
                               derive_seed(std::stoull(*seed_str), SeedStream::split, 7));
    std::printf("%s %s rate=%g metric=%.9g diverged=%lld evaluated=%lld\n", variant->c_str(),
                to_string(cfg.task).c_str(), rate, eval.metric, static_cast<long long>(eval.diverged),
                static_cast<long long>(eval.evaluated));
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& out) {
    auto report = run_sweep(cfg, out);
    std::size_t failed = 0;
    for (const auto& cell : report.cells) failed += cell.ok ? 0 : 1;
    std::fputs(emit_table(report).c_str(), stdout);
    std::printf("%zu cells, %zu failed; results under %s\n", report.cells.size(), failed, out.c_str());
    return failed == 0 ? 0 : 1;
}

int cmd_report(const std::string& results, const std::string& out, const std::string& style) {
    auto report = read_results_csv(results);
    std::filesystem::create_directories(out);
    const auto table = emit_table(report, style);
    {
        std::ofstream os(out + "/table.txt");
        os << table;
    }
    write_aggregate_csv(report, out + "/aggregate.csv");
    emit_curves(report, out + "/curves");
    std::fputs(table.c_str(), stdout);
    std::printf("report artifacts under %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-SDE sequence modeling benchmark"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file (key=value sections)");
        cmd->add_option("--set", overrides, "override a config key, e.g. --set train.iters=50")
            ->type_name("section.key=value");
    };

    auto* gen = app.add_subcommand("generate-data", "materialize the configured dataset pair as cache files");
    std::string gen_out = "data-out";
    add_common(gen);
    gen->add_option("--out", gen_out, "output directory");

    auto* train = app.add_subcommand("train", "train one (variant, rate, seed) cell");
    std::string train_variant = "sde-rnn";
    double train_rate = 0.0;
    std::uint64_t train_seed = 1;
    std::string train_out = "train-out";
    add_common(train);
    train->add_option("--variant", train_variant, "sde-rnn | sde-scha | sde-tvf-l | sde-tvf-t | sde-pyr");
    train->add_option("--rate", train_rate, "missing rate (classification) or observed rate (interpolation)");
    train->add_option("--seed", train_seed, "training seed");
    train->add_option("--out", train_out, "output directory for checkpoint and run log");

    auto* eval = app.add_subcommand("evaluate", "score a checkpoint on the configured test split");
    std::string eval_checkpoint;
    double eval_rate = 0.0;
    add_common(eval);
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    auto* eval_rate_opt = eval->add_option("--rate", eval_rate, "override the rate stored in the checkpoint");

    auto* sweep = app.add_subcommand("sweep", "run the full variant x rate x seed cross-product with resume");
    std::string sweep_out = "sweep-out";
    add_common(sweep);
    sweep->add_option("--out", sweep_out, "output directory");

    auto* report = app.add_subcommand("report", "rebuild tables and curves from a results.csv");
    std::string report_results, report_out = "report-out", report_style = "text";
    report->add_option("--results", report_results, "results.csv from a sweep")->required();
    report->add_option("--out", report_out, "output directory");
    report->add_option("--style", report_style, "table style: text | markdown");

    CLI11_PARSE(app, argc, argv);
    try {
        if (gen->parsed()) return cmd_generate(resolve_config(config_path, overrides), gen_out);
        if (train->parsed())
            return cmd_train(resolve_config(config_path, overrides), train_variant, train_rate, train_seed,
                             train_out);
        if (eval->parsed())
            return cmd_evaluate(resolve_config(config_path, overrides), eval_checkpoint, eval_rate,
                                eval_rate_opt->count() > 0);
        if (sweep->parsed()) return cmd_sweep(resolve_config(config_path, overrides), sweep_out);
        if (report->parsed()) return cmd_report(report_results, report_out, report_style);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
