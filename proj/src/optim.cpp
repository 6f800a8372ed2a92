#include "sdeattn/optim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "sdeattn/rng.hpp"

namespace sdeattn {

AdamState make_adam_state(const ParameterStore& params) {
    AdamState state;
    for (const auto& [_, t] : params.entries) {
        state.m.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
        state.v.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
    }
    return state;
}

bool adam_step(AdamState& state, ParameterStore& params, const AdamConfig& cfg) {
    if (state.m.size() != params.entries.size())
        throw std::invalid_argument("optimizer state does not match the parameter store");

    double sq_norm = 0.0;
    for (const auto& [_, t] : params.entries)
        for (double g : t.grad()) {
            if (!std::isfinite(g)) return false;
            sq_norm += g * g;
        }
    const double norm = std::sqrt(sq_norm);
    const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.entries.size(); ++p) {
        auto w = params.entries[p].second.mutable_data();
        auto g = params.entries[p].second.grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
    return true;
}

// ---------------------------------------------------------------------------

Task task_from_string(const std::string& name) {
    if (name == "classification") return Task::classification;
    if (name == "interpolation") return Task::interpolation;
    throw std::invalid_argument("unknown task: " + name);
}

std::string to_string(Task task) { return task == Task::classification ? "classification" : "interpolation"; }

TrainRun train_model(SdeRnnModel& model, const Dataset& data, const TrainConfig& cfg) {
    if (data.batches.empty()) throw std::invalid_argument("training data has no batches");
    const auto start = std::chrono::steady_clock::now();
    TrainRun run;

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        if (!log) throw std::runtime_error("cannot open run log " + cfg.log_path);
        log << "iteration,loss,wall_ms,diverged\n";
    }

    // Brownian paths fixed per batch for the whole run (epoch-independent);
    // resampling switches to a fresh seed every iteration.
    std::vector<BrownianPath> fixed_paths;
    if (!cfg.resample_brownian) {
        fixed_paths.reserve(data.batches.size());
        for (std::size_t g = 0; g < data.batches.size(); ++g)
            fixed_paths.push_back(
                make_batch_path(model, data.batches[g], derive_seed(cfg.seed, SeedStream::brownian, g)));
    }

    AdamState adam = make_adam_state(model.params);
    std::vector<std::size_t> order(data.batches.size());
    for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
    std::uint64_t epoch = 0;
    std::size_t cursor = order.size();  // trigger a shuffle on the first iteration
    Dataset epoch_data;

    for (std::int64_t it = 0; it < cfg.iters; ++it) {
        if (cursor >= order.size()) {
            if (cfg.mcar_resample_rate >= 0.0)
                epoch_data = apply_mcar(data, cfg.mcar_resample_rate,
                                        derive_seed(cfg.mcar_seed, SeedStream::mcar, 1000000 + epoch));
            Rng shuffle_rng(derive_seed(cfg.seed, SeedStream::shuffle, epoch++));
            shuffle_rng.shuffle(order);
            cursor = 0;
        }
        const std::size_t g = order[cursor++];
        const auto& batch = cfg.mcar_resample_rate >= 0.0 ? epoch_data.batches[g] : data.batches[g];
        const BrownianPath path =
            cfg.resample_brownian
                ? make_batch_path(model, batch,
                                  derive_seed(cfg.seed, SeedStream::brownian,
                                              static_cast<std::uint64_t>(it) * 1000003ULL + g))
                : fixed_paths[g];

        const auto iter_start = std::chrono::steady_clock::now();
        double loss_value = 0.0;
        std::int64_t diverged_now = 0;
        {
            Tape tape;
            auto trace = forward(model, batch, path);
            Tensor loss = cfg.task == Task::interpolation ? interpolation_loss(trace, batch)
                                                          : classification_loss(model, trace, batch);
            loss_value = loss.value();
            for (auto f : trace.diverged) diverged_now += f ? 1 : 0;
            model.params.zero_grad();
            tape.backward(loss);
        }
        if (!adam_step(adam, model.params, cfg.adam)) ++run.skipped_updates;
        run.diverged_trajectories += diverged_now;
        run.loss_trace.push_back(loss_value);

        if (log) {
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - iter_start).count();
            char line[160];
            std::snprintf(line, sizeof(line), "%lld,%.9g,%.3f,%lld\n", static_cast<long long>(it), loss_value, ms,
                          static_cast<long long>(diverged_now));
            log << line;
        }
    }
    run.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return run;
}

EvalResult evaluate_model(const SdeRnnModel& model, const Dataset& data, Task task, std::uint64_t path_seed) {
    if (data.batches.empty()) throw std::invalid_argument("evaluation data has no batches");
    EvalResult result;
    double weighted_sum = 0.0;
    double weight_total = 0.0;
    for (std::size_t g = 0; g < data.batches.size(); ++g) {
        const auto& batch = data.batches[g];
        auto path = make_batch_path(model, batch, derive_seed(path_seed, SeedStream::brownian, g));
        auto trace = forward(model, batch, path);
        std::int64_t valid = 0;
        for (auto f : trace.diverged) {
            result.diverged += f ? 1 : 0;
            valid += f ? 0 : 1;
        }
        result.evaluated += valid;
        if (valid == 0) continue;
        if (task == Task::interpolation) {
            const double cells = static_cast<double>(batch.steps() * batch.dim() * valid);
            weighted_sum += interpolation_loss(trace, batch).value() * cells;
            weight_total += cells;
        } else {
            const double acc = accuracy(classification_logits(model, trace), batch.labels, trace.diverged);
            weighted_sum += acc * static_cast<double>(valid);
            weight_total += static_cast<double>(valid);
        }
    }
    if (weight_total == 0.0) throw std::runtime_error("every evaluation trajectory diverged");
    result.metric = weighted_sum / weight_total;
    return result;
}

SeedSummary summarize(const std::vector<double>& per_seed) {
    if (per_seed.empty()) throw std::invalid_argument("cannot summarize zero seeds");
    SeedSummary s;
    s.per_seed = per_seed;
    for (double v : per_seed) s.mean += v;
    s.mean /= static_cast<double>(per_seed.size());
    double acc = 0.0;
    for (double v : per_seed) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(per_seed.size()));
    return s;
}

}  // namespace sdeattn
