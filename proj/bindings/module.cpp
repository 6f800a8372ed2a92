// Python bindings for the main operations: data generation, missingness
// transforms, Brownian sampling, and config-driven training/evaluation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sdeattn/bench.hpp"
#include "sdeattn/checkpoint.hpp"
#include "sdeattn/data.hpp"
#include "sdeattn/sde.hpp"

namespace py = pybind11;
using namespace sdeattn;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.ndim());
    for (py::ssize_t d = 0; d < a.ndim(); ++d) shape[static_cast<std::size_t>(d)] = a.shape(d);
    std::vector<double> values(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(values));
}

py::dict batch_to_dict(const TimeSeriesBatch& batch) {
    py::dict d;
    d["timestamps"] = py::array_t<double>(static_cast<py::ssize_t>(batch.timestamps.size()),
                                          batch.timestamps.data());
    d["values"] = to_numpy(batch.values);
    d["mask"] = to_numpy(batch.mask);
    if (batch.has_targets()) d["targets"] = to_numpy(batch.targets);
    if (batch.has_labels()) d["labels"] = py::cast(batch.labels);
    return d;
}

py::list dataset_to_list(const Dataset& data) {
    py::list out;
    for (const auto& b : data.batches) out.append(batch_to_dict(b));
    return out;
}

TimeSeriesBatch batch_from_arrays(const py::array_t<double>& values, const py::array_t<double>& mask) {
    TimeSeriesBatch batch;
    batch.values = from_numpy(values);
    batch.mask = from_numpy(mask);
    if (batch.values.ndim() != 3) throw std::invalid_argument("values must have shape [steps, series, channels]");
    batch.timestamps.resize(static_cast<std::size_t>(batch.values.dim(0)));
    for (std::size_t k = 0; k < batch.timestamps.size(); ++k)
        batch.timestamps[k] = static_cast<double>(k + 1) / static_cast<double>(batch.timestamps.size());
    return batch;
}

py::dict cell_to_dict(const CellResult& cell) {
    py::dict d;
    d["dataset"] = cell.key.dataset;
    d["task"] = to_string(cell.key.task);
    d["variant"] = cell.key.variant;
    d["rate"] = cell.key.rate;
    d["seed"] = cell.key.seed;
    d["ok"] = cell.ok;
    d["metric"] = cell.metric;
    d["diverged"] = cell.diverged;
    d["error"] = cell.error;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "latent-SDE sequence modeling: generators, masking, training";

    m.def(
        "generate_periodic",
        [](std::int64_t trajectories, std::int64_t points, std::uint64_t seed, double ou_sigma, double ou_theta,
           std::int64_t group) {
            PeriodicSpec spec;
            spec.trajectories = trajectories;
            spec.points = points;
            spec.seed = seed;
            spec.ou_sigma = ou_sigma;
            spec.ou_theta = ou_theta;
            spec.group = group;
            return dataset_to_list(generate_periodic(spec));
        },
        py::arg("trajectories") = 1000, py::arg("points") = 100, py::arg("seed") = 0, py::arg("ou_sigma") = 0.2,
        py::arg("ou_theta") = 2.0, py::arg("group") = 32,
        "Periodic trajectories with OU noise; returns one dict per batch of grid-sharing series.");

    m.def(
        "generate_two_class",
        [](std::int64_t train_series, std::int64_t test_series, std::int64_t points, double freq_a, double freq_b,
           std::uint64_t seed, std::int64_t group) {
            TwoClassSpec spec;
            spec.train_series = train_series;
            spec.test_series = test_series;
            spec.points = points;
            spec.freq_a = freq_a;
            spec.freq_b = freq_b;
            spec.seed = seed;
            spec.group = group;
            auto [train, test] = generate_two_class_frequency(spec);
            return py::make_tuple(dataset_to_list(train), dataset_to_list(test));
        },
        py::arg("train_series") = 400, py::arg("test_series") = 200, py::arg("points") = 50,
        py::arg("freq_a") = 1.0, py::arg("freq_b") = 1.3, py::arg("seed") = 0, py::arg("group") = 32,
        "Noiseless two-frequency classification set; returns (train_batches, test_batches).");

    m.def(
        "ou_noise",
        [](const std::vector<double>& timestamps, double theta, double mu, double sigma, std::uint64_t seed) {
            auto series = ou_noise(timestamps, theta, mu, sigma, seed);
            return py::array_t<double>(static_cast<py::ssize_t>(series.size()), series.data());
        },
        py::arg("timestamps"), py::arg("theta") = 2.0, py::arg("mu") = 0.0, py::arg("sigma") = 0.2,
        py::arg("seed") = 0, "Exact-discretization Ornstein-Uhlenbeck samples on the given timestamps.");

    m.def(
        "brownian_increments",
        [](const std::vector<double>& grid, std::int64_t batch, std::int64_t width, std::uint64_t seed) {
            auto path = sample_brownian(grid, batch, width, seed);
            const auto steps = static_cast<py::ssize_t>(path.increments.size());
            py::array_t<double> out({steps, static_cast<py::ssize_t>(batch), static_cast<py::ssize_t>(width)});
            auto* dst = out.mutable_data();
            for (const auto& inc : path.increments) {
                std::copy(inc.data().begin(), inc.data().end(), dst);
                dst += inc.size();
            }
            return out;
        },
        py::arg("grid"), py::arg("batch"), py::arg("width"), py::arg("seed"),
        "Seeded Brownian increments per grid interval, shape [intervals, batch, width].");

    m.def(
        "apply_mcar",
        [](const py::array_t<double>& values, const py::array_t<double>& mask, double rate, std::uint64_t seed) {
            auto masked = apply_mcar(batch_from_arrays(values, mask), rate, seed);
            return py::make_tuple(to_numpy(masked.values), to_numpy(masked.mask));
        },
        py::arg("values"), py::arg("mask"), py::arg("rate"), py::arg("seed"),
        "Drops each observed entry independently with the given probability.");

    m.def(
        "hold_out_observation",
        [](const py::array_t<double>& values, const py::array_t<double>& mask, double observed_rate,
           std::uint64_t seed) {
            auto held = hold_out_observation(batch_from_arrays(values, mask), observed_rate, seed);
            return py::make_tuple(to_numpy(held.values), to_numpy(held.mask), to_numpy(held.targets));
        },
        py::arg("values"), py::arg("mask"), py::arg("observed_rate"), py::arg("seed"),
        "Keeps ceil(rate * steps) conditioning points per series; returns (values, mask, full targets).");

    m.def(
        "train_cell",
        [](const std::string& config_text, const std::string& variant, double rate, std::uint64_t seed) {
            auto cfg = parse_config_text(config_text);
            auto base = prepare_data(cfg);
            auto rated = apply_rate(base, cfg, rate, 0);
            CellKey key{base.name, cfg.task, variant, rate, seed};
            return cell_to_dict(run_cell(cfg, rated, key, "", ""));
        },
        py::arg("config_text"), py::arg("variant") = "sde-rnn", py::arg("rate") = 0.0, py::arg("seed") = 1,
        "Trains one (variant, rate, seed) cell described by the config text and returns its test metric.");

    m.def(
        "run_sweep",
        [](const std::string& config_text, const std::string& outdir) {
            auto report = run_sweep(parse_config_text(config_text), outdir);
            py::list out;
            for (const auto& cell : report.cells) out.append(cell_to_dict(cell));
            return out;
        },
        py::arg("config_text"), py::arg("outdir"),
        "Runs the full variant x rate x seed sweep with per-cell resume; returns the result rows.");

    m.def(
        "config_echo",
        [](const std::string& config_text) { return parse_config_text(config_text).echo(); },
        py::arg("config_text"), "Parses a config and echoes every key with defaults filled in.");

    m.attr("__version__") = "0.1.0";
}
