#include "sdeattn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "sdeattn/rng.hpp"

namespace sdeattn {

void TimeSeriesBatch::validate() const {
    if (static_cast<std::int64_t>(timestamps.size()) != steps())
        throw std::invalid_argument("timestamp count does not match the value tensor");
    for (std::size_t k = 0; k < timestamps.size(); ++k) {
        if (timestamps[k] <= (k == 0 ? 0.0 : timestamps[k - 1]))
            throw std::invalid_argument("timestamps must be strictly increasing and positive");
    }
    auto vd = values.data();
    auto md = mask.data();
    if (values.shape() != mask.shape()) throw std::invalid_argument("mask shape differs from values");
    for (std::int64_t i = 0; i < values.size(); ++i) {
        if (md[i] != 0.0 && md[i] != 1.0) throw std::invalid_argument("mask entries must be 0 or 1");
        if (md[i] == 0.0 && vd[i] != 0.0) throw std::invalid_argument("unobserved values must be zeroed");
    }
    if (has_labels() && static_cast<std::int64_t>(labels.size()) != series())
        throw std::invalid_argument("label count does not match the batch");
}

std::int64_t Dataset::total_series() const {
    std::int64_t n = 0;
    for (const auto& b : batches) n += b.series();
    return n;
}

// ---------------------------------------------------------------------------

std::string PeriodicSpec::echo() const {
    std::ostringstream os;
    os << "kind=periodic\n"
       << "trajectories=" << trajectories << "\npoints=" << points << "\namp_lo=" << amp_lo << "\namp_hi=" << amp_hi
       << "\nfreq_lo=" << freq_lo << "\nfreq_hi=" << freq_hi << "\noffset_lo=" << offset_lo
       << "\noffset_hi=" << offset_hi << "\nou_theta=" << ou_theta << "\nou_mu=" << ou_mu
       << "\nou_sigma=" << ou_sigma << "\ngroup=" << group << "\nseed=" << seed << "\n";
    return os.str();
}

std::string TwoClassSpec::echo() const {
    std::ostringstream os;
    os << "kind=two-class-frequency\n"
       << "train_series=" << train_series << "\ntest_series=" << test_series << "\npoints=" << points
       << "\nfreq_a=" << freq_a << "\nfreq_b=" << freq_b << "\ngroup=" << group << "\nseed=" << seed << "\n";
    return os.str();
}

namespace {

// Sorted uniform draws in (0, 1], strictly increasing; rejected and redrawn
// on the (measure-zero) chance of a tie or a zero.
std::vector<double> irregular_grid(std::int64_t points, Rng& rng) {
    std::vector<double> grid(static_cast<std::size_t>(points));
    for (;;) {
        for (auto& t : grid) t = rng.uniform();
        std::sort(grid.begin(), grid.end());
        bool ok = grid.front() > 0.0;
        for (std::size_t k = 1; ok && k < grid.size(); ++k) ok = grid[k] > grid[k - 1];
        if (ok) return grid;
    }
}

// Integrated phase of 2 pi f(t) for linear f, trapezoid from t = 0 (exact
// for linear integrands).
std::vector<double> integrated_phase(const std::vector<double>& ts, double f0, double f1) {
    std::vector<double> phase(ts.size());
    double prev_t = 0.0;
    double prev_f = f0;
    double acc = 0.0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const double f = f0 + (f1 - f0) * ts[k];
        acc += std::numbers::pi * (prev_f + f) * (ts[k] - prev_t);
        phase[k] = acc;
        prev_t = ts[k];
        prev_f = f;
    }
    return phase;
}

}  // namespace

std::vector<double> ou_noise(const std::vector<double>& timestamps, double theta, double mu, double sigma,
                             std::uint64_t seed) {
    if (!(theta > 0.0)) throw std::invalid_argument("OU rate theta must be positive");
    Rng rng(seed);
    std::vector<double> out(timestamps.size());
    if (out.empty()) return out;
    const double stat_sd = sigma / std::sqrt(2.0 * theta);
    out[0] = mu + stat_sd * rng.normal();
    for (std::size_t k = 1; k < out.size(); ++k) {
        const double dt = timestamps[k] - timestamps[k - 1];
        if (!(dt > 0.0)) throw std::invalid_argument("OU timestamps must be strictly increasing");
        const double decay = std::exp(-theta * dt);
        const double sd = sigma * std::sqrt((1.0 - std::exp(-2.0 * theta * dt)) / (2.0 * theta));
        out[k] = out[k - 1] * decay + mu * (1.0 - decay) + sd * rng.normal();
    }
    return out;
}

Dataset generate_periodic(const PeriodicSpec& spec) {
    if (spec.trajectories < 1 || spec.points < 1 || spec.group < 1)
        throw std::invalid_argument("periodic spec requires positive counts");
    Dataset data;
    data.name = "periodic";
    data.split = "generated";
    data.dim = 1;
    data.spec_echo = spec.echo();

    std::int64_t done = 0;
    std::uint64_t group_index = 0;
    while (done < spec.trajectories) {
        const std::int64_t b = std::min(spec.group, spec.trajectories - done);
        Rng grid_rng(derive_seed(spec.seed, SeedStream::grid, group_index));
        TimeSeriesBatch batch;
        batch.timestamps = irregular_grid(spec.points, grid_rng);
        Tensor vals({spec.points, b, 1});
        auto vd = vals.mutable_data();
        for (std::int64_t j = 0; j < b; ++j) {
            const auto traj = static_cast<std::uint64_t>(done + j);
            Rng prng(derive_seed(spec.seed, SeedStream::datagen, traj));
            const double a0 = prng.uniform(spec.amp_lo, spec.amp_hi);
            const double a1 = prng.uniform(spec.amp_lo, spec.amp_hi);
            const double f0 = prng.uniform(spec.freq_lo, spec.freq_hi);
            const double f1 = prng.uniform(spec.freq_lo, spec.freq_hi);
            const double z0 = prng.uniform(spec.offset_lo, spec.offset_hi);
            const auto phase = integrated_phase(batch.timestamps, f0, f1);
            const auto noise = spec.ou_sigma == 0.0
                                   ? std::vector<double>(batch.timestamps.size(), 0.0)
                                   : ou_noise(batch.timestamps, spec.ou_theta, spec.ou_mu, spec.ou_sigma,
                                              derive_seed(spec.seed, SeedStream::ou, traj));
            for (std::int64_t k = 0; k < spec.points; ++k) {
                const double t = batch.timestamps[static_cast<std::size_t>(k)];
                const double amp = a0 + (a1 - a0) * t;
                vd[static_cast<std::size_t>(k * b + j)] =
                    amp * std::sin(phase[static_cast<std::size_t>(k)]) + z0 + noise[static_cast<std::size_t>(k)];
            }
        }
        batch.values = std::move(vals);
        batch.mask = Tensor::full({spec.points, b, 1}, 1.0);
        data.batches.push_back(std::move(batch));
        done += b;
        ++group_index;
    }
    return data;
}

std::pair<Dataset, Dataset> generate_two_class_frequency(const TwoClassSpec& spec) {
    if (spec.train_series < 1 || spec.test_series < 1 || spec.points < 1)
        throw std::invalid_argument("two-class spec requires positive counts");
    auto build = [&](std::int64_t count, const std::string& split, std::uint64_t salt) {
        Dataset data;
        data.name = "two-class-frequency";
        data.split = split;
        data.dim = 1;
        data.classes = 2;
        data.spec_echo = spec.echo();
        std::int64_t done = 0;
        std::uint64_t group_index = 0;
        while (done < count) {
            const std::int64_t b = std::min(spec.group, count - done);
            Rng grid_rng(derive_seed(spec.seed, SeedStream::grid, salt * 1000003 + group_index));
            TimeSeriesBatch batch;
            batch.timestamps = irregular_grid(spec.points, grid_rng);
            Tensor vals({spec.points, b, 1});
            auto vd = vals.mutable_data();
            batch.labels.resize(static_cast<std::size_t>(b));
            for (std::int64_t j = 0; j < b; ++j) {
                const std::int64_t traj = done + j;
                const int label = static_cast<int>(traj % 2);
                batch.labels[static_cast<std::size_t>(j)] = label;
                const double f = label == 0 ? spec.freq_a : spec.freq_b;
                for (std::int64_t k = 0; k < spec.points; ++k)
                    vd[static_cast<std::size_t>(k * b + j)] =
                        std::sin(2.0 * std::numbers::pi * f * batch.timestamps[static_cast<std::size_t>(k)]);
            }
            batch.values = std::move(vals);
            batch.mask = Tensor::full({spec.points, b, 1}, 1.0);
            data.batches.push_back(std::move(batch));
            done += b;
            ++group_index;
        }
        return data;
    };
    return {build(spec.train_series, "train", 1), build(spec.test_series, "test", 2)};
}

// ---------------------------------------------------------------------------

TimeSeriesBatch apply_mcar(const TimeSeriesBatch& batch, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("MCAR rate must lie in [0, 1]");
    TimeSeriesBatch out = batch;
    out.values = batch.values.detached_copy();
    out.mask = batch.mask.detached_copy();
    Rng rng(seed);
    auto vd = out.values.mutable_data();
    auto md = out.mask.mutable_data();
    for (std::size_t i = 0; i < md.size(); ++i) {
        if (md[i] == 0.0) continue;
        if (rng.uniform() < rate) {
            md[i] = 0.0;
            vd[i] = 0.0;
        }
    }
    return out;
}

Dataset apply_mcar(const Dataset& data, double rate, std::uint64_t seed) {
    Dataset out = data;
    for (std::size_t g = 0; g < out.batches.size(); ++g)
        out.batches[g] = apply_mcar(data.batches[g], rate, derive_seed(seed, SeedStream::mcar, g));
    return out;
}

TimeSeriesBatch hold_out_observation(const TimeSeriesBatch& batch, double observed_rate, std::uint64_t seed) {
    if (!(observed_rate > 0.0) || observed_rate > 1.0)
        throw std::invalid_argument("observed rate must lie in (0, 1]");
    const std::int64_t t = batch.steps(), b = batch.series(), d = batch.dim();
    const auto keep = static_cast<std::int64_t>(std::ceil(observed_rate * static_cast<double>(t)));
    if (keep < 1) throw std::invalid_argument("observed rate keeps zero points");

    TimeSeriesBatch out = batch;
    out.targets = batch.values.detached_copy();
    out.values = Tensor({t, b, d});
    out.mask = Tensor({t, b, d});
    auto vd = out.values.mutable_data();
    auto md = out.mask.mutable_data();
    auto src = batch.values.data();
    Rng rng(seed);
    std::vector<std::int64_t> pool(static_cast<std::size_t>(t) - 1);
    for (std::int64_t j = 0; j < b; ++j) {
        // the first time point always conditions, the rest are drawn uniformly
        for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<std::int64_t>(i) + 1;
        rng.shuffle(pool);
        std::vector<std::int64_t> chosen = {0};
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + (keep - 1));
        for (std::int64_t k : chosen)
            for (std::int64_t c = 0; c < d; ++c) {
                const auto at = static_cast<std::size_t>((k * b + j) * d + c);
                md[at] = 1.0;
                vd[at] = src[static_cast<std::int64_t>(at)];
            }
    }
    return out;
}

Dataset hold_out_observation(const Dataset& data, double observed_rate, std::uint64_t seed) {
    Dataset out = data;
    for (std::size_t g = 0; g < out.batches.size(); ++g)
        out.batches[g] = hold_out_observation(data.batches[g], observed_rate, derive_seed(seed, SeedStream::holdout, g));
    return out;
}

Dataset rebatch(const Dataset& data, std::int64_t group) {
    if (group < 1) throw std::invalid_argument("batch group size must be >= 1");
    Dataset out = data;
    out.batches.clear();
    for (const auto& batch : data.batches) {
        const std::int64_t t = batch.steps(), b = batch.series(), d = batch.dim();
        for (std::int64_t start = 0; start < b; start += group) {
            const std::int64_t width = std::min(group, b - start);
            TimeSeriesBatch chunk;
            chunk.timestamps = batch.timestamps;
            auto copy_cols = [&](const Tensor& src) {
                Tensor dst({t, width, d});
                auto dd = dst.mutable_data();
                auto sd = src.data();
                for (std::int64_t k = 0; k < t; ++k)
                    for (std::int64_t j = 0; j < width; ++j)
                        for (std::int64_t c = 0; c < d; ++c)
                            dd[static_cast<std::size_t>((k * width + j) * d + c)] =
                                sd[(k * b + start + j) * d + c];
                return dst;
            };
            chunk.values = copy_cols(batch.values);
            chunk.mask = copy_cols(batch.mask);
            if (batch.has_targets()) chunk.targets = copy_cols(batch.targets);
            if (batch.has_labels())
                chunk.labels.assign(batch.labels.begin() + start, batch.labels.begin() + start + width);
            out.batches.push_back(std::move(chunk));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'D', 'A', 'T', 'T', 'N', '0', '1'};

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated dataset cache");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("truncated dataset cache");
    return s;
}

void write_doubles(std::ostream& os, std::span<const double> xs) {
    os.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
}

void read_doubles(std::istream& is, std::span<double> xs) {
    is.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated dataset cache");
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_string(os, data.name);
    write_string(os, data.split);
    write_pod<std::int64_t>(os, data.dim);
    write_pod<std::int32_t>(os, data.classes);
    write_string(os, data.spec_echo);
    write_pod<std::uint64_t>(os, data.batches.size());
    for (const auto& b : data.batches) {
        write_pod<std::int64_t>(os, b.steps());
        write_pod<std::int64_t>(os, b.series());
        write_pod<std::int64_t>(os, b.dim());
        write_pod<std::uint8_t>(os, b.has_targets() ? 1 : 0);
        write_pod<std::uint8_t>(os, b.has_labels() ? 1 : 0);
        write_doubles(os, b.timestamps);
        write_doubles(os, b.values.data());
        write_doubles(os, b.mask.data());
        if (b.has_targets()) write_doubles(os, b.targets.data());
        if (b.has_labels())
            for (int label : b.labels) write_pod<std::int32_t>(os, label);
    }
    write_pod<std::uint8_t>(os, data.norm_mean.empty() ? 0 : 1);
    if (!data.norm_mean.empty()) {
        write_doubles(os, data.norm_mean);
        write_doubles(os, data.norm_std);
    }
    if (!os) throw std::runtime_error("failed writing " + path);
}

Dataset load_cached_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error(path + " is not a dataset cache");
    Dataset data;
    data.name = read_string(is);
    data.split = read_string(is);
    data.dim = read_pod<std::int64_t>(is);
    data.classes = read_pod<std::int32_t>(is);
    data.spec_echo = read_string(is);
    const auto count = read_pod<std::uint64_t>(is);
    for (std::uint64_t g = 0; g < count; ++g) {
        const auto t = read_pod<std::int64_t>(is);
        const auto b = read_pod<std::int64_t>(is);
        const auto d = read_pod<std::int64_t>(is);
        const auto has_targets = read_pod<std::uint8_t>(is);
        const auto has_labels = read_pod<std::uint8_t>(is);
        TimeSeriesBatch batch;
        batch.timestamps.resize(static_cast<std::size_t>(t));
        read_doubles(is, batch.timestamps);
        batch.values = Tensor({t, b, d});
        read_doubles(is, batch.values.mutable_data());
        batch.mask = Tensor({t, b, d});
        read_doubles(is, batch.mask.mutable_data());
        if (has_targets) {
            batch.targets = Tensor({t, b, d});
            read_doubles(is, batch.targets.mutable_data());
        }
        if (has_labels) {
            batch.labels.resize(static_cast<std::size_t>(b));
            for (auto& label : batch.labels) label = read_pod<std::int32_t>(is);
        }
        data.batches.push_back(std::move(batch));
    }
    if (read_pod<std::uint8_t>(is) != 0) {
        data.norm_mean.resize(static_cast<std::size_t>(data.dim));
        data.norm_std.resize(static_cast<std::size_t>(data.dim));
        read_doubles(is, data.norm_mean);
        read_doubles(is, data.norm_std);
    }
    return data;
}

}  // namespace sdeattn
