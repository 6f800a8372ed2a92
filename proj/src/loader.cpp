#include "sdeattn/loader.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sdeattn {

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

struct RawSeries {
    std::vector<std::vector<double>> channels;          // [d][t]
    std::vector<std::vector<std::uint8_t>> observed;    // [d][t]
    std::string label;
};

struct RawFile {
    std::string name;
    std::vector<RawSeries> series;
    bool labeled = false;
    std::vector<std::string> class_order;  // from the header when declared
};

double parse_value(const std::string& tok, const std::string& path, bool& seen) {
    const auto t = trim(tok);
    if (t == "?") {
        seen = false;
        return 0.0;
    }
    seen = true;
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(t, &used);
    } catch (const std::exception&) {
        throw std::runtime_error(path + ": cannot parse value '" + t + "'");
    }
    if (used != t.size()) throw std::runtime_error(path + ": cannot parse value '" + t + "'");
    return v;
}

RawFile read_repository(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    RawFile raw;
    raw.name = path;
    bool in_data = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        if (!in_data) {
            if (text[0] != '@')
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": expected '@' directive before the data section");
            std::istringstream dir(text);
            std::string key;
            dir >> key;
            key = lower(key.substr(1));
            if (key == "data") {
                in_data = true;
            } else if (key == "problemname") {
                dir >> raw.name;
            } else if (key == "classlabel") {
                std::string flag;
                dir >> flag;
                raw.labeled = lower(flag) == "true";
                std::string label;
                while (dir >> label) raw.class_order.push_back(label);
            } else if (key == "timestamps") {
                std::string flag;
                dir >> flag;
                if (lower(flag) == "true")
                    throw std::runtime_error(path + ": explicit per-point timestamps are not supported");
            }
            // remaining directives (@univariate, @seriesLength, ...) are
            // validated against the data itself
            continue;
        }
        auto pieces = split(text, ':');
        RawSeries series;
        if (raw.labeled) {
            if (pieces.size() < 2)
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": missing class label");
            series.label = trim(pieces.back());
            pieces.pop_back();
        }
        for (const auto& piece : pieces) {
            std::vector<double> channel;
            std::vector<std::uint8_t> seen;
            for (const auto& tok : split(piece, ',')) {
                bool ok = false;
                channel.push_back(parse_value(tok, path, ok));
                seen.push_back(ok ? 1 : 0);
            }
            series.channels.push_back(std::move(channel));
            series.observed.push_back(std::move(seen));
        }
        raw.series.push_back(std::move(series));
    }
    if (!in_data) throw std::runtime_error(path + ": no @data section found");
    if (raw.series.empty()) throw std::runtime_error(path + ": data section is empty");
    return raw;
}

RawFile read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    RawFile raw;
    raw.name = path;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(path + ": empty file");
    std::int64_t t = 0, d = 0;
    int labeled = 0;
    if (std::sscanf(line.c_str(), "# sdeattn-series T=%lld D=%lld labeled=%d", reinterpret_cast<long long*>(&t),
                    reinterpret_cast<long long*>(&d), &labeled) != 3)
        throw std::runtime_error(path + ": missing '# sdeattn-series T=.. D=.. labeled=..' header");
    if (t < 1 || d < 1) throw std::runtime_error(path + ": invalid extents in header");
    raw.labeled = labeled != 0;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        const auto text = trim(line);
        if (text.empty()) continue;
        auto cells = split(text, ',');
        if (static_cast<std::int64_t>(cells.size()) != 1 + t * d)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(1 + t * d) +
                                     " cells, got " + std::to_string(cells.size()));
        RawSeries series;
        series.label = trim(cells[0]);
        series.channels.assign(static_cast<std::size_t>(d), std::vector<double>(static_cast<std::size_t>(t)));
        series.observed.assign(static_cast<std::size_t>(d),
                               std::vector<std::uint8_t>(static_cast<std::size_t>(t)));
        for (std::int64_t k = 0; k < t; ++k)
            for (std::int64_t c = 0; c < d; ++c) {
                bool ok = false;
                const auto& cell = cells[static_cast<std::size_t>(1 + k * d + c)];
                series.channels[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] =
                    parse_value(cell, path, ok);
                series.observed[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] = ok ? 1 : 0;
            }
        raw.series.push_back(std::move(series));
    }
    if (raw.series.empty()) throw std::runtime_error(path + ": no series rows");
    return raw;
}

std::vector<std::string> label_order(const RawFile& raw) {
    if (!raw.labeled) return {};
    if (!raw.class_order.empty()) return raw.class_order;
    std::vector<std::string> seen;
    for (const auto& s : raw.series)
        if (std::find(seen.begin(), seen.end(), s.label) == seen.end()) seen.push_back(s.label);
    // numeric labels sort numerically, anything else lexicographically
    bool numeric = true;
    for (const auto& l : seen) {
        try {
            std::size_t used = 0;
            (void)std::stod(l, &used);
            numeric = numeric && used == l.size();
        } catch (const std::exception&) {
            numeric = false;
        }
    }
    std::sort(seen.begin(), seen.end(), [&](const std::string& a, const std::string& b) {
        if (numeric) return std::stod(a) < std::stod(b);
        return a < b;
    });
    return seen;
}

Dataset assemble(const RawFile& raw, const std::vector<std::string>& classes, const std::string& path) {
    const std::size_t d = raw.series.front().channels.size();
    const std::size_t t = raw.series.front().channels.front().size();
    const std::size_t n = raw.series.size();
    for (const auto& s : raw.series) {
        if (s.channels.size() != d)
            throw std::runtime_error(path + ": inconsistent channel count across series");
        for (const auto& ch : s.channels)
            if (ch.size() != t) throw std::runtime_error(path + ": inconsistent series lengths");
    }

    Dataset data;
    data.name = raw.name;
    data.dim = static_cast<std::int64_t>(d);
    data.classes = static_cast<int>(classes.size());

    TimeSeriesBatch batch;
    batch.timestamps.resize(t);
    for (std::size_t k = 0; k < t; ++k)
        batch.timestamps[k] = static_cast<double>(k + 1) / static_cast<double>(t);
    batch.values = Tensor({static_cast<std::int64_t>(t), static_cast<std::int64_t>(n), static_cast<std::int64_t>(d)});
    batch.mask = Tensor({static_cast<std::int64_t>(t), static_cast<std::int64_t>(n), static_cast<std::int64_t>(d)});
    auto vd = batch.values.mutable_data();
    auto md = batch.mask.mutable_data();
    if (raw.labeled) batch.labels.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto& s = raw.series[j];
        if (raw.labeled) {
            const auto it = std::find(classes.begin(), classes.end(), s.label);
            if (it == classes.end()) throw std::runtime_error(path + ": unknown class label '" + s.label + "'");
            batch.labels[j] = static_cast<int>(it - classes.begin());
        }
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t k = 0; k < t; ++k) {
                const auto at = (k * n + j) * d + c;
                md[at] = s.observed[c][k] ? 1.0 : 0.0;
                vd[at] = s.observed[c][k] ? s.channels[c][k] : 0.0;
            }
    }
    data.batches.push_back(std::move(batch));
    return data;
}

}  // namespace

SeriesFormat sniff_format(const std::string& path) {
    const auto dot = path.find_last_of('.');
    const auto ext = dot == std::string::npos ? "" : lower(path.substr(dot + 1));
    return (ext == "ts" || ext == "arff") ? SeriesFormat::repository : SeriesFormat::csv;
}

Dataset read_series_file(const std::string& path, SeriesFormat format) {
    RawFile raw = format == SeriesFormat::repository ? read_repository(path) : read_csv(path);
    return assemble(raw, label_order(raw), path);
}

void write_series_csv(const Dataset& data, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    std::int64_t t = 0;
    bool labeled = false;
    for (const auto& b : data.batches) {
        if (t == 0) t = b.steps();
        if (b.steps() != t) throw std::invalid_argument("csv export needs a single shared series length");
        labeled = labeled || b.has_labels();
    }
    os << "# sdeattn-series T=" << t << " D=" << data.dim << " labeled=" << (labeled ? 1 : 0) << "\n";
    char buf[32];
    for (const auto& b : data.batches) {
        auto vd = b.values.data();
        auto md = b.mask.data();
        const std::int64_t n = b.series(), d = b.dim();
        for (std::int64_t j = 0; j < n; ++j) {
            os << (b.has_labels() ? std::to_string(b.labels[static_cast<std::size_t>(j)]) : std::string("?"));
            for (std::int64_t k = 0; k < t; ++k)
                for (std::int64_t c = 0; c < d; ++c) {
                    const auto at = (k * n + j) * d + c;
                    if (md[at] == 0.0) {
                        os << ",?";
                    } else {
                        std::snprintf(buf, sizeof(buf), "%.17g", vd[at]);
                        os << "," << buf;
                    }
                }
            os << "\n";
        }
    }
    if (!os) throw std::runtime_error("failed writing " + path);
}

std::pair<std::vector<double>, std::vector<double>> channel_stats(const Dataset& data) {
    std::vector<double> sum(static_cast<std::size_t>(data.dim), 0.0);
    std::vector<double> sumsq(static_cast<std::size_t>(data.dim), 0.0);
    std::vector<double> count(static_cast<std::size_t>(data.dim), 0.0);
    for (const auto& b : data.batches) {
        auto vd = b.values.data();
        auto md = b.mask.data();
        const std::int64_t d = b.dim();
        for (std::int64_t i = 0; i < b.values.size(); ++i) {
            if (md[i] == 0.0) continue;
            const auto c = static_cast<std::size_t>(i % d);
            sum[c] += vd[i];
            sumsq[c] += vd[i] * vd[i];
            count[c] += 1.0;
        }
    }
    std::vector<double> mean(sum.size(), 0.0), sd(sum.size(), 1.0);
    for (std::size_t c = 0; c < sum.size(); ++c) {
        if (count[c] == 0.0) continue;
        mean[c] = sum[c] / count[c];
        const double var = sumsq[c] / count[c] - mean[c] * mean[c];
        sd[c] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return {mean, sd};
}

void normalize_channels(Dataset& data, const std::vector<double>& mean, const std::vector<double>& sd) {
    if (static_cast<std::int64_t>(mean.size()) != data.dim || sd.size() != mean.size())
        throw std::invalid_argument("normalization statistics do not match the channel count");
    for (auto& b : data.batches) {
        auto vd = b.values.mutable_data();
        auto md = b.mask.data();
        const std::int64_t d = b.dim();
        for (std::int64_t i = 0; i < b.values.size(); ++i) {
            if (md[i] == 0.0) continue;
            const auto c = static_cast<std::size_t>(i % d);
            vd[i] = (vd[i] - mean[c]) / sd[c];
        }
    }
    data.norm_mean = mean;
    data.norm_std = sd;
}

SplitPair load_dataset_pair(const std::string& train_path, const std::string& test_path, SeriesFormat format) {
    RawFile raw_train = format == SeriesFormat::repository ? read_repository(train_path) : read_csv(train_path);
    const auto classes = label_order(raw_train);
    SplitPair pair;
    pair.train = assemble(raw_train, classes, train_path);
    pair.train.split = "train";
    RawFile raw_test = format == SeriesFormat::repository ? read_repository(test_path) : read_csv(test_path);
    pair.test = assemble(raw_test, classes, test_path);
    pair.test.split = "test";
    if (pair.test.dim != pair.train.dim)
        throw std::runtime_error(test_path + ": channel count differs from the train split");

    auto [mean, sd] = channel_stats(pair.train);
    normalize_channels(pair.train, mean, sd);
    normalize_channels(pair.test, mean, sd);
    return pair;
}

}  // namespace sdeattn
