#include "sdeattn/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sdeattn {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + " expects an integer, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + " expects an unsigned integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key " + key + " expects a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument("config key " + key + " expects true/false, got '" + v + "'");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& key, const std::string& v, F&& one) {
    std::vector<T> out;
    std::string cur;
    std::istringstream is(v);
    while (std::getline(is, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(one(key, cur));
    }
    if (out.empty()) throw std::invalid_argument("config key " + key + " expects a non-empty list");
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_list(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += fmt(xs[i]);
    }
    return out;
}

std::string fmt_list(const std::vector<std::uint64_t>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(xs[i]);
    }
    return out;
}

std::string fmt_list(const std::vector<std::string>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += xs[i];
    }
    return out;
}

}  // namespace

const std::vector<std::string>& known_variants() {
    static const std::vector<std::string> names = {"sde-rnn", "sde-scha", "sde-tvf-l", "sde-tvf-t", "sde-pyr"};
    return names;
}

AttentionKind variant_attention(const std::string& variant) {
    if (variant == "sde-rnn") return AttentionKind::none;
    if (variant == "sde-scha") return AttentionKind::static_channel;
    if (variant == "sde-tvf-l") return AttentionKind::tvf_lstm;
    if (variant == "sde-tvf-t") return AttentionKind::tvf_transformer;
    if (variant == "sde-pyr") return AttentionKind::pyramidal;
    throw std::invalid_argument("unknown model variant: " + variant);
}

void ExperimentConfig::set_value(const std::string& section, const std::string& key, const std::string& raw) {
    const std::string value = trim(raw);
    const std::string at = section + "." + key;
    if (section == "dataset") {
        if (key == "kind") {
            if (value != "periodic" && value != "two-class-freq" && value != "file" && value != "cache")
                throw std::invalid_argument("dataset.kind must be periodic, two-class-freq, file, or cache");
            data.kind = value;
        } else if (key == "train_path") data.train_path = value;
        else if (key == "test_path") data.test_path = value;
        else if (key == "trajectories") data.trajectories = parse_int(at, value);
        else if (key == "eval_trajectories") data.eval_trajectories = parse_int(at, value);
        else if (key == "points") data.points = parse_int(at, value);
        else if (key == "amp_lo") data.amp_lo = parse_double(at, value);
        else if (key == "amp_hi") data.amp_hi = parse_double(at, value);
        else if (key == "freq_lo") data.freq_lo = parse_double(at, value);
        else if (key == "freq_hi") data.freq_hi = parse_double(at, value);
        else if (key == "offset_lo") data.offset_lo = parse_double(at, value);
        else if (key == "offset_hi") data.offset_hi = parse_double(at, value);
        else if (key == "ou_theta") data.ou_theta = parse_double(at, value);
        else if (key == "ou_mu") data.ou_mu = parse_double(at, value);
        else if (key == "ou_sigma") data.ou_sigma = parse_double(at, value);
        else if (key == "train_series") data.train_series = parse_int(at, value);
        else if (key == "test_series") data.test_series = parse_int(at, value);
        else if (key == "freq_a") data.freq_a = parse_double(at, value);
        else if (key == "freq_b") data.freq_b = parse_double(at, value);
        else if (key == "seed") data.seed = parse_u64(at, value);
        else throw std::invalid_argument("unknown config key " + at);
    } else if (section == "task") {
        if (key == "task") task = task_from_string(value);
        else throw std::invalid_argument("unknown config key " + at);
    } else if (section == "model") {
        if (key == "latent") model.latent = parse_int(at, value);
        else if (key == "mlp_hidden") model.mlp_hidden = parse_int(at, value);
        else if (key == "output_hidden") model.output_hidden = parse_int(at, value);
        else if (key == "heads") model.heads = static_cast<int>(parse_int(at, value));
        else if (key == "tvf_depth") model.tvf_depth = static_cast<int>(parse_int(at, value));
        else if (key == "max_len") model.max_len = parse_int(at, value);
        else if (key == "pyramid_levels") model.pyramid_levels = static_cast<int>(parse_int(at, value));
        else if (key == "substeps") model.substeps = static_cast<int>(parse_int(at, value));
        else if (key == "feed_mask") model.feed_mask = parse_bool(at, value);
        else if (key == "mean_pool_classifier") model.mean_pool_classifier = parse_bool(at, value);
        else throw std::invalid_argument("unknown config key " + at);
    } else if (section == "train") {
        if (key == "iters") train.iters = parse_int(at, value);
        else if (key == "batch") train.batch = parse_int(at, value);
        else if (key == "lr") train.adam.lr = parse_double(at, value);
        else if (key == "beta1") train.adam.beta1 = parse_double(at, value);
        else if (key == "beta2") train.adam.beta2 = parse_double(at, value);
        else if (key == "eps") train.adam.eps = parse_double(at, value);
        else if (key == "clip_norm") train.adam.clip_norm = parse_double(at, value);
        else if (key == "seeds") train.seeds = parse_list<std::uint64_t>(at, value, parse_u64);
        else if (key == "resample_brownian") train.resample_brownian = parse_bool(at, value);
        else if (key == "resample_mask") train.resample_mask = parse_bool(at, value);
        else throw std::invalid_argument("unknown config key " + at);
    } else if (section == "sweep") {
        if (key == "variants") {
            sweep.variants = parse_list<std::string>(at, value, [](const std::string&, const std::string& v) {
                (void)variant_attention(v);
                return v;
            });
        } else if (key == "missing_rates") sweep.missing_rates = parse_list<double>(at, value, parse_double);
        else if (key == "observed_rates") sweep.observed_rates = parse_list<double>(at, value, parse_double);
        else if (key == "workers") sweep.workers = static_cast<int>(parse_int(at, value));
        else if (key == "max_cells") sweep.max_cells = parse_int(at, value);
        else throw std::invalid_argument("unknown config key " + at);
    } else {
        throw std::invalid_argument("unknown config section [" + section + "]");
    }
}

std::string ExperimentConfig::echo() const {
    std::ostringstream os;
    os << "[dataset]\n";
    os << "kind=" << data.kind << "\n";
    os << "train_path=" << data.train_path << "\n";
    os << "test_path=" << data.test_path << "\n";
    os << "trajectories=" << data.trajectories << "\n";
    os << "eval_trajectories=" << data.eval_trajectories << "\n";
    os << "points=" << data.points << "\n";
    os << "amp_lo=" << fmt(data.amp_lo) << "\namp_hi=" << fmt(data.amp_hi) << "\n";
    os << "freq_lo=" << fmt(data.freq_lo) << "\nfreq_hi=" << fmt(data.freq_hi) << "\n";
    os << "offset_lo=" << fmt(data.offset_lo) << "\noffset_hi=" << fmt(data.offset_hi) << "\n";
    os << "ou_theta=" << fmt(data.ou_theta) << "\nou_mu=" << fmt(data.ou_mu) << "\nou_sigma=" << fmt(data.ou_sigma)
       << "\n";
    os << "train_series=" << data.train_series << "\ntest_series=" << data.test_series << "\n";
    os << "freq_a=" << fmt(data.freq_a) << "\nfreq_b=" << fmt(data.freq_b) << "\n";
    os << "seed=" << data.seed << "\n";
    os << "\n[task]\ntask=" << to_string(task) << "\n";
    os << "\n[model]\n";
    os << "latent=" << model.latent << "\n";
    os << "mlp_hidden=" << model.mlp_hidden << "\n";
    os << "output_hidden=" << model.output_hidden << "\n";
    os << "heads=" << model.heads << "\n";
    os << "tvf_depth=" << model.tvf_depth << "\n";
    os << "max_len=" << model.max_len << "\n";
    os << "pyramid_levels=" << model.pyramid_levels << "\n";
    os << "substeps=" << model.substeps << "\n";
    os << "feed_mask=" << (model.feed_mask ? "true" : "false") << "\n";
    os << "mean_pool_classifier=" << (model.mean_pool_classifier ? "true" : "false") << "\n";
    os << "\n[train]\n";
    os << "iters=" << train.iters << "\n";
    os << "batch=" << train.batch << "\n";
    os << "lr=" << fmt(train.adam.lr) << "\n";
    os << "beta1=" << fmt(train.adam.beta1) << "\n";
    os << "beta2=" << fmt(train.adam.beta2) << "\n";
    os << "eps=" << fmt(train.adam.eps) << "\n";
    os << "clip_norm=" << fmt(train.adam.clip_norm) << "\n";
    os << "seeds=" << fmt_list(train.seeds) << "\n";
    os << "resample_brownian=" << (train.resample_brownian ? "true" : "false") << "\n";
    os << "resample_mask=" << (train.resample_mask ? "true" : "false") << "\n";
    os << "\n[sweep]\n";
    os << "variants=" << fmt_list(sweep.variants) << "\n";
    os << "missing_rates=" << fmt_list(sweep.missing_rates) << "\n";
    os << "observed_rates=" << fmt_list(sweep.observed_rates) << "\n";
    os << "workers=" << sweep.workers << "\n";
    os << "max_cells=" << sweep.max_cells << "\n";
    return os.str();
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw std::invalid_argument("line " + std::to_string(lineno) + ": unclosed section");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        const auto at = t.find('=');
        if (at == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
        if (section.empty())
            throw std::invalid_argument("line " + std::to_string(lineno) + ": key before any [section]");
        cfg.set_value(section, trim(t.substr(0, at)), t.substr(at + 1));
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace sdeattn
