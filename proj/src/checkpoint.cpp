#include "sdeattn/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sdeattn {

namespace {

constexpr const char* kHeader = "sdeattn-checkpoint v1";

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string expect_line(std::istream& is, const std::string& what) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("checkpoint ended while reading " + what);
    return line;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& params, const MetaBlock& meta) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << kHeader << "\n";
    os << "meta " << meta.size() << "\n";
    for (const auto& [k, v] : meta) {
        if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
            v.find('\n') != std::string::npos)
            throw std::invalid_argument("metadata keys must not contain '=' and values must be single-line: " + k);
        os << k << "=" << v << "\n";
    }
    os << "params " << params.entries.size() << "\n";
    for (const auto& [name, t] : params.entries) {
        os << name << " " << t.ndim();
        for (int d = 0; d < t.ndim(); ++d) os << " " << t.dim(d);
        os << "\n";
        auto data = t.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (i) os << " ";
            os << fmt_double(data[i]);
        }
        os << "\n";
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

namespace {

MetaBlock parse_meta(std::istream& is) {
    if (expect_line(is, "header") != kHeader) throw std::runtime_error("not a checkpoint file");
    std::istringstream head(expect_line(is, "meta count"));
    std::string tag;
    std::size_t count = 0;
    head >> tag >> count;
    if (tag != "meta") throw std::runtime_error("malformed checkpoint meta block");
    MetaBlock meta;
    for (std::size_t i = 0; i < count; ++i) {
        const auto line = expect_line(is, "meta entry");
        const auto at = line.find('=');
        if (at == std::string::npos) throw std::runtime_error("malformed meta entry: " + line);
        meta.emplace_back(line.substr(0, at), line.substr(at + 1));
    }
    return meta;
}

}  // namespace

MetaBlock load_checkpoint(const std::string& path, ParameterStore& params) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    auto meta = parse_meta(is);

    std::istringstream head(expect_line(is, "params count"));
    std::string tag;
    std::size_t count = 0;
    head >> tag >> count;
    if (tag != "params") throw std::runtime_error("malformed checkpoint params block");
    if (count != params.entries.size())
        throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, the model expects " +
                                 std::to_string(params.entries.size()));
    for (std::size_t p = 0; p < count; ++p) {
        std::istringstream desc(expect_line(is, "tensor descriptor"));
        std::string name;
        int ndim = 0;
        desc >> name >> ndim;
        auto& [expected_name, tensor] = params.entries[p];
        if (name != expected_name)
            throw std::runtime_error("checkpoint tensor '" + name + "' does not match expected '" + expected_name +
                                     "'");
        Shape shape(static_cast<std::size_t>(ndim));
        for (auto& d : shape) desc >> d;
        if (shape != tensor.shape())
            throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_to_string(shape) +
                                     ", expected " + shape_to_string(tensor.shape()));
        std::istringstream values(expect_line(is, "tensor values"));
        auto data = tensor.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::string tok;
            if (!(values >> tok)) throw std::runtime_error("too few values for tensor '" + name + "'");
            data[i] = std::strtod(tok.c_str(), nullptr);
        }
    }
    return meta;
}

MetaBlock read_checkpoint_meta(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    return parse_meta(is);
}

const std::string* meta_value(const MetaBlock& meta, const std::string& key) {
    for (const auto& [k, v] : meta)
        if (k == key) return &v;
    return nullptr;
}

}  // namespace sdeattn
