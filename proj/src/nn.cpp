#include "sdeattn/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace sdeattn {

Tensor ParamInit::uniform_fan_in(Shape shape, std::int64_t fan_in) {
    Rng rng(derive_seed(master_, SeedStream::init, counter_++));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
    t.set_requires_grad();
    return t;
}

Tensor ParamInit::zeros(Shape shape) {
    ++counter_;  // keep downstream layer seeds stable
    Tensor t(std::move(shape));
    t.set_requires_grad();
    return t;
}

void ParameterStore::add(const std::string& name, const Tensor& t) {
    for (const auto& [existing, _] : entries)
        if (existing == name) throw std::invalid_argument("duplicate parameter name: " + name);
    entries.emplace_back(name, t);
}

void ParameterStore::zero_grad() {
    for (auto& [_, t] : entries) t.zero_grad();
}

std::int64_t ParameterStore::total_size() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : entries) n += t.size();
    return n;
}

const Tensor* ParameterStore::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

// ---------------------------------------------------------------------------

LinearLayer make_linear(std::int64_t in, std::int64_t out, ParamInit& init) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("linear layer extents must be positive");
    return LinearLayer{init.uniform_fan_in({out, in}, in), init.uniform_fan_in({out}, in)};
}

LinearLayer make_identity_linear(std::int64_t n) {
    Tensor w({n, n});
    for (std::int64_t i = 0; i < n; ++i) w.mutable_data()[static_cast<std::size_t>(i * n + i)] = 1.0;
    w.set_requires_grad();
    Tensor b({n});
    b.set_requires_grad();
    return LinearLayer{w, b};
}

void register_params(ParameterStore& store, const std::string& prefix, const LinearLayer& l) {
    store.add(prefix + ".weight", l.weight);
    store.add(prefix + ".bias", l.bias);
}

Tensor linear_forward(const LinearLayer& l, const Tensor& x) {
    const std::int64_t in = l.weight.dim(1);
    if (x.dim(x.ndim() - 1) != in)
        throw std::invalid_argument("linear layer expects trailing dimension " + std::to_string(in) + ", got " +
                                    shape_to_string(x.shape()));
    return add(matmul(x, permute(l.weight, {1, 0})), l.bias);
}

MlpNet make_mlp(std::int64_t in, const std::vector<std::int64_t>& hidden, std::int64_t out, ParamInit& init) {
    MlpNet net;
    std::int64_t prev = in;
    for (auto h : hidden) {
        net.layers.push_back(make_linear(prev, h, init));
        prev = h;
    }
    net.layers.push_back(make_linear(prev, out, init));
    return net;
}

void register_params(ParameterStore& store, const std::string& prefix, const MlpNet& net) {
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        register_params(store, prefix + "." + std::to_string(i), net.layers[i]);
}

Tensor mlp_forward(const MlpNet& net, const Tensor& x) {
    Tensor h = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        h = linear_forward(net.layers[i], h);
        if (i + 1 < net.layers.size()) h = tanh(h);
    }
    return h;
}

// ---------------------------------------------------------------------------

GruCellParams make_gru_cell(std::int64_t input, std::int64_t hidden, ParamInit& init) {
    GruCellParams p;
    p.update_x = make_linear(input, hidden, init);
    p.update_h = make_linear(hidden, hidden, init);
    p.reset_x = make_linear(input, hidden, init);
    p.reset_h = make_linear(hidden, hidden, init);
    p.candidate_x = make_linear(input, hidden, init);
    p.candidate_h = make_linear(hidden, hidden, init);
    p.hidden = hidden;
    return p;
}

void register_params(ParameterStore& store, const std::string& prefix, const GruCellParams& p) {
    register_params(store, prefix + ".update_x", p.update_x);
    register_params(store, prefix + ".update_h", p.update_h);
    register_params(store, prefix + ".reset_x", p.reset_x);
    register_params(store, prefix + ".reset_h", p.reset_h);
    register_params(store, prefix + ".candidate_x", p.candidate_x);
    register_params(store, prefix + ".candidate_h", p.candidate_h);
}

Tensor gru_step(const GruCellParams& p, const Tensor& h, const Tensor& x) {
    auto z = sigmoid(add(linear_forward(p.update_x, x), linear_forward(p.update_h, h)));
    auto r = sigmoid(add(linear_forward(p.reset_x, x), linear_forward(p.reset_h, h)));
    auto cand = tanh(add(linear_forward(p.candidate_x, x), linear_forward(p.candidate_h, mul(r, h))));
    // h' = (1 - z) * h + z * cand
    return add(mul(sub(Tensor::full(z.shape(), 1.0), z), h), mul(z, cand));
}

// ---------------------------------------------------------------------------

LstmEncoderParams make_lstm_encoder(std::int64_t input, std::int64_t hidden, ParamInit& init) {
    LstmEncoderParams p;
    p.input_x = make_linear(input, hidden, init);
    p.input_h = make_linear(hidden, hidden, init);
    p.forget_x = make_linear(input, hidden, init);
    p.forget_h = make_linear(hidden, hidden, init);
    p.output_x = make_linear(input, hidden, init);
    p.output_h = make_linear(hidden, hidden, init);
    p.cell_x = make_linear(input, hidden, init);
    p.cell_h = make_linear(hidden, hidden, init);
    p.hidden = hidden;
    return p;
}

void register_params(ParameterStore& store, const std::string& prefix, const LstmEncoderParams& p) {
    register_params(store, prefix + ".input_x", p.input_x);
    register_params(store, prefix + ".input_h", p.input_h);
    register_params(store, prefix + ".forget_x", p.forget_x);
    register_params(store, prefix + ".forget_h", p.forget_h);
    register_params(store, prefix + ".output_x", p.output_x);
    register_params(store, prefix + ".output_h", p.output_h);
    register_params(store, prefix + ".cell_x", p.cell_x);
    register_params(store, prefix + ".cell_h", p.cell_h);
}

LstmState lstm_initial_state(const LstmEncoderParams& p, std::int64_t batch) {
    return LstmState{Tensor({batch, p.hidden}), Tensor({batch, p.hidden})};
}

LstmState lstm_cell_step(const LstmEncoderParams& p, const LstmState& state, const Tensor& x) {
    auto i = sigmoid(add(linear_forward(p.input_x, x), linear_forward(p.input_h, state.h)));
    auto f = sigmoid(add(linear_forward(p.forget_x, x), linear_forward(p.forget_h, state.h)));
    auto o = sigmoid(add(linear_forward(p.output_x, x), linear_forward(p.output_h, state.h)));
    auto g = tanh(add(linear_forward(p.cell_x, x), linear_forward(p.cell_h, state.h)));
    auto c = add(mul(f, state.c), mul(i, g));
    return LstmState{mul(o, tanh(c)), c};
}

Tensor lstm_encode(const LstmEncoderParams& p, const Tensor& seq) {
    if (seq.ndim() != 3) throw std::invalid_argument("lstm_encode expects seq[t, b, input]");
    const std::int64_t t = seq.dim(0), b = seq.dim(1);
    if (t < 1) throw std::invalid_argument("lstm_encode requires a non-empty sequence");
    LstmState state = lstm_initial_state(p, b);
    std::vector<Tensor> outputs;
    outputs.reserve(static_cast<std::size_t>(t));
    for (std::int64_t k = 0; k < t; ++k) {
        std::vector<std::int64_t> idx = {k};
        auto xk = reshape(slice_time(seq, idx), {b, seq.dim(2)});
        state = lstm_cell_step(p, state, xk);
        outputs.push_back(reshape(state.h, {1, b, p.hidden}));
    }
    return concat(outputs, 0);
}

// ---------------------------------------------------------------------------

SelfAttentionParams make_self_attention(std::int64_t width, int heads, ParamInit& init) {
    if (heads < 1 || width % heads != 0)
        throw std::invalid_argument("attention head count " + std::to_string(heads) + " must divide width " +
                                    std::to_string(width));
    SelfAttentionParams p;
    p.query = make_linear(width, width, init);
    p.key = make_linear(width, width, init);
    p.value = make_linear(width, width, init);
    p.out = make_linear(width, width, init);
    p.heads = heads;
    p.width = width;
    return p;
}

void register_params(ParameterStore& store, const std::string& prefix, const SelfAttentionParams& p) {
    register_params(store, prefix + ".query", p.query);
    register_params(store, prefix + ".key", p.key);
    register_params(store, prefix + ".value", p.value);
    register_params(store, prefix + ".out", p.out);
}

Tensor self_attention(const SelfAttentionParams& p, const Tensor& seq, bool causal) {
    if (seq.ndim() != 3 || seq.dim(2) != p.width)
        throw std::invalid_argument("self_attention expects seq[t, b, " + std::to_string(p.width) + "], got " +
                                    shape_to_string(seq.shape()));
    const std::int64_t t = seq.dim(0), b = seq.dim(1);
    const std::int64_t nh = p.heads, dh = p.width / nh;

    auto to_heads = [&](const Tensor& x) {
        // [t, b, width] -> [b * heads, t, head_width]
        auto split = reshape(x, {t, b, nh, dh});
        return reshape(permute(split, {1, 2, 0, 3}), {b * nh, t, dh});
    };
    auto q = to_heads(linear_forward(p.query, seq));
    auto k = to_heads(linear_forward(p.key, seq));
    auto v = to_heads(linear_forward(p.value, seq));

    auto scores = scale(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto weights = causal ? causal_row_softmax(scores) : softmax(scores, 2);
    auto ctx = matmul(weights, v);  // [b * heads, t, head_width]

    auto merged = reshape(permute(reshape(ctx, {b, nh, t, dh}), {2, 0, 1, 3}), {t, b, p.width});
    return linear_forward(p.out, merged);
}

}  // namespace sdeattn
