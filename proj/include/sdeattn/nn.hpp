#pragma once

// Parameterized layers: linear, MLP, GRU cell, unidirectional LSTM encoder,
// multi-head scaled dot-product self-attention. All layers are plain structs
// of tensors; forward functions are free functions so layers stay copyable
// and shareable across read-only evaluation workers.

#include <cstdint>
#include <string>
#include <vector>

#include "sdeattn/rng.hpp"
#include "sdeattn/tensor.hpp"

namespace sdeattn {

// Hands out per-layer init seeds derived from one master seed; the counter
// makes every layer's draw independent of declaration order changes elsewhere.
class ParamInit {
public:
    explicit ParamInit(std::uint64_t master) : master_(master) {}

    // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), grad slot enabled
    Tensor uniform_fan_in(Shape shape, std::int64_t fan_in);
    Tensor zeros(Shape shape);

private:
    std::uint64_t master_;
    std::uint64_t counter_ = 0;
};

// Named registry of every trainable tensor; tensors share buffers with the
// layers that own them, so in-place updates are visible everywhere.
struct ParameterStore {
    std::vector<std::pair<std::string, Tensor>> entries;

    void add(const std::string& name, const Tensor& t);
    void zero_grad();
    std::int64_t total_size() const;
    const Tensor* find(const std::string& name) const;
};

// ---------------------------------------------------------------------------

struct LinearLayer {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
};

LinearLayer make_linear(std::int64_t in, std::int64_t out, ParamInit& init);
LinearLayer make_identity_linear(std::int64_t n);
void register_params(ParameterStore& store, const std::string& prefix, const LinearLayer& l);
// x[..., in] -> [..., out]
Tensor linear_forward(const LinearLayer& l, const Tensor& x);

// MLP with tanh between layers, linear last layer.
struct MlpNet {
    std::vector<LinearLayer> layers;
};

MlpNet make_mlp(std::int64_t in, const std::vector<std::int64_t>& hidden, std::int64_t out, ParamInit& init);
void register_params(ParameterStore& store, const std::string& prefix, const MlpNet& net);
Tensor mlp_forward(const MlpNet& net, const Tensor& x);

// ---------------------------------------------------------------------------

struct GruCellParams {
    LinearLayer update_x, update_h;     // z gate
    LinearLayer reset_x, reset_h;       // r gate
    LinearLayer candidate_x, candidate_h;
    std::int64_t hidden = 0;
};

GruCellParams make_gru_cell(std::int64_t input, std::int64_t hidden, ParamInit& init);
void register_params(ParameterStore& store, const std::string& prefix, const GruCellParams& p);
// h[b, hidden], x[b, input] -> new h[b, hidden]
Tensor gru_step(const GruCellParams& p, const Tensor& h, const Tensor& x);

// ---------------------------------------------------------------------------

struct LstmEncoderParams {
    LinearLayer input_x, input_h;
    LinearLayer forget_x, forget_h;
    LinearLayer output_x, output_h;
    LinearLayer cell_x, cell_h;
    std::int64_t hidden = 0;
};

struct LstmState {
    Tensor h;  // [b, hidden]
    Tensor c;  // [b, hidden]
};

LstmEncoderParams make_lstm_encoder(std::int64_t input, std::int64_t hidden, ParamInit& init);
void register_params(ParameterStore& store, const std::string& prefix, const LstmEncoderParams& p);
LstmState lstm_initial_state(const LstmEncoderParams& p, std::int64_t batch);
LstmState lstm_cell_step(const LstmEncoderParams& p, const LstmState& state, const Tensor& x);
// seq[t, b, input] -> hidden states [t, b, hidden]; causal by construction.
Tensor lstm_encode(const LstmEncoderParams& p, const Tensor& seq);

// ---------------------------------------------------------------------------

struct SelfAttentionParams {
    LinearLayer query, key, value, out;
    int heads = 1;
    std::int64_t width = 0;  // model width, heads * head_width
};

SelfAttentionParams make_self_attention(std::int64_t width, int heads, ParamInit& init);
void register_params(ParameterStore& store, const std::string& prefix, const SelfAttentionParams& p);
// seq[t, b, width] -> [t, b, width]; causal masks future key positions.
Tensor self_attention(const SelfAttentionParams& p, const Tensor& seq, bool causal);

}  // namespace sdeattn
