#pragma once

// Latent-state attention mechanisms, each consuming the causal prefix of
// pre-update latent states and producing the transformed state for the
// newest step. Gate-style modules (static channel, time-varying feature)
// emit sigmoid gates in (0,1) and multiply them into the state; the
// pyramidal module is a general multi-scale transform of the prefix.

#include <cstdint>
#include <optional>
#include <vector>

#include "sdeattn/nn.hpp"
#include "sdeattn/tensor.hpp"

namespace sdeattn {

enum class AttentionKind {
    none,
    static_channel,
    tvf_lstm,
    tvf_transformer,
    pyramidal,
};

AttentionKind attention_kind_from_string(const std::string& name);
std::string to_string(AttentionKind kind);

// ---------------------------------------------------------------------------
// Static channel attention: one gate per latent channel computed from the
// batch mean at the current step and shared across the batch. Predictions
// therefore depend on batch composition at evaluation time; runners record
// the evaluation batch size alongside results.

struct StaticChannelAttnParams {
    MlpNet mlp;  // latent -> latent / reduction -> latent, sigmoid applied on top
    std::int64_t latent = 0;
};

StaticChannelAttnParams make_static_channel_attn(std::int64_t latent, std::int64_t reduction, ParamInit& init);
void register_params(ParameterStore& store, const std::string& prefix, const StaticChannelAttnParams& p);

struct GatedStates {
    Tensor gated;  // [batch, latent]
    Tensor gate;   // [latent], shared across the batch
};

GatedStates static_channel_gate(const StaticChannelAttnParams& p, const Tensor& states);

// ---------------------------------------------------------------------------
// Time-varying feature attention: a temporal encoder (LSTM or causal
// transformer stack) reads the prefix of latent states; a linear head with
// sigmoid emits one gate per feature for the newest step.

struct TvfAttnParams {
    bool use_lstm = true;
    LstmEncoderParams lstm;
    std::vector<SelfAttentionParams> transformer;  // causal blocks
    Tensor positions;                              // [max_len, latent], transformer only
    LinearLayer head;                              // encoder width -> latent
    std::int64_t latent = 0;
};

TvfAttnParams make_tvf_attn(std::int64_t latent, bool use_lstm, int heads, int depth, std::int64_t max_len,
                            ParamInit& init);
void register_params(ParameterStore& store, const std::string& prefix, const TvfAttnParams& p);

// Incremental LSTM-encoder state carried across steps by the caller.
struct TvfLstmCursor {
    LstmState state;
};

TvfLstmCursor tvf_lstm_start(const TvfAttnParams& p, std::int64_t batch);
// Feeds the newest state into the encoder and returns its gate row [b, latent].
Tensor tvf_lstm_gate(const TvfAttnParams& p, TvfLstmCursor& cursor, const Tensor& state);

// Transformer variant: consumes the whole prefix [t, b, latent], returns the
// gate row for the last step. Gates for earlier steps never change when the
// prefix grows because every block is causally masked.
Tensor tvf_transformer_gate(const TvfAttnParams& p, const Tensor& prefix);

// ---------------------------------------------------------------------------
// Pyramidal attention: per level l, keep every stride_base^l-th step, run
// causal self-attention at that scale, linearly interpolate back to full
// length, then fuse the concatenated levels down to the latent width.

struct PyramidConfig {
    int levels = 1;
    int stride_base = 2;
    std::vector<SelfAttentionParams> level_attn;
    LinearLayer fusion;  // levels * latent -> latent
    std::int64_t latent = 0;
};

PyramidConfig make_pyramid(std::int64_t latent, int levels, int heads, ParamInit& init, int stride_base = 2);
void register_params(ParameterStore& store, const std::string& prefix, const PyramidConfig& p);

// Keeps indices 0, s, 2s, ... along the time axis.
Tensor downsample(const Tensor& seq, std::int64_t stride);
// Linear interpolation along the time axis onto a uniform grid of length
// target_len; endpoints map to endpoints.
Tensor upsample_linear(const Tensor& seq, std::int64_t target_len);
// Full multi-scale transform of seq[t, b, latent], same output shape.
Tensor pyramidal_transform(const PyramidConfig& cfg, const Tensor& seq);

// Number of levels for sequences of length t: floor(log2(t)) clamped to [1, 4].
int default_pyramid_levels(std::int64_t t);

}  // namespace sdeattn
