#pragma once

// The latent-SDE recurrent model: between observation times the state is
// integrated under learned drift/diffusion along a fixed Brownian path; at
// each observation the pre-update state is optionally transformed by an
// attention module, then assimilated by a GRU cell fed the masked values
// (and the mask itself). Per-step predictions come from the pre-update
// state; classification reads the final (or mean) post-update state.

#include <cstdint>
#include <vector>

#include "sdeattn/attention.hpp"
#include "sdeattn/data.hpp"
#include "sdeattn/nn.hpp"
#include "sdeattn/sde.hpp"

namespace sdeattn {

struct ModelConfig {
    std::int64_t latent = 16;
    std::int64_t mlp_hidden = 50;    // drift / diffusion hidden width
    std::int64_t output_hidden = 50; // output head hidden width
    AttentionKind attention = AttentionKind::none;
    int heads = 2;
    int tvf_depth = 1;       // transformer blocks in the tvf encoder
    std::int64_t max_len = 512;
    int pyramid_levels = 0;  // 0 derives from the sequence length at build time
    int substeps = 5;
    bool feed_mask = true;
    bool mean_pool_classifier = false;
    std::int64_t data_dim = 1;
    int classes = 0;  // 0 builds no classifier head
    std::uint64_t init_seed = 0;
};

struct SdeRnnModel {
    ModelConfig config;
    SdeDynamics dynamics;
    LinearLayer input_encoder;  // (values, mask) concatenated -> gru input
    GruCellParams gru;
    StaticChannelAttnParams static_attn;
    TvfAttnParams tvf;
    PyramidConfig pyramid;
    MlpNet output_net;       // latent -> data_dim
    LinearLayer classifier;  // latent -> classes
    ParameterStore params;
};

// typical_len sizes the pyramid when pyramid_levels is 0.
SdeRnnModel build_model(const ModelConfig& config, std::int64_t typical_len);

// Brownian path over the batch's solver grid (substeps per interval,
// starting at time 0).
BrownianPath make_batch_path(const SdeRnnModel& model, const TimeSeriesBatch& batch, std::uint64_t seed);

struct ForwardTrace {
    Tensor pre_rnn;      // [t, b, latent]
    Tensor attended;     // [t, b, latent]
    Tensor post_rnn;     // [t, b, latent]
    Tensor outputs;      // [t, b, data_dim]
    Tensor final_state;  // [b, latent]
    std::vector<std::uint8_t> diverged;  // per trajectory; flagged rows carry zeros, never NaNs
};

struct ForwardOptions {
    // Test hook: substitutes a unit gate for static channel attention so the
    // trace must match an attention-free run bitwise.
    bool force_unit_static_gate = false;
};

ForwardTrace forward(const SdeRnnModel& model, const TimeSeriesBatch& batch, const BrownianPath& path,
                     const ForwardOptions& options = {});

// Mean squared error of the per-step outputs against the batch targets over
// the full grid, averaged over steps, channels, and non-diverged
// trajectories (diverged ones are excluded and counted by the caller).
Tensor interpolation_loss(const ForwardTrace& trace, const TimeSeriesBatch& batch);

// Classifier logits from the final post-update state (or the time mean when
// configured).
Tensor classification_logits(const SdeRnnModel& model, const ForwardTrace& trace);

Tensor classification_loss(const SdeRnnModel& model, const ForwardTrace& trace, const TimeSeriesBatch& batch);

// Fraction of non-diverged trajectories whose argmax matches the label;
// ties break toward the lowest class index.
double accuracy(const Tensor& logits, const std::vector<int>& labels, const std::vector<std::uint8_t>& diverged);

}  // namespace sdeattn
