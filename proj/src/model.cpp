#include "sdeattn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "sdeattn/rng.hpp"

namespace sdeattn {

SdeRnnModel build_model(const ModelConfig& config, std::int64_t typical_len) {
    if (config.latent < 1 || config.data_dim < 1) throw std::invalid_argument("model widths must be positive");
    SdeRnnModel m;
    m.config = config;
    ParamInit init(config.init_seed);
    const std::int64_t h = config.latent;

    m.dynamics = make_sde_dynamics(h, config.mlp_hidden, init);
    const std::int64_t enc_in = config.feed_mask ? 2 * config.data_dim : config.data_dim;
    m.input_encoder = make_linear(enc_in, h, init);
    m.gru = make_gru_cell(h, h, init);
    m.output_net = make_mlp(h, {config.output_hidden}, config.data_dim, init);
    if (config.classes > 0) m.classifier = make_linear(h, config.classes, init);

    // Attention draws its init seeds last so every variant shares the same
    // backbone initialization under one master seed.
    switch (config.attention) {
        case AttentionKind::none:
            break;
        case AttentionKind::static_channel:
            m.static_attn = make_static_channel_attn(h, 2, init);
            break;
        case AttentionKind::tvf_lstm:
            m.tvf = make_tvf_attn(h, /*use_lstm=*/true, config.heads, config.tvf_depth, config.max_len, init);
            break;
        case AttentionKind::tvf_transformer:
            m.tvf = make_tvf_attn(h, /*use_lstm=*/false, config.heads, config.tvf_depth, config.max_len, init);
            break;
        case AttentionKind::pyramidal: {
            const int levels =
                config.pyramid_levels > 0 ? config.pyramid_levels : default_pyramid_levels(typical_len);
            m.pyramid = make_pyramid(h, levels, config.heads, init);
            m.config.pyramid_levels = levels;
            break;
        }
    }

    register_params(m.params, "dynamics", m.dynamics);
    register_params(m.params, "input_encoder", m.input_encoder);
    register_params(m.params, "gru", m.gru);
    switch (config.attention) {
        case AttentionKind::none: break;
        case AttentionKind::static_channel: register_params(m.params, "attention", m.static_attn); break;
        case AttentionKind::tvf_lstm:
        case AttentionKind::tvf_transformer: register_params(m.params, "attention", m.tvf); break;
        case AttentionKind::pyramidal: register_params(m.params, "attention", m.pyramid); break;
    }
    register_params(m.params, "output_net", m.output_net);
    if (config.classes > 0) register_params(m.params, "classifier", m.classifier);
    return m;
}

BrownianPath make_batch_path(const SdeRnnModel& model, const TimeSeriesBatch& batch, std::uint64_t seed) {
    return sample_brownian(solver_grid(0.0, batch.timestamps, model.config.substeps), batch.series(),
                           model.config.latent, seed);
}

ForwardTrace forward(const SdeRnnModel& model, const TimeSeriesBatch& batch, const BrownianPath& path,
                     const ForwardOptions& options) {
    const std::int64_t t = batch.steps(), b = batch.series(), d = batch.dim();
    const std::int64_t h = model.config.latent;
    if (t < 1) throw std::invalid_argument("forward needs at least one observation");
    if (d != model.config.data_dim)
        throw std::invalid_argument("batch dimension " + std::to_string(d) + " does not match model data_dim " +
                                    std::to_string(model.config.data_dim));
    batch.validate();

    ForwardTrace trace;
    trace.diverged.assign(static_cast<std::size_t>(b), 0);

    Tensor state({b, h});  // post-update state, starts at zero
    TvfLstmCursor tvf_cursor;
    if (model.config.attention == AttentionKind::tvf_lstm) tvf_cursor = tvf_lstm_start(model.tvf, b);

    std::vector<Tensor> pre_steps, att_steps, post_steps, out_steps;
    pre_steps.reserve(static_cast<std::size_t>(t));
    att_steps.reserve(static_cast<std::size_t>(t));
    post_steps.reserve(static_cast<std::size_t>(t));
    out_steps.reserve(static_cast<std::size_t>(t));

    double prev_t = 0.0;
    for (std::int64_t i = 0; i < t; ++i) {
        const double ti = batch.timestamps[static_cast<std::size_t>(i)];
        Tensor pre = integrate(model.dynamics, state, prev_t, ti, path, &trace.diverged);

        Tensor attended;
        switch (model.config.attention) {
            case AttentionKind::none:
                attended = pre;
                break;
            case AttentionKind::static_channel:
                attended = options.force_unit_static_gate ? mul(pre, Tensor::full({h}, 1.0))
                                                          : static_channel_gate(model.static_attn, pre).gated;
                break;
            case AttentionKind::tvf_lstm:
                attended = mul(pre, tvf_lstm_gate(model.tvf, tvf_cursor, pre));
                break;
            case AttentionKind::tvf_transformer: {
                std::vector<Tensor> prefix = pre_steps;
                prefix.push_back(reshape(pre, {1, b, h}));
                attended = mul(pre, tvf_transformer_gate(model.tvf, concat(prefix, 0)));
                break;
            }
            case AttentionKind::pyramidal: {
                std::vector<Tensor> prefix = pre_steps;
                prefix.push_back(reshape(pre, {1, b, h}));
                auto transformed = pyramidal_transform(model.pyramid, concat(prefix, 0));
                std::vector<std::int64_t> last = {i};
                attended = reshape(slice_time(transformed, last), {b, h});
                break;
            }
        }

        std::vector<std::int64_t> row = {i};
        auto x_obs = reshape(slice_time(batch.values, row), {b, d});
        Tensor enc_in = x_obs;
        if (model.config.feed_mask) {
            auto m_obs = reshape(slice_time(batch.mask, row), {b, d});
            std::vector<Tensor> parts = {x_obs, m_obs};
            enc_in = concat(parts, 1);
        }
        state = gru_step(model.gru, attended, linear_forward(model.input_encoder, enc_in));

        pre_steps.push_back(reshape(pre, {1, b, h}));
        att_steps.push_back(reshape(attended, {1, b, h}));
        post_steps.push_back(reshape(state, {1, b, h}));
        out_steps.push_back(reshape(mlp_forward(model.output_net, pre), {1, b, d}));
        prev_t = ti;
    }

    trace.pre_rnn = concat(pre_steps, 0);
    trace.attended = concat(att_steps, 0);
    trace.post_rnn = concat(post_steps, 0);
    trace.outputs = concat(out_steps, 0);
    trace.final_state = state;
    return trace;
}

namespace {

Tensor trajectory_weights(const std::vector<std::uint8_t>& diverged, std::int64_t b) {
    Tensor w({1, b, 1});
    auto wd = w.mutable_data();
    for (std::int64_t j = 0; j < b; ++j) wd[static_cast<std::size_t>(j)] = diverged[static_cast<std::size_t>(j)] ? 0.0 : 1.0;
    return w;
}

std::int64_t valid_count(const std::vector<std::uint8_t>& diverged) {
    std::int64_t n = 0;
    for (auto f : diverged) n += f ? 0 : 1;
    return n;
}

}  // namespace

Tensor interpolation_loss(const ForwardTrace& trace, const TimeSeriesBatch& batch) {
    if (!batch.has_targets())
        throw std::invalid_argument("interpolation loss needs full-grid targets on the batch");
    const std::int64_t t = trace.outputs.dim(0), b = trace.outputs.dim(1), d = trace.outputs.dim(2);
    const std::int64_t valid = valid_count(trace.diverged);
    if (valid == 0) throw std::runtime_error("no valid trajectories left for the interpolation loss");
    auto diff = sub(trace.outputs, batch.targets);
    auto weighted = mul(mul(diff, diff), trajectory_weights(trace.diverged, b));
    return scale(sum_all(weighted), 1.0 / static_cast<double>(t * d * valid));
}

Tensor classification_logits(const SdeRnnModel& model, const ForwardTrace& trace) {
    if (model.config.classes <= 0) throw std::invalid_argument("model was built without a classifier head");
    if (model.config.mean_pool_classifier)
        return linear_forward(model.classifier, mean_axis(trace.post_rnn, 0));
    return linear_forward(model.classifier, trace.final_state);
}

Tensor classification_loss(const SdeRnnModel& model, const ForwardTrace& trace, const TimeSeriesBatch& batch) {
    if (!batch.has_labels()) throw std::invalid_argument("classification loss needs labels on the batch");
    if (valid_count(trace.diverged) == 0)
        throw std::runtime_error("no valid trajectories left for the classification loss");
    std::vector<double> weights(trace.diverged.size());
    for (std::size_t j = 0; j < weights.size(); ++j) weights[j] = trace.diverged[j] ? 0.0 : 1.0;
    return softmax_cross_entropy(classification_logits(model, trace), batch.labels, weights);
}

double accuracy(const Tensor& logits, const std::vector<int>& labels, const std::vector<std::uint8_t>& diverged) {
    const std::int64_t b = logits.dim(0), c = logits.dim(1);
    std::int64_t correct = 0, valid = 0;
    for (std::int64_t j = 0; j < b; ++j) {
        if (!diverged.empty() && diverged[static_cast<std::size_t>(j)]) continue;
        std::int64_t best = 0;
        for (std::int64_t k = 1; k < c; ++k)
            if (logits(j, k) > logits(j, best)) best = k;
        correct += best == labels[static_cast<std::size_t>(j)] ? 1 : 0;
        ++valid;
    }
    if (valid == 0) throw std::runtime_error("no valid trajectories to score");
    return static_cast<double>(correct) / static_cast<double>(valid);
}

}  // namespace sdeattn
