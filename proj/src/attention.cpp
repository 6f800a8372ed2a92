#include "sdeattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdeattn {

AttentionKind attention_kind_from_string(const std::string& name) {
    if (name == "none") return AttentionKind::none;
    if (name == "static-channel") return AttentionKind::static_channel;
    if (name == "tvf-lstm") return AttentionKind::tvf_lstm;
    if (name == "tvf-transformer") return AttentionKind::tvf_transformer;
    if (name == "pyramidal") return AttentionKind::pyramidal;
    throw std::invalid_argument("unknown attention kind: " + name);
}

std::string to_string(AttentionKind kind) {
    switch (kind) {
        case AttentionKind::none: return "none";
        case AttentionKind::static_channel: return "static-channel";
        case AttentionKind::tvf_lstm: return "tvf-lstm";
        case AttentionKind::tvf_transformer: return "tvf-transformer";
        case AttentionKind::pyramidal: return "pyramidal";
    }
    throw std::logic_error("unreachable attention kind");
}

// ---------------------------------------------------------------------------

StaticChannelAttnParams make_static_channel_attn(std::int64_t latent, std::int64_t reduction, ParamInit& init) {
    if (reduction < 1) throw std::invalid_argument("reduction ratio must be >= 1");
    StaticChannelAttnParams p;
    p.mlp = make_mlp(latent, {std::max<std::int64_t>(1, latent / reduction)}, latent, init);
    p.latent = latent;
    return p;
}

void register_params(ParameterStore& store, const std::string& prefix, const StaticChannelAttnParams& p) {
    register_params(store, prefix + ".mlp", p.mlp);
}

GatedStates static_channel_gate(const StaticChannelAttnParams& p, const Tensor& states) {
    if (states.ndim() != 2 || states.dim(1) != p.latent)
        throw std::invalid_argument("static channel attention expects states[batch, " + std::to_string(p.latent) +
                                    "], got " + shape_to_string(states.shape()));
    if (states.dim(0) < 1) throw std::invalid_argument("static channel attention needs a non-empty batch");
    auto summary = reshape(mean_axis(states, 0), {1, p.latent});
    auto gate = reshape(sigmoid(mlp_forward(p.mlp, summary)), {p.latent});
    return GatedStates{mul(states, gate), gate};
}

// ---------------------------------------------------------------------------

TvfAttnParams make_tvf_attn(std::int64_t latent, bool use_lstm, int heads, int depth, std::int64_t max_len,
                            ParamInit& init) {
    TvfAttnParams p;
    p.use_lstm = use_lstm;
    p.latent = latent;
    if (use_lstm) {
        p.lstm = make_lstm_encoder(latent, latent, init);
    } else {
        if (depth < 1) throw std::invalid_argument("transformer encoder depth must be >= 1");
        for (int d = 0; d < depth; ++d) p.transformer.push_back(make_self_attention(latent, heads, init));
        p.positions = init.uniform_fan_in({max_len, latent}, latent);
    }
    p.head = make_linear(latent, latent, init);
    return p;
}

void register_params(ParameterStore& store, const std::string& prefix, const TvfAttnParams& p) {
    if (p.use_lstm) {
        register_params(store, prefix + ".lstm", p.lstm);
    } else {
        for (std::size_t d = 0; d < p.transformer.size(); ++d)
            register_params(store, prefix + ".block" + std::to_string(d), p.transformer[d]);
        store.add(prefix + ".positions", p.positions);
    }
    register_params(store, prefix + ".head", p.head);
}

TvfLstmCursor tvf_lstm_start(const TvfAttnParams& p, std::int64_t batch) {
    return TvfLstmCursor{lstm_initial_state(p.lstm, batch)};
}

Tensor tvf_lstm_gate(const TvfAttnParams& p, TvfLstmCursor& cursor, const Tensor& state) {
    cursor.state = lstm_cell_step(p.lstm, cursor.state, state);
    return sigmoid(linear_forward(p.head, cursor.state.h));
}

Tensor tvf_transformer_gate(const TvfAttnParams& p, const Tensor& prefix) {
    if (prefix.ndim() != 3) throw std::invalid_argument("tvf transformer expects prefix[t, b, latent]");
    const std::int64_t t = prefix.dim(0), b = prefix.dim(1);
    if (t < 1) throw std::invalid_argument("tvf gate needs a non-empty prefix");
    if (t > p.positions.dim(0))
        throw std::invalid_argument("prefix length " + std::to_string(t) + " exceeds positional table of " +
                                    std::to_string(p.positions.dim(0)));
    std::vector<std::int64_t> head_idx(static_cast<std::size_t>(t));
    for (std::int64_t i = 0; i < t; ++i) head_idx[static_cast<std::size_t>(i)] = i;
    auto pos = reshape(slice_time(p.positions, head_idx), {t, 1, p.latent});
    Tensor enc = add(prefix, pos);
    for (const auto& block : p.transformer) enc = self_attention(block, enc, /*causal=*/true);
    std::vector<std::int64_t> last = {t - 1};
    auto row = reshape(slice_time(enc, last), {b, p.latent});
    return sigmoid(linear_forward(p.head, row));
}

// ---------------------------------------------------------------------------

PyramidConfig make_pyramid(std::int64_t latent, int levels, int heads, ParamInit& init, int stride_base) {
    if (levels < 1) throw std::invalid_argument("pyramid needs at least one level");
    if (stride_base < 2) throw std::invalid_argument("pyramid stride base must be >= 2");
    PyramidConfig cfg;
    cfg.levels = levels;
    cfg.stride_base = stride_base;
    cfg.latent = latent;
    for (int l = 0; l < levels; ++l) cfg.level_attn.push_back(make_self_attention(latent, heads, init));
    cfg.fusion = make_linear(levels * latent, latent, init);
    return cfg;
}

void register_params(ParameterStore& store, const std::string& prefix, const PyramidConfig& p) {
    for (std::size_t l = 0; l < p.level_attn.size(); ++l)
        register_params(store, prefix + ".level" + std::to_string(l), p.level_attn[l]);
    register_params(store, prefix + ".fusion", p.fusion);
}

Tensor downsample(const Tensor& seq, std::int64_t stride) {
    if (stride < 1) throw std::invalid_argument("downsample stride must be >= 1");
    const std::int64_t t = seq.dim(0);
    std::vector<std::int64_t> keep;
    for (std::int64_t i = 0; i < t; i += stride) keep.push_back(i);
    return slice_time(seq, keep);
}

Tensor upsample_linear(const Tensor& seq, std::int64_t target_len) {
    if (target_len < 1) throw std::invalid_argument("upsample target length must be >= 1");
    const std::int64_t src_len = seq.dim(0);
    if (src_len < 1) throw std::invalid_argument("upsample needs a non-empty sequence");
    if (src_len == target_len) return seq;

    std::vector<std::int64_t> lo_idx(static_cast<std::size_t>(target_len));
    std::vector<std::int64_t> hi_idx(static_cast<std::size_t>(target_len));
    std::vector<double> hi_weight(static_cast<std::size_t>(target_len));
    for (std::int64_t i = 0; i < target_len; ++i) {
        const double pos = (target_len == 1 || src_len == 1)
                               ? 0.0
                               : static_cast<double>(i) * static_cast<double>(src_len - 1) /
                                     static_cast<double>(target_len - 1);
        const auto lo = static_cast<std::int64_t>(std::floor(pos));
        lo_idx[static_cast<std::size_t>(i)] = lo;
        hi_idx[static_cast<std::size_t>(i)] = std::min(lo + 1, src_len - 1);
        hi_weight[static_cast<std::size_t>(i)] = pos - static_cast<double>(lo);
    }
    auto low = slice_time(seq, lo_idx);
    auto high = slice_time(seq, hi_idx);
    Shape wshape(static_cast<std::size_t>(seq.ndim()), 1);
    wshape[0] = target_len;
    Tensor w(wshape, std::vector<double>(hi_weight));
    Tensor one_minus(wshape);
    for (std::int64_t i = 0; i < target_len; ++i)
        one_minus.mutable_data()[static_cast<std::size_t>(i)] = 1.0 - hi_weight[static_cast<std::size_t>(i)];
    return add(mul(low, one_minus), mul(high, w));
}

Tensor pyramidal_transform(const PyramidConfig& cfg, const Tensor& seq) {
    if (seq.ndim() != 3 || seq.dim(2) != cfg.latent)
        throw std::invalid_argument("pyramidal transform expects seq[t, b, " + std::to_string(cfg.latent) +
                                    "], got " + shape_to_string(seq.shape()));
    const std::int64_t t = seq.dim(0);
    if (t < 1) throw std::invalid_argument("pyramidal transform needs t >= 1");
    std::vector<Tensor> level_outputs;
    std::int64_t stride = 1;
    for (int l = 0; l < cfg.levels; ++l) {
        auto coarse = downsample(seq, stride);
        auto attended = self_attention(cfg.level_attn[static_cast<std::size_t>(l)], coarse, /*causal=*/true);
        level_outputs.push_back(upsample_linear(attended, t));
        stride *= cfg.stride_base;
    }
    auto stacked = concat(level_outputs, 2);  // [t, b, levels * latent]
    return linear_forward(cfg.fusion, stacked);
}

int default_pyramid_levels(std::int64_t t) {
    int levels = 0;
    for (std::int64_t span = 1; span <= t; span *= 2) ++levels;
    return std::clamp(levels - 1 > 0 ? levels - 1 : 1, 1, 4);
}

}  // namespace sdeattn
