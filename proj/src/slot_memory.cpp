#include "cpmt/slot_memory.hpp"

#include <cmath>

#include "cpmt/errors.hpp"
#include "cpmt/ops.hpp"

namespace cpmt {

namespace {

constexpr double kMinNorm = 1e-8;

double row_norm(std::span<const double> v, std::size_t row, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += v[row * d + j] * v[row * d + j];
    return std::sqrt(s);
}

void check_bias(const Tensor& v_bias) {
    if (!v_bias.defined() || v_bias.rank() != 2)
        throw ConfigError("v_bias must be a [k x d] tensor");
    for (std::size_t i = 0; i < v_bias.rows(); ++i)
        if (!(row_norm(v_bias.data(), i, v_bias.cols()) > kMinNorm))
            throw ConfigError("v_bias row " + std::to_string(i) + " has norm <= 1e-8");
}

}  // namespace

Tensor terminal_slots(const Tensor& v_bias) {
    check_bias(v_bias);
    return row_normalize(v_bias);
}

MemoryState initial_memory(const Tensor& v_bias, double tau) {
    return memory_from_slots(terminal_slots(v_bias), v_bias, tau);
}

MemoryState memory_from_slots(const Tensor& slots, const Tensor& v_bias, double tau) {
    if (!(tau > 0.0)) throw ParameterError("memory temperature tau must be > 0, got " + std::to_string(tau));
    if (!slots.defined() || slots.rank() != 2 || slots.rows() == 0)
        throw ConfigError("memory needs at least one slot");
    if (slots.shape() != v_bias.shape())
        throw DimensionError("memory slots " + shape_str(slots.shape()) + " do not match v_bias " +
                             shape_str(v_bias.shape()));
    return {slots, v_bias, tau, 0};
}

Tensor bmn(const Tensor& slots, const Tensor& v_bias) {
    if (slots.rank() == 1) {
        const std::size_t d = slots.dim(0);
        if (v_bias.shape() != Shape{d})
            throw DimensionError("bmn: slot " + shape_str(slots.shape()) + " vs bias " + shape_str(v_bias.shape()));
        return reshape(bmn(reshape(slots, {1, d}), reshape(v_bias, {1, d})), {d});
    }
    if (slots.shape() != v_bias.shape())
        throw DimensionError("bmn: slots " + shape_str(slots.shape()) + " vs bias " + shape_str(v_bias.shape()));
    Tensor shifted = add(slots, v_bias);
    const std::size_t k = shifted.rows(), d = shifted.cols();
    std::vector<double> rescue(k * d, 0.0);
    bool any = false;
    for (std::size_t i = 0; i < k; ++i) {
        if (row_norm(shifted.data(), i, d) > kMinNorm) continue;
        const double bn = row_norm(v_bias.data(), i, d);
        if (!(bn > 0.0)) throw NumericError("bmn: slot " + std::to_string(i) + " and its bias both vanish");
        for (std::size_t j = 0; j < d; ++j) rescue[i * d + j] = kMinNorm * v_bias.data()[i * d + j] / bn;
        any = true;
    }
    if (any) shifted = add(shifted, Tensor::from({k, d}, std::move(rescue)));
    return row_normalize(shifted);
}

Tensor memory_read(const Tensor& x, const Tensor& slots, const AttentionParams& params, std::vector<double>* weights) {
    if (!slots.defined() || slots.rank() != 2 || slots.rows() == 0)
        throw ConfigError("memory_read needs at least one memory slot");
    if (x.rank() != 2 || x.cols() != slots.cols())
        throw DimensionError("memory_read: tokens " + shape_str(x.shape()) + " vs slots " + shape_str(slots.shape()));
    auto out = multi_head_attention_detailed(params, x, slots);
    if (weights) *weights = mean_head_weights(out);
    return out.out;
}

Tensor memory_write(const MemoryState& state, const Tensor& tokens, const AttentionParams& params, WriteTrace* trace) {
    if (!(state.tau > 0.0)) throw ParameterError("memory temperature tau must be > 0, got " + std::to_string(state.tau));
    const std::size_t k = state.k();
    const std::size_t n = tokens.defined() ? tokens.rows() : 0;
    if (n > 0 && tokens.cols() != state.d())
        throw DimensionError("memory_write: tokens " + shape_str(tokens.shape()) + " vs slots " +
                             shape_str(state.slots.shape()));
    const Tensor bank = n > 0 ? concat_rows({state.slots, tokens}) : state.slots;
    AttentionMask mask(k, k + n, false);
    for (std::size_t i = 0; i < k; ++i) {
        mask.set(i, i, true);
        for (std::size_t j = 0; j < n; ++j) mask.set(i, k + j, true);
    }
    auto att = multi_head_attention_detailed(params, state.slots, bank, &mask, state.tau);
    if (trace) {
        trace->k = k;
        trace->n_tokens = n;
        trace->raw = mean_head_weights(att);
        trace->weights.assign(k * (1 + n), 0.0);
        for (std::size_t i = 0; i < k; ++i) {
            trace->weights[i * (1 + n)] = trace->raw[i * (k + n) + i];
            for (std::size_t j = 0; j < n; ++j) trace->weights[i * (1 + n) + 1 + j] = trace->raw[i * (k + n) + k + j];
        }
    }
    return bmn(att.out, state.v_bias);
}

void MemEncoderLayer::collect(const std::string& prefix, ParamList& out) const {
    self_attn.collect(prefix + ".self_attn", out);
    norm_self.collect(prefix + ".norm_self", out);
    read.collect(prefix + ".read", out);
    norm_read.collect(prefix + ".norm_read", out);
    ffn.collect(prefix + ".ffn", out);
    norm_ffn.collect(prefix + ".norm_ffn", out);
}

MemoryEncoder MemoryEncoder::init(std::size_t n_layers, std::size_t d, std::size_t num_heads, std::size_t ffn_hidden,
                                  Rng& rng) {
    if (n_layers == 0) throw ConfigError("memory encoder needs at least one layer");
    MemoryEncoder enc;
    for (std::size_t i = 0; i < n_layers; ++i) {
        MemEncoderLayer layer;
        layer.self_attn = AttentionParams::init(d, d, num_heads, rng);
        layer.norm_self = LayerNormParams::init(d);
        layer.read = AttentionParams::init(d, d, num_heads, rng);
        layer.norm_read = LayerNormParams::init(d);
        layer.ffn = FeedForward::init(d, ffn_hidden, rng);
        layer.norm_ffn = LayerNormParams::init(d);
        layer.is_last = i + 1 == n_layers;
        enc.layers.push_back(std::move(layer));
    }
    enc.write = AttentionParams::init(d, d, num_heads, rng);
    return enc;
}

void MemoryEncoder::validate() const {
    std::size_t last = 0;
    for (const auto& l : layers) last += l.is_last ? 1 : 0;
    if (last != 1) throw ConfigError("memory encoder needs exactly one writing layer, found " + std::to_string(last));
}

void MemoryEncoder::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    write.collect(prefix + ".write", out);
}

SegmentRun run_segments(const std::vector<Tensor>& segments, const MemoryState& mem0, const MemoryEncoder& encoder,
                        const ForwardContext& ctx, SegmentOptions options, MemoryTrace* trace) {
    if (segments.empty()) throw DataError("run_segments needs at least one segment");
    encoder.validate();
    SegmentRun run;
    run.final_state = mem0;
    MemoryState& mem = run.final_state;
    for (const Tensor& segment : segments) {
        Tensor x = segment;
        for (const auto& layer : encoder.layers) {
            x = layer.norm_self.forward(add(x, maybe_dropout(multi_head_attention(layer.self_attn, x, x), ctx)));
            if (options.read)
                x = layer.norm_read.forward(add(x, maybe_dropout(memory_read(x, mem.slots, layer.read), ctx)));
            x = layer.norm_ffn.forward(add(x, maybe_dropout(layer.ffn.forward(x, ctx), ctx)));
            if (layer.is_last && options.write) {
                WriteTrace wt;
                mem.slots = memory_write(mem, x, encoder.write, trace ? &wt : nullptr);
                ++mem.step;
                if (trace) trace->writes.push_back(std::move(wt));
            }
        }
        run.outputs.push_back(x);
    }
    return run;
}

}  // namespace cpmt
