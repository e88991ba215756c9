#include "cpmt/block.hpp"

#include "cpmt/errors.hpp"
#include "cpmt/ops.hpp"

namespace cpmt {

TransformerBlock TransformerBlock::init(std::size_t d, std::size_t num_heads, std::size_t ffn_hidden, Rng& rng) {
    TransformerBlock b;
    b.attn = AttentionParams::init(d, d, num_heads, rng);
    b.norm_attn = LayerNormParams::init(d);
    b.ffn = FeedForward::init(d, ffn_hidden, rng);
    b.norm_ffn = LayerNormParams::init(d);
    return b;
}

Tensor TransformerBlock::forward(const Tensor& query, const Tensor& kv, const AttentionMask* mask,
                                 const ForwardContext& ctx, std::vector<double>* weights) const {
    auto att = multi_head_attention_detailed(attn, query, kv, mask);
    if (weights != nullptr) *weights = mean_head_weights(att);
    Tensor h = norm_attn.forward(add(query, maybe_dropout(att.out, ctx)));
    return norm_ffn.forward(add(h, maybe_dropout(ffn.forward(h, ctx), ctx)));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const {
    attn.collect(prefix + ".attn", out);
    norm_attn.collect(prefix + ".norm_attn", out);
    ffn.collect(prefix + ".ffn", out);
    norm_ffn.collect(prefix + ".norm_ffn", out);
}

BlockStack BlockStack::init(std::size_t n_layers, std::size_t d, std::size_t num_heads, std::size_t ffn_hidden,
                            Rng& rng) {
    BlockStack s;
    for (std::size_t i = 0; i < n_layers; ++i) s.layers.push_back(TransformerBlock::init(d, num_heads, ffn_hidden, rng));
    return s;
}

Tensor BlockStack::forward(const Tensor& query, const Tensor& kv, const AttentionMask* mask,
                           const ForwardContext& ctx, std::vector<std::vector<double>>* weights) const {
    if (query.shape() != kv.shape())
        throw DimensionError("block stack expects equal query/key shapes, got " + shape_str(query.shape()) + " and " +
                             shape_str(kv.shape()));
    Tensor x = query;
    for (const auto& layer : layers) {
        std::vector<double> w;
        x = layer.forward(x, kv, mask, ctx, weights ? &w : nullptr);
        if (weights) weights->push_back(std::move(w));
    }
    return x;
}

void BlockStack::collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + "." + std::to_string(i), out);
}

}  // namespace cpmt
