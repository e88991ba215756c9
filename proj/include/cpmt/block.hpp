#pragma once

#include <vector>

#include "cpmt/attention.hpp"
#include "cpmt/nn.hpp"

namespace cpmt {

// Post-norm attention block: the query sequence attends to a key/value
// sequence, then a feed-forward sublayer; each sublayer has a residual
// connection followed by layer norm.
struct TransformerBlock {
    AttentionParams attn;
    LayerNormParams norm_attn;
    FeedForward ffn;
    LayerNormParams norm_ffn;

    static TransformerBlock init(std::size_t d, std::size_t num_heads, std::size_t ffn_hidden, Rng& rng);
    Tensor forward(const Tensor& query, const Tensor& kv, const AttentionMask* mask, const ForwardContext& ctx,
                   std::vector<double>* weights = nullptr) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

// Stack of blocks. The key/value sequence is the same source for every layer
// while the query stream is refined layer by layer.
struct BlockStack {
    std::vector<TransformerBlock> layers;

    static BlockStack init(std::size_t n_layers, std::size_t d, std::size_t num_heads, std::size_t ffn_hidden,
                           Rng& rng);
    // `weights`, when given, receives the head-averaged attention matrix of
    // every layer.
    Tensor forward(const Tensor& query, const Tensor& kv, const AttentionMask* mask, const ForwardContext& ctx,
                   std::vector<std::vector<double>>* weights = nullptr) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace cpmt
