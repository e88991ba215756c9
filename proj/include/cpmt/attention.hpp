#pragma once

// Scaled dot-product and multi-head attention with boolean masks.

#include <cstdint>
#include <vector>

#include "cpmt/nn.hpp"
#include "cpmt/tensor.hpp"

namespace cpmt {

struct AttentionParams {
    Tensor w_q;  // [d_in x d_model]
    Tensor w_k;  // [d_in x d_model]
    Tensor w_v;  // [d_in x d_model]
    Tensor w_o;  // [d_model x d_model]
    std::size_t num_heads = 1;

    static AttentionParams init(std::size_t d_in, std::size_t d_model, std::size_t num_heads, Rng& rng);

    std::size_t d_in() const { return w_q.dim(0); }
    std::size_t d_model() const { return w_q.dim(1); }
    std::size_t head_dim() const { return d_model() / num_heads; }
    // Throws ConfigError on inconsistent weight shapes or head count.
    void validate() const;
    void collect(const std::string& prefix, ParamList& out) const;
};

// allowed(i, j): query i may attend key j. Every query row needs at least one
// allowed key.
class AttentionMask {
public:
    AttentionMask(std::size_t n_query, std::size_t n_key, bool allowed = true);

    // Queries and keys share the same timeline split at `boundaries` (segment
    // start offsets, first is 0); attention stays within a segment.
    static AttentionMask block_diagonal(std::size_t n, const std::vector<std::size_t>& boundaries);

    std::size_t n_query() const { return n_query_; }
    std::size_t n_key() const { return n_key_; }
    bool allowed(std::size_t i, std::size_t j) const { return allowed_[i * n_key_ + j] != 0; }
    void set(std::size_t i, std::size_t j, bool allowed) { allowed_[i * n_key_ + j] = allowed ? 1 : 0; }
    void validate() const;  // MaskError on a fully masked row

private:
    std::size_t n_query_;
    std::size_t n_key_;
    std::vector<std::uint8_t> allowed_;
};

// Additive score offset for masked keys. exp(-1e9) underflows to exactly 0.
inline constexpr double kMaskedScore = -1e9;

struct AttentionOutput {
    Tensor out;      // [n_q x d_v]
    Tensor weights;  // [n_q x n_k]
};

// softmax(Q K^T / sqrt(d) / temperature + mask) V
AttentionOutput scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttentionMask* mask = nullptr, double temperature = 1.0);

struct MultiHeadOutput {
    Tensor out;                         // [n_q x d_model]
    std::vector<Tensor> head_weights;   // one [n_q x n_k] per head
};

MultiHeadOutput multi_head_attention_detailed(const AttentionParams& params, const Tensor& x_q,
                                              const Tensor& x_kv, const AttentionMask* mask = nullptr,
                                              double temperature = 1.0);

Tensor multi_head_attention(const AttentionParams& params, const Tensor& x_q, const Tensor& x_kv,
                            const AttentionMask* mask = nullptr, double temperature = 1.0);

// Head-averaged attention weights, row-major [n_q x n_k].
std::vector<double> mean_head_weights(const MultiHeadOutput& out);

}  // namespace cpmt
