#include "cpmt/attention.hpp"

#include <cmath>

#include "cpmt/errors.hpp"
#include "cpmt/ops.hpp"

namespace cpmt {

AttentionParams AttentionParams::init(std::size_t d_in, std::size_t d_model, std::size_t num_heads, Rng& rng) {
    if (num_heads == 0 || d_model % num_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    AttentionParams p;
    p.w_q = xavier(d_in, d_model, rng);
    p.w_k = xavier(d_in, d_model, rng);
    p.w_v = xavier(d_in, d_model, rng);
    p.w_o = xavier(d_model, d_model, rng);
    p.num_heads = num_heads;
    return p;
}

void AttentionParams::validate() const {
    if (!w_q.defined() || !w_k.defined() || !w_v.defined() || !w_o.defined())
        throw ConfigError("attention params are missing a projection");
    if (w_q.rank() != 2 || w_k.shape() != w_q.shape() || w_v.shape() != w_q.shape())
        throw ConfigError("attention projections disagree: W_Q " + shape_str(w_q.shape()) + ", W_K " +
                          shape_str(w_k.shape()) + ", W_V " + shape_str(w_v.shape()));
    if (w_o.shape() != Shape{d_model(), d_model()})
        throw ConfigError("W_O must be " + shape_str({d_model(), d_model()}) + ", got " + shape_str(w_o.shape()));
    if (num_heads == 0 || d_model() % num_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model()) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".w_q", w_q);
    out.emplace_back(prefix + ".w_k", w_k);
    out.emplace_back(prefix + ".w_v", w_v);
    out.emplace_back(prefix + ".w_o", w_o);
}

AttentionMask::AttentionMask(std::size_t n_query, std::size_t n_key, bool allowed)
    : n_query_(n_query), n_key_(n_key), allowed_(n_query * n_key, allowed ? 1 : 0) {}

AttentionMask AttentionMask::block_diagonal(std::size_t n, const std::vector<std::size_t>& boundaries) {
    AttentionMask mask(n, n, false);
    for (std::size_t s = 0; s < boundaries.size(); ++s) {
        const std::size_t lo = boundaries[s];
        const std::size_t hi = s + 1 < boundaries.size() ? boundaries[s + 1] : n;
        for (std::size_t i = lo; i < hi; ++i)
            for (std::size_t j = lo; j < hi; ++j) mask.set(i, j, true);
    }
    return mask;
}

void AttentionMask::validate() const {
    for (std::size_t i = 0; i < n_query_; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < n_key_ && !any; ++j) any = allowed(i, j);
        if (!any) throw MaskError("attention mask leaves query row " + std::to_string(i) + " with no allowed key");
    }
}

AttentionOutput scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttentionMask* mask, double temperature) {
    if (!(temperature > 0.0))
        throw ParameterError("attention temperature must be > 0, got " + std::to_string(temperature));
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() || k.rows() != v.rows())
        throw DimensionError("attention shape mismatch: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                             ", V " + shape_str(v.shape()));
    const std::size_t nq = q.rows(), nk = k.rows();
    const double factor = 1.0 / (std::sqrt(static_cast<double>(q.cols())) * temperature);
    Tensor scores = scale(matmul_nt(q, k), factor);
    if (mask != nullptr) {
        if (mask->n_query() != nq || mask->n_key() != nk)
            throw DimensionError("mask is " + shape_str({mask->n_query(), mask->n_key()}) + " but scores are " +
                                 shape_str({nq, nk}));
        mask->validate();
        std::vector<double> offset(nq * nk, 0.0);
        bool any_masked = false;
        for (std::size_t i = 0; i < nq; ++i)
            for (std::size_t j = 0; j < nk; ++j)
                if (!mask->allowed(i, j)) {
                    offset[i * nk + j] = kMaskedScore;
                    any_masked = true;
                }
        if (any_masked) scores = add(scores, Tensor::from({nq, nk}, std::move(offset)));
    }
    Tensor weights = softmax(scores, 1);
    return {matmul(weights, v), weights};
}

MultiHeadOutput multi_head_attention_detailed(const AttentionParams& params, const Tensor& x_q,
                                              const Tensor& x_kv, const AttentionMask* mask,
                                              double temperature) {
    if (x_q.rank() != 2 || x_kv.rank() != 2 || x_q.cols() != params.d_in() || x_kv.cols() != params.d_in())
        throw DimensionError("multi_head_attention expects inputs with " + std::to_string(params.d_in()) +
                             " features, got " + shape_str(x_q.shape()) + " and " + shape_str(x_kv.shape()));
    const Tensor q = matmul(x_q, params.w_q);
    const Tensor k = matmul(x_kv, params.w_k);
    const Tensor v = matmul(x_kv, params.w_v);
    MultiHeadOutput result;
    if (params.num_heads == 1) {
        auto att = scaled_dot_attention(q, k, v, mask, temperature);
        result.head_weights.push_back(att.weights);
        result.out = matmul(att.out, params.w_o);
        return result;
    }
    const std::size_t hd = params.head_dim();
    std::vector<Tensor> heads;
    heads.reserve(params.num_heads);
    for (std::size_t h = 0; h < params.num_heads; ++h) {
        auto att = scaled_dot_attention(slice_cols(q, h * hd, hd), slice_cols(k, h * hd, hd),
                                        slice_cols(v, h * hd, hd), mask, temperature);
        heads.push_back(att.out);
        result.head_weights.push_back(att.weights);
    }
    result.out = matmul(concat_cols(heads), params.w_o);
    return result;
}

Tensor multi_head_attention(const AttentionParams& params, const Tensor& x_q, const Tensor& x_kv,
                            const AttentionMask* mask, double temperature) {
    return multi_head_attention_detailed(params, x_q, x_kv, mask, temperature).out;
}

std::vector<double> mean_head_weights(const MultiHeadOutput& out) {
    std::vector<double> mean(out.head_weights.front().numel(), 0.0);
    for (const auto& w : out.head_weights) {
        auto v = w.data();
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
    }
    for (auto& m : mean) m /= static_cast<double>(out.head_weights.size());
    return mean;
}

}  // namespace cpmt
