#pragma once

// Shared trainable building blocks: named parameter registry, linear layers,
// layer norm and the position-wise feed-forward sublayer.

#include <string>
#include <utility>
#include <vector>

#include "cpmt/rng.hpp"
#include "cpmt/tensor.hpp"

namespace cpmt {

using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Per-call state for a forward pass. Dropout only fires when `training` is set
// and an Rng is supplied.
struct ForwardContext {
    bool training = false;
    double dropout = 0.0;
    Rng* rng = nullptr;
};

Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx);

// Xavier-uniform [fan_in x fan_out] weight.
Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct Linear {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out], undefined when the layer has no bias

    static Linear init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
    // Accepts [n x in] or a single row [in].
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
    double eps = 1e-5;

    static LayerNormParams init(std::size_t d);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct FeedForward {
    Linear in;
    Linear out;

    static FeedForward init(std::size_t d, std::size_t hidden, Rng& rng);
    Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace cpmt
