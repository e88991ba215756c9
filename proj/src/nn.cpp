#include "cpmt/nn.hpp"

#include <cmath>

#include "cpmt/ops.hpp"

namespace cpmt {

Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx) {
    if (!ctx.training || ctx.dropout <= 0.0 || ctx.rng == nullptr) return x;
    return dropout(x, ctx.dropout, *ctx.rng);
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = rng.uniform(-limit, limit);
    return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
    Linear l;
    l.weight = xavier(in, out, rng);
    if (with_bias) l.bias = Tensor::zeros({out}, true);
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.rank() == 1) {
        Tensor y = forward(reshape(x, {1, x.dim(0)}));
        return reshape(y, {y.cols()});
    }
    Tensor y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

LayerNormParams LayerNormParams::init(std::size_t d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true), 1e-5};
}

Tensor LayerNormParams::forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

FeedForward FeedForward::init(std::size_t d, std::size_t hidden, Rng& rng) {
    return {Linear::init(d, hidden, rng), Linear::init(hidden, d, rng)};
}

Tensor FeedForward::forward(const Tensor& x, const ForwardContext& ctx) const {
    return out.forward(maybe_dropout(gelu(in.forward(x)), ctx));
}

void FeedForward::collect(const std::string& prefix, ParamList& out_list) const {
    in.collect(prefix + ".in", out_list);
    out.collect(prefix + ".out", out_list);
}

}  // namespace cpmt
