#include "cpmt/crossperson.hpp"

#include "cpmt/errors.hpp"
#include "cpmt/ops.hpp"

namespace cpmt {

std::string to_string(ConcatMode mode) {
    return mode == ConcatMode::child_coordinated ? "child_coordinated" : "symmetric";
}

ConcatMode parse_concat_mode(const std::string& name) {
    if (name == "child_coordinated") return ConcatMode::child_coordinated;
    if (name == "symmetric") return ConcatMode::symmetric;
    throw ConfigError("unknown concat policy '" + name + "' (expected child_coordinated or symmetric)");
}

std::string to_string(Direction d) {
    switch (d) {
        case Direction::other_to_self: return "other_to_self";
        case Direction::self_to_other: return "self_to_other";
        case Direction::self: return "self";
    }
    return "unknown";
}

std::vector<Direction> ConcatPolicy::streams() const {
    switch (mode) {
        case ConcatMode::child_coordinated: return {Direction::other_to_self, Direction::self};
        case ConcatMode::symmetric: return {Direction::other_to_self, Direction::self_to_other, Direction::self};
    }
    throw ConfigError("invalid concat policy");
}

Tensor cpa(const Tensor& z_other, const Tensor& z_self, const BlockStack& stack, const AttentionMask* mask,
           const ForwardContext& ctx, std::vector<std::vector<double>>* weights) {
    if (z_other.shape() != z_self.shape())
        throw DimensionError("cpa needs equal shapes, got other " + shape_str(z_other.shape()) + " and self " +
                             shape_str(z_self.shape()));
    return stack.forward(z_other, z_self, mask, ctx, weights);
}

Tensor self_stream(const Tensor& z, const BlockStack& stack, const AttentionMask* mask, const ForwardContext& ctx,
                   std::vector<std::vector<double>>* weights) {
    return stack.forward(z, z, mask, ctx, weights);
}

CrossPersonEncoder CrossPersonEncoder::init(ConcatPolicy policy, std::size_t width, std::size_t num_heads,
                                            std::size_t layers, std::size_t ffn_hidden, Rng& rng) {
    CrossPersonEncoder enc;
    enc.policy = policy;
    enc.cross = BlockStack::init(layers, width, num_heads, ffn_hidden, rng);
    enc.own = BlockStack::init(layers, width, num_heads, ffn_hidden, rng);
    return enc;
}

void CrossPersonEncoder::collect(const std::string& prefix, ParamList& out) const {
    cross.collect(prefix + ".cross", out);
    own.collect(prefix + ".self", out);
}

Tensor CrossPersonEncoder::encode_pair(const FusedPersonRep& self_rep, const FusedPersonRep& other_rep,
                                       const AttentionMask* mask, const ForwardContext& ctx,
                                       CrossPersonTrace* trace) const {
    std::vector<Tensor> parts;
    for (Direction d : policy.streams()) {
        std::vector<std::vector<double>> w;
        auto* wp = trace ? &w : nullptr;
        switch (d) {
            case Direction::other_to_self: parts.push_back(cpa(other_rep.z, self_rep.z, cross, mask, ctx, wp)); break;
            case Direction::self_to_other: parts.push_back(cpa(self_rep.z, other_rep.z, cross, mask, ctx, wp)); break;
            case Direction::self: parts.push_back(self_stream(self_rep.z, own, mask, ctx, wp)); break;
        }
        if (trace) {
            trace->directions.push_back(d);
            trace->weights.push_back(std::move(w));
        }
    }
    return concat_cols(parts);
}

}  // namespace cpmt
