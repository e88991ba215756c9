#pragma once

// Cross-person attention: queries come from the other person's fused
// representation, keys and values from the target person's, so the output is
// indexed by the other person's timeline.

#include <string>
#include <vector>

#include "cpmt/block.hpp"
#include "cpmt/crossmodal.hpp"

namespace cpmt {

enum class Direction { other_to_self, self_to_other, self };

enum class ConcatMode {
    child_coordinated,  // [other->self, self]
    symmetric,          // [other->self, self->other, self]
};

std::string to_string(ConcatMode mode);
ConcatMode parse_concat_mode(const std::string& name);
std::string to_string(Direction d);

struct ConcatPolicy {
    ConcatMode mode = ConcatMode::symmetric;
    std::vector<Direction> streams() const;
};

Tensor cpa(const Tensor& z_other, const Tensor& z_self, const BlockStack& stack, const AttentionMask* mask,
           const ForwardContext& ctx, std::vector<std::vector<double>>* weights = nullptr);

// Attention stack over one person; identical to cpa(z, z, stack).
Tensor self_stream(const Tensor& z, const BlockStack& stack, const AttentionMask* mask, const ForwardContext& ctx,
                   std::vector<std::vector<double>>* weights = nullptr);

struct CrossPersonTrace {
    std::vector<Direction> directions;
    std::vector<std::vector<std::vector<double>>> weights;  // per direction, per layer
};

struct CrossPersonEncoder {
    // Shared by both cross directions, so swapping the persons swaps the two
    // cross streams.
    BlockStack cross;
    BlockStack own;
    ConcatPolicy policy;

    static CrossPersonEncoder init(ConcatPolicy policy, std::size_t width, std::size_t num_heads, std::size_t layers,
                                   std::size_t ffn_hidden, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
    std::size_t n_streams() const { return policy.streams().size(); }

    // `self_rep` is the target person (e.g. the child under the
    // child-coordinated policy). Output: [T x n_streams * width].
    Tensor encode_pair(const FusedPersonRep& self_rep, const FusedPersonRep& other_rep, const AttentionMask* mask,
                       const ForwardContext& ctx, CrossPersonTrace* trace = nullptr) const;
};

}  // namespace cpmt
