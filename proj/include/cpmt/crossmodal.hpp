#pragma once

// Per-person fusion of nonverbal modality streams into a [T x 2d]
// representation via a pair of directional cross-modal transformers.

#include <map>
#include <string>
#include <vector>

#include "cpmt/block.hpp"

namespace cpmt {

enum class Modality { audio, video, pose, text };

std::string to_string(Modality m);
Modality parse_modality(const std::string& name);  // ConfigError on unknown names
// Feature widths of the upstream extractors (audio and pose 128, video 512).
std::size_t conventional_dim(Modality m);

struct ModalityStream {
    Modality modality = Modality::video;
    Tensor features;  // [T_m x d_m]
    double frame_rate = 1.0;
};

struct FusedPersonRep {
    Tensor z;  // [T x 2 d_model]
    std::string person_id;
};

// floor(i * t_source / t_target) for i in [0, t_target)
std::vector<std::size_t> nearest_indices(std::size_t t_source, std::size_t t_target);

// Nearest-index resampling to t_target steps, then a bias-free linear map
// to d_model features.
Tensor temporal_project(const ModalityStream& stream, const Tensor& projection, std::size_t t_target);

// `tgt` queries attend to `src`; layers = stack.layers.size(). An empty stack
// returns tgt unchanged.
Tensor crossmodal_block(const Tensor& src, const Tensor& tgt, const BlockStack& stack,
                        const AttentionMask* mask, const ForwardContext& ctx,
                        std::vector<std::vector<double>>* weights = nullptr);

struct CrossModalEncoder {
    // Either two distinct nonverbal modalities (first, second) or one.
    std::vector<Modality> modalities;
    std::map<Modality, Tensor> projections;  // [d_m x d_model] per modality
    BlockStack to_second;  // first -> second: queries from the second modality
    BlockStack to_first;   // second -> first; unused in single-modality mode
    std::size_t d_model = 0;

    static CrossModalEncoder init(const std::vector<Modality>& modalities,
                                  const std::map<Modality, std::size_t>& input_dims, std::size_t d_model,
                                  std::size_t num_heads, std::size_t layers, std::size_t ffn_hidden, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

// Checks a fusion modality list: one or two distinct nonverbal modalities.
void validate_fusion_modalities(const std::vector<Modality>& modalities);

struct FusionTrace {
    std::vector<std::vector<double>> to_second;  // per layer, [T x T]
    std::vector<std::vector<double>> to_first;
};

// Z = [first->second ; second->first] for two modalities, or [S ; S] with
// S = to_second(self-attention over the single modality).
FusedPersonRep fuse_person(const std::vector<ModalityStream>& streams, const std::string& person_id,
                           const CrossModalEncoder& encoder, std::size_t t_target, const AttentionMask* mask,
                           const ForwardContext& ctx, FusionTrace* trace = nullptr);

}  // namespace cpmt
