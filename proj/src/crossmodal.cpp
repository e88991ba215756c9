#include "cpmt/crossmodal.hpp"

#include <algorithm>

#include "cpmt/errors.hpp"
#include "cpmt/ops.hpp"

namespace cpmt {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::audio: return "audio";
        case Modality::video: return "video";
        case Modality::pose: return "pose";
        case Modality::text: return "text";
    }
    return "unknown";
}

Modality parse_modality(const std::string& name) {
    if (name == "audio") return Modality::audio;
    if (name == "video") return Modality::video;
    if (name == "pose") return Modality::pose;
    if (name == "text") return Modality::text;
    throw ConfigError("unknown modality '" + name + "' (expected audio, video, pose or text)");
}

std::size_t conventional_dim(Modality m) {
    switch (m) {
        case Modality::audio: return 128;
        case Modality::video: return 512;
        case Modality::pose: return 128;
        case Modality::text: return 0;
    }
    return 0;
}

std::vector<std::size_t> nearest_indices(std::size_t t_source, std::size_t t_target) {
    std::vector<std::size_t> idx(t_target);
    for (std::size_t i = 0; i < t_target; ++i) idx[i] = i * t_source / t_target;
    return idx;
}

Tensor temporal_project(const ModalityStream& stream, const Tensor& projection, std::size_t t_target) {
    if (!stream.features.defined())
        throw DataError(to_string(stream.modality) + " stream is empty");
    if (t_target == 0) throw ParameterError("temporal_project: T_target must be >= 1");
    const Tensor& x = stream.features;
    if (x.rank() != 2 || x.cols() != projection.dim(0))
        throw DimensionError(to_string(stream.modality) + " features " + shape_str(x.shape()) +
                             " do not match projection " + shape_str(projection.shape()));
    const Tensor resampled = x.rows() == t_target ? x : gather_rows(x, nearest_indices(x.rows(), t_target));
    return matmul(resampled, projection);
}

Tensor crossmodal_block(const Tensor& src, const Tensor& tgt, const BlockStack& stack, const AttentionMask* mask,
                        const ForwardContext& ctx, std::vector<std::vector<double>>* weights) {
    if (src.shape() != tgt.shape())
        throw DimensionError("crossmodal_block needs equal shapes, got src " + shape_str(src.shape()) + " and tgt " +
                             shape_str(tgt.shape()));
    return stack.forward(tgt, src, mask, ctx, weights);
}

void validate_fusion_modalities(const std::vector<Modality>& modalities) {
    if (modalities.empty() || modalities.size() > 2)
        throw ConfigError("fusion needs one or two nonverbal modalities, got " + std::to_string(modalities.size()));
    for (auto m : modalities)
        if (m == Modality::text)
            throw ConfigError("text cannot be fused with nonverbal streams; it enters through verbal memory");
    if (modalities.size() == 2 && modalities[0] == modalities[1])
        throw ConfigError("fusion modalities must be distinct, got " + to_string(modalities[0]) + " twice");
}

CrossModalEncoder CrossModalEncoder::init(const std::vector<Modality>& modalities,
                                          const std::map<Modality, std::size_t>& input_dims, std::size_t d_model,
                                          std::size_t num_heads, std::size_t layers, std::size_t ffn_hidden,
                                          Rng& rng) {
    validate_fusion_modalities(modalities);
    CrossModalEncoder enc;
    enc.modalities = modalities;
    enc.d_model = d_model;
    for (auto m : modalities) {
        auto it = input_dims.find(m);
        const std::size_t dm = it != input_dims.end() ? it->second : conventional_dim(m);
        enc.projections[m] = xavier(dm, d_model, rng);
    }
    enc.to_second = BlockStack::init(layers, d_model, num_heads, ffn_hidden, rng);
    if (modalities.size() == 2) enc.to_first = BlockStack::init(layers, d_model, num_heads, ffn_hidden, rng);
    return enc;
}

void CrossModalEncoder::collect(const std::string& prefix, ParamList& out) const {
    for (auto m : modalities) out.emplace_back(prefix + ".proj." + to_string(m), projections.at(m));
    to_second.collect(prefix + ".to_second", out);
    to_first.collect(prefix + ".to_first", out);
}

FusedPersonRep fuse_person(const std::vector<ModalityStream>& streams, const std::string& person_id,
                           const CrossModalEncoder& encoder, std::size_t t_target, const AttentionMask* mask,
                           const ForwardContext& ctx, FusionTrace* trace) {
    auto find = [&](Modality m) -> const ModalityStream& {
        auto it = std::find_if(streams.begin(), streams.end(), [m](const auto& s) { return s.modality == m; });
        if (it == streams.end())
            throw DataError("person '" + person_id + "' has no " + to_string(m) + " stream");
        return *it;
    };
    const Modality first = encoder.modalities.front();
    const Tensor x_first = temporal_project(find(first), encoder.projections.at(first), t_target);

    if (encoder.modalities.size() == 1) {
        const Tensor s = crossmodal_block(x_first, x_first, encoder.to_second, mask, ctx,
                                          trace ? &trace->to_second : nullptr);
        return {concat_cols({s, s}), person_id};
    }
    const Modality second = encoder.modalities[1];
    const Tensor x_second = temporal_project(find(second), encoder.projections.at(second), t_target);
    const Tensor first_to_second = crossmodal_block(x_first, x_second, encoder.to_second, mask, ctx,
                                                    trace ? &trace->to_second : nullptr);
    const Tensor second_to_first = crossmodal_block(x_second, x_first, encoder.to_first, mask, ctx,
                                                    trace ? &trace->to_first : nullptr);
    return {concat_cols({first_to_second, second_to_first}), person_id};
}

}  // namespace cpmt
