#pragma once

// The full pipeline: per-person fusion, cross-person attention, projection to
// d_model, segment recurrence through the memory encoder, pooling and the
// classification head.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpmt/config.hpp"
#include "cpmt/data.hpp"
#include "cpmt/slot_memory.hpp"
#include "cpmt/verbal.hpp"

namespace cpmt {

// concat(mean of the last segment's tokens, mean of the memory slots), or with
// all_segments the first half averages every token of every segment.
Tensor pool(const std::vector<Tensor>& segment_outputs, const MemoryState& mem_final,
            PoolMode mode = PoolMode::last_segment);

// Start offsets of K equal temporal segments over T steps.
std::vector<std::size_t> segment_boundaries(std::size_t T, std::size_t K);

struct ForwardTrace {
    std::map<std::string, FusionTrace> fusion;  // by person id, or "merged"
    CrossPersonTrace cross_person;
    MemoryTrace memory;
    std::vector<std::size_t> boundaries;
};

struct CPMTModel {
    CPMTConfig cfg;
    CrossModalEncoder fusion;
    CrossPersonEncoder cross_person;
    Linear projection;
    MemoryEncoder memory;
    Tensor v_bias;
    VerbalEncoder verbal;  // absent under no_llm
    Linear head_hidden;
    Linear head_out;

    static CPMTModel init(const CPMTConfig& cfg);

    ParamList parameters() const;
    std::size_t parameter_count() const;

    std::size_t sequence_length(const std::vector<PersonStream>& persons) const;

    // Exactly two persons, one per role. `verbal_mem`, when given, seeds the
    // memory instead of the terminal state.
    Tensor forward(const std::vector<PersonStream>& persons, const Tensor* verbal_mem, const ForwardContext& ctx,
                   ForwardTrace* trace = nullptr) const;

    // Encodes verbal token ids first (unless no_llm or empty), then forward.
    Tensor forward(const std::vector<PersonStream>& persons, const std::vector<std::size_t>& verbal_tokens,
                   const ForwardContext& ctx, ForwardTrace* trace = nullptr) const;

    std::vector<std::size_t> verbal_tokens(const ReasoningSet& s) const;
};

// Container: "CPMTCKPT" | u32 version | u64 json length | json | u32 count |
// per tensor: u32 name length | name | u64 byte length | tensor file bytes.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& at(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

void save_model(const std::string& path, const CPMTModel& model, nlohmann::json extra = nlohmann::json::object());
CPMTModel load_model(const std::string& path, nlohmann::json* extra = nullptr);
// Copies values of matching names into the model's parameters.
void load_parameters(const CPMTModel& model, const Checkpoint& ck);
// Rounds every parameter through single precision in place.
void snap_parameters(const CPMTModel& model);

}  // namespace cpmt
