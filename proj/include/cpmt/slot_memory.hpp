#pragma once

// Recurrent slot memory: cross-attention reads, slot-local attention writes
// with temperature, biased memory normalization (BMN) for forgetting, and the
// segment recurrence that threads the memory through a sequence.

#include <vector>

#include "cpmt/attention.hpp"
#include "cpmt/nn.hpp"

namespace cpmt {

struct MemoryState {
    Tensor slots;   // [k x d], unit-norm rows
    Tensor v_bias;  // [k x d], learnable forgetting bias
    double tau = 1.0;
    std::size_t step = 0;

    std::size_t k() const { return slots.rows(); }
    std::size_t d() const { return slots.cols(); }
};

// Rows of v_bias normalised to unit length: both the initial memory and the
// attractor of repeated forgetting.
Tensor terminal_slots(const Tensor& v_bias);

// Fresh state m_0 = v_bias / |v_bias|. Rejects bias rows with norm <= 1e-8
// and tau <= 0.
MemoryState initial_memory(const Tensor& v_bias, double tau = 1.0);

// Memory started from externally supplied slots (e.g. verbal memory).
MemoryState memory_from_slots(const Tensor& slots, const Tensor& v_bias, double tau = 1.0);

// (m + v_bias) / |m + v_bias| row by row. Accepts [k x d] with [k x d] bias or
// a single [d] slot with its [d] bias. Rows that cancel to norm <= 1e-8 get
// 1e-8 * v_bias_hat added before normalising.
Tensor bmn(const Tensor& slots, const Tensor& v_bias);

Tensor memory_read(const Tensor& x, const Tensor& slots, const AttentionParams& params,
                   std::vector<double>* weights = nullptr);

struct WriteTrace {
    std::size_t k = 0;
    std::size_t n_tokens = 0;
    // [k x (1 + n_tokens)]: column 0 is the slot's weight on itself, then one
    // column per token. Head-averaged.
    std::vector<double> weights;
    // Full head-averaged matrix over [slots; tokens], [k x (k + n_tokens)].
    std::vector<double> raw;
};

// Each slot attends only to itself and the tokens; scores are divided by
// tau; the result goes through BMN. `tokens` may be undefined (empty segment).
Tensor memory_write(const MemoryState& state, const Tensor& tokens, const AttentionParams& params,
                    WriteTrace* trace = nullptr);

struct MemEncoderLayer {
    AttentionParams self_attn;
    LayerNormParams norm_self;
    AttentionParams read;
    LayerNormParams norm_read;
    FeedForward ffn;
    LayerNormParams norm_ffn;
    bool is_last = false;

    void collect(const std::string& prefix, ParamList& out) const;
};

struct MemoryEncoder {
    std::vector<MemEncoderLayer> layers;
    AttentionParams write;

    static MemoryEncoder init(std::size_t n_layers, std::size_t d, std::size_t num_heads, std::size_t ffn_hidden,
                              Rng& rng);
    void validate() const;  // exactly one is_last layer
    void collect(const std::string& prefix, ParamList& out) const;
};

struct SegmentOptions {
    bool read = true;
    bool write = true;
};

struct MemoryTrace {
    std::vector<WriteTrace> writes;  // one per segment that wrote
};

struct SegmentRun {
    std::vector<Tensor> outputs;  // last-layer tokens per segment
    MemoryState final_state;
};

SegmentRun run_segments(const std::vector<Tensor>& segments, const MemoryState& mem0, const MemoryEncoder& encoder,
                        const ForwardContext& ctx, SegmentOptions options = {}, MemoryTrace* trace = nullptr);

}  // namespace cpmt
