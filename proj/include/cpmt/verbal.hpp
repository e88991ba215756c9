#pragma once

// Verbal context: prompt templates, LLM clients (canned-response mock and an
// OpenAI-style HTTP client), and the encoder that turns reasoning text into an
// initial memory bank.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cpmt/slot_memory.hpp"

namespace cpmt {

struct Utterance {
    std::string speaker;
    std::string text;
};

struct PromptContext {
    std::string relationship = "parent-child";
    std::string activity = "story reading";
    std::vector<Utterance> history;
    std::size_t window = 6;
    std::string target_label = "joint engagement";
    std::vector<std::string> entities = {"parent", "child", "both"};

    void validate() const;  // ConfigError on history > window or no entities
};

inline constexpr std::string_view kNoHistoryMarker = "(no prior utterances)";

std::string build_prompt(const PromptContext& ctx, const std::string& entity);

std::uint64_t fnv1a64(std::string_view bytes);
std::string prompt_hash(std::string_view prompt);  // 16 lowercase hex digits

class LLMClient {
public:
    virtual ~LLMClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

class MockLLMClient : public LLMClient {
public:
    explicit MockLLMClient(std::map<std::string, std::string> by_hash) : by_hash_(std::move(by_hash)) {}
    // Fixture JSON: {"<prompt hash>": "<reasoning text>", ...}
    static MockLLMClient from_file(const std::string& path);
    std::string complete(const std::string& prompt) override;  // LookupError when absent

private:
    std::map<std::string, std::string> by_hash_;
};

struct HttpLLMConfig {
    std::string endpoint;  // http://host[:port]/path
    std::string token;
    std::string model = "gpt-3.5-turbo";
    int max_attempts = 3;
    int timeout_s = 30;

    // CPMT_LLM_ENDPOINT and CPMT_LLM_TOKEN; endpoint empty when unset.
    static HttpLLMConfig from_env();
};

class HttpLLMClient : public LLMClient {
public:
    explicit HttpLLMClient(HttpLLMConfig cfg);
    std::string complete(const std::string& prompt) override;  // TransportError

private:
    HttpLLMConfig cfg_;
    std::string base_;
    std::string path_;
};

// HTTP client when CPMT_LLM_ENDPOINT is set, otherwise the mock fixture.
// ConfigError when neither is available.
std::unique_ptr<LLMClient> make_llm_client(const std::string& fixture_path);

std::string query_llm(LLMClient& client, const std::string& prompt);

struct ReasoningSet {
    std::vector<std::string> entities;
    std::map<std::string, std::vector<std::string>> sentences;

    bool empty() const;
    // Entity texts joined in entity order.
    std::string joined() const;
};

ReasoningSet collect_reasoning(LLMClient& client, const PromptContext& ctx);

// Lowercased whitespace-separated tokens.
std::vector<std::string> tokenize(std::string_view text);

struct HashEmbedding {
    Tensor table;  // [buckets x d]

    static HashEmbedding init(std::size_t buckets, std::size_t d, Rng& rng);
    std::size_t bucket(std::string_view token) const;
    std::vector<std::size_t> buckets_of(const std::vector<std::string>& tokens) const;
    Tensor embed(const std::vector<std::size_t>& ids) const;  // [n x d]
    void collect(const std::string& prefix, ParamList& out) const;
};

struct VerbalEncoder {
    HashEmbedding embedding;
    MemoryEncoder encoder;

    static VerbalEncoder init(std::size_t buckets, std::size_t d, std::size_t num_heads, std::size_t ffn_hidden,
                              std::size_t layers, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

struct VerbalMemory {
    Tensor mem;          // [k x d]
    bool empty = false;  // no text: mem is the terminal state
};

// Single-segment pass of the verbal encoder from the v_bias initial state.
VerbalMemory encode_verbal_memory(const std::vector<std::size_t>& token_ids, const VerbalEncoder& enc,
                                  const Tensor& v_bias, double tau, const ForwardContext& ctx);
VerbalMemory encode_verbal_memory(const ReasoningSet& s, const VerbalEncoder& enc, const Tensor& v_bias, double tau,
                                  const ForwardContext& ctx);

}  // namespace cpmt
