#include "cpmt/verbal.hpp"

#include <httplib.h>

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cpmt/errors.hpp"
#include "cpmt/ops.hpp"

namespace cpmt {

using nlohmann::json;

void PromptContext::validate() const {
    if (entities.empty()) throw ConfigError("prompt context needs at least one entity");
    if (window == 0) throw ConfigError("prompt window must be positive");
    if (history.size() > window)
        throw ConfigError("prompt history has " + std::to_string(history.size()) + " utterances, window is " +
                          std::to_string(window));
}

std::string build_prompt(const PromptContext& ctx, const std::string& entity) {
    ctx.validate();
    bool known = false;
    for (const auto& e : ctx.entities) known = known || e == entity;
    if (!known) throw LookupError("unknown prompt entity '" + entity + "'");
    std::ostringstream p;
    p << "Relationship: " << ctx.relationship << "\n";
    p << "Activity: " << ctx.activity << "\n";
    p << "Conversation history (last " << ctx.window << " utterances):\n";
    if (ctx.history.empty()) p << kNoHistoryMarker << "\n";
    for (const auto& u : ctx.history) p << u.speaker << ": " << u.text << "\n";
    p << "Target: " << ctx.target_label << "\n";
    p << "Entity: " << entity << "\n";
    p << "Describe the behavior and state of the " << entity << " relevant to " << ctx.target_label << ".";
    return p.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string prompt_hash(std::string_view prompt) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(prompt)));
    return buf;
}

MockLLMClient MockLLMClient::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open LLM fixture " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("LLM fixture " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw FormatError("LLM fixture " + path + " must be a JSON object");
    std::map<std::string, std::string> m;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_string()) throw FormatError("LLM fixture entry " + it.key() + " is not a string");
        m[it.key()] = it.value().get<std::string>();
    }
    return MockLLMClient(std::move(m));
}

std::string MockLLMClient::complete(const std::string& prompt) {
    const std::string h = prompt_hash(prompt);
    auto it = by_hash_.find(h);
    if (it == by_hash_.end()) throw LookupError("no canned LLM response for prompt hash " + h);
    return it->second;
}

HttpLLMConfig HttpLLMConfig::from_env() {
    HttpLLMConfig c;
    if (const char* e = std::getenv("CPMT_LLM_ENDPOINT")) c.endpoint = e;
    if (const char* t = std::getenv("CPMT_LLM_TOKEN")) c.token = t;
    return c;
}

HttpLLMClient::HttpLLMClient(HttpLLMConfig cfg) : cfg_(std::move(cfg)) {
    const std::string scheme = "http://";
    if (cfg_.endpoint.rfind(scheme, 0) != 0)
        throw ConfigError("LLM endpoint must start with http://, got '" + cfg_.endpoint + "'");
    const auto slash = cfg_.endpoint.find('/', scheme.size());
    base_ = cfg_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
    if (cfg_.max_attempts < 1) throw ConfigError("LLM max_attempts must be >= 1");
}

std::string HttpLLMClient::complete(const std::string& prompt) {
    const json request = {{"model", cfg_.model},
                          {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
    const std::string body = request.dump();
    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
        httplib::Client client(base_);
        client.set_connection_timeout(cfg_.timeout_s, 0);
        client.set_read_timeout(cfg_.timeout_s, 0);
        httplib::Headers headers;
        if (!cfg_.token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.token);
        auto res = client.Post(path_, headers, body, "application/json");
        if (!res) {
            last_error = "request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "LLM endpoint returned HTTP " + std::to_string(res->status);
            continue;
        }
        try {
            const json reply = json::parse(res->body);
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            last_error = std::string("malformed LLM response: ") + e.what();
        }
    }
    throw TransportError(last_error, cfg_.max_attempts);
}

std::unique_ptr<LLMClient> make_llm_client(const std::string& fixture_path) {
    auto http = HttpLLMConfig::from_env();
    if (!http.endpoint.empty()) return std::make_unique<HttpLLMClient>(std::move(http));
    if (fixture_path.empty())
        throw ConfigError("no LLM available: set CPMT_LLM_ENDPOINT or provide a mock fixture file");
    return std::make_unique<MockLLMClient>(MockLLMClient::from_file(fixture_path));
}

std::string query_llm(LLMClient& client, const std::string& prompt) { return client.complete(prompt); }

bool ReasoningSet::empty() const {
    for (const auto& [entity, lines] : sentences)
        for (const auto& l : lines)
            if (!tokenize(l).empty()) return false;
    return true;
}

std::string ReasoningSet::joined() const {
    std::string out;
    for (const auto& e : entities) {
        auto it = sentences.find(e);
        if (it == sentences.end()) continue;
        for (const auto& line : it->second) {
            if (!out.empty()) out += ' ';
            out += line;
        }
    }
    return out;
}

ReasoningSet collect_reasoning(LLMClient& client, const PromptContext& ctx) {
    ReasoningSet s;
    s.entities = ctx.entities;
    for (const auto& e : ctx.entities) s.sentences[e] = {query_llm(client, build_prompt(ctx, e))};
    return s;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

HashEmbedding HashEmbedding::init(std::size_t buckets, std::size_t d, Rng& rng) {
    if (buckets == 0 || d == 0) throw ConfigError("hash embedding needs positive buckets and width");
    std::vector<double> v(buckets * d);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return {Tensor::from({buckets, d}, std::move(v), true)};
}

std::size_t HashEmbedding::bucket(std::string_view token) const { return fnv1a64(token) % table.rows(); }

std::vector<std::size_t> HashEmbedding::buckets_of(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(bucket(t));
    return ids;
}

Tensor HashEmbedding::embed(const std::vector<std::size_t>& ids) const { return gather_rows(table, ids); }

void HashEmbedding::collect(const std::string& prefix, ParamList& out) const { out.emplace_back(prefix + ".table", table); }

VerbalEncoder VerbalEncoder::init(std::size_t buckets, std::size_t d, std::size_t num_heads, std::size_t ffn_hidden,
                                  std::size_t layers, Rng& rng) {
    VerbalEncoder v;
    v.embedding = HashEmbedding::init(buckets, d, rng);
    v.encoder = MemoryEncoder::init(layers, d, num_heads, ffn_hidden, rng);
    return v;
}

void VerbalEncoder::collect(const std::string& prefix, ParamList& out) const {
    embedding.collect(prefix + ".embedding", out);
    encoder.collect(prefix + ".encoder", out);
}

VerbalMemory encode_verbal_memory(const std::vector<std::size_t>& token_ids, const VerbalEncoder& enc,
                                  const Tensor& v_bias, double tau, const ForwardContext& ctx) {
    MemoryState mem0 = initial_memory(v_bias, tau);
    if (token_ids.empty()) return {mem0.slots, true};
    if (enc.embedding.table.cols() != v_bias.cols())
        throw DimensionError("verbal embedding width " + std::to_string(enc.embedding.table.cols()) +
                             " does not match memory width " + std::to_string(v_bias.cols()));
    auto run = run_segments({enc.embedding.embed(token_ids)}, mem0, enc.encoder, ctx);
    return {run.final_state.slots, false};
}

VerbalMemory encode_verbal_memory(const ReasoningSet& s, const VerbalEncoder& enc, const Tensor& v_bias, double tau,
                                  const ForwardContext& ctx) {
    return encode_verbal_memory(enc.embedding.buckets_of(tokenize(s.joined())), enc, v_bias, tau, ctx);
}

}  // namespace cpmt
