#include "cpmt/config.hpp"

#include <fstream>
#include <set>

#include "cpmt/errors.hpp"

namespace cpmt {

using nlohmann::json;

std::string to_string(PoolMode m) { return m == PoolMode::last_segment ? "last_segment" : "all_segments"; }

PoolMode parse_pool_mode(const std::string& name) {
    if (name == "last_segment") return PoolMode::last_segment;
    if (name == "all_segments") return PoolMode::all_segments;
    throw ConfigError("unknown pool mode '" + name + "' (expected last_segment or all_segments)");
}

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_llm: return "no_llm";
        case Ablation::no_memory: return "no_memory";
        case Ablation::no_individuals: return "no_individuals";
    }
    return "?";
}

Ablation parse_ablation(const std::string& name) {
    if (name == "none") return Ablation::none;
    if (name == "no_llm") return Ablation::no_llm;
    if (name == "no_memory") return Ablation::no_memory;
    if (name == "no_individuals") return Ablation::no_individuals;
    throw ConfigError("unknown ablation '" + name + "' (expected none, no_llm, no_memory or no_individuals)");
}

void apply(Ablation a, Ablations& flags) {
    if (a == Ablation::no_llm) flags.no_llm = true;
    if (a == Ablation::no_memory) flags.no_memory = true;
    if (a == Ablation::no_individuals) flags.no_individuals = true;
}

namespace {

void positive(std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
}

}  // namespace

void CPMTConfig::validate() const {
    positive(d_model, "d_model");
    positive(num_heads, "num_heads");
    positive(cpa_layers, "cpa_layers");
    positive(mem_layers, "mem_layers");
    positive(k_slots, "k_slots");
    positive(K_segments, "K_segments");
    positive(behavior_dim, "behavior_dim");
    positive(ffn_mult, "ffn_mult");
    positive(embedding_buckets, "embedding_buckets");
    positive(verbal_layers, "verbal_layers");
    if (d_model % num_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    if (!(tau > 0.0)) throw ParameterError("tau must be > 0");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    validate_fusion_modalities(modalities);
    for (auto m : modalities)
        if (!input_dims.count(m) || input_dims.at(m) == 0)
            throw ConfigError("no input width configured for modality " + to_string(m));
    if (seq_len != 0 && seq_len < K_segments)
        throw ConfigError("seq_len " + std::to_string(seq_len) + " is shorter than K_segments " +
                          std::to_string(K_segments));
}

void TrainConfig::validate() const {
    positive(batch_size, "batch_size");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (!(test_frac > 0.0 && test_frac < 1.0 && valid_frac > 0.0 && valid_frac < 1.0))
        throw ConfigError("split fractions must lie in (0, 1)");
    positive(jobs, "jobs");
}

Preset preset(const std::string& name) {
    Preset p;
    p.model.behavior_dim = 640;
    p.train.gamma = 10.0;
    if (name == "dami") {
        p.train.batch_size = 48;
        p.train.learning_rate = 3e-3;
        p.model.k_slots = 128;
        p.train.epochs = 20;
        p.model.concat_policy = ConcatMode::child_coordinated;
    } else if (name == "mpii") {
        p.train.batch_size = 48;
        p.train.learning_rate = 1e-3;
        p.model.k_slots = 256;
        p.train.epochs = 15;
    } else if (name == "boss") {
        p.train.batch_size = 32;
        p.train.learning_rate = 2e-3;
        p.model.k_slots = 256;
        p.train.epochs = 15;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected dami, mpii or boss)");
    }
    return p;
}

std::vector<std::string> preset_names() { return {"dami", "mpii", "boss"}; }

json to_json(const CPMTConfig& c) {
    json mods = json::array();
    for (auto m : c.modalities) mods.push_back(to_string(m));
    json dims = json::object();
    for (const auto& [m, d] : c.input_dims) dims[to_string(m)] = d;
    return {{"d_model", c.d_model},
            {"num_heads", c.num_heads},
            {"crossmodal_layers", c.crossmodal_layers},
            {"cpa_layers", c.cpa_layers},
            {"mem_layers", c.mem_layers},
            {"k_slots", c.k_slots},
            {"K_segments", c.K_segments},
            {"tau", c.tau},
            {"concat_policy", to_string(c.concat_policy)},
            {"num_classes", c.num_classes},
            {"dropout_rate", c.dropout_rate},
            {"behavior_dim", c.behavior_dim},
            {"ffn_mult", c.ffn_mult},
            {"modalities", mods},
            {"input_dims", dims},
            {"seq_len", c.seq_len},
            {"segment_local_attention", c.segment_local_attention},
            {"pool", to_string(c.pool)},
            {"embedding_buckets", c.embedding_buckets},
            {"verbal_layers", c.verbal_layers},
            {"ablations",
             {{"no_llm", c.ablations.no_llm},
              {"no_memory", c.ablations.no_memory},
              {"no_individuals", c.ablations.no_individuals}}},
            {"seed", c.seed}};
}

json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
            {"gamma", c.gamma},           {"weight_decay", c.weight_decay},   {"grad_clip", c.grad_clip},
            {"seed", c.seed}};
}

json to_json(const RunConfig& c) {
    return {{"model", to_json(c.model)},   {"train", to_json(c.train)},   {"manifest", c.manifest},
            {"output_dir", c.output_dir},  {"seeds", c.seeds},            {"folds", c.folds},
            {"test_frac", c.test_frac},    {"valid_frac", c.valid_frac}, {"split_seed", c.split_seed},
            {"jobs", c.jobs}};
}

namespace {

// Reads known keys from a JSON object and reports anything left over.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown config key " + where_ + "." + it.key());
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

CPMTConfig model_config_from_json(const json& j) {
    CPMTConfig c;
    Reader r(j, "model");
    r.get("d_model", c.d_model);
    r.get("num_heads", c.num_heads);
    r.get("crossmodal_layers", c.crossmodal_layers);
    r.get("cpa_layers", c.cpa_layers);
    r.get("mem_layers", c.mem_layers);
    r.get("k_slots", c.k_slots);
    r.get("K_segments", c.K_segments);
    r.get("tau", c.tau);
    std::string policy = to_string(c.concat_policy);
    r.get("concat_policy", policy);
    c.concat_policy = parse_concat_mode(policy);
    r.get("num_classes", c.num_classes);
    r.get("dropout_rate", c.dropout_rate);
    r.get("behavior_dim", c.behavior_dim);
    r.get("ffn_mult", c.ffn_mult);
    if (const json* mods = r.sub("modalities")) {
        c.modalities.clear();
        for (const auto& m : *mods) c.modalities.push_back(parse_modality(m.get<std::string>()));
    }
    if (const json* dims = r.sub("input_dims")) {
        c.input_dims.clear();
        for (auto it = dims->begin(); it != dims->end(); ++it)
            c.input_dims[parse_modality(it.key())] = it.value().get<std::size_t>();
    }
    r.get("seq_len", c.seq_len);
    r.get("segment_local_attention", c.segment_local_attention);
    std::string pool = to_string(c.pool);
    r.get("pool", pool);
    c.pool = parse_pool_mode(pool);
    r.get("embedding_buckets", c.embedding_buckets);
    r.get("verbal_layers", c.verbal_layers);
    if (const json* ab = r.sub("ablations")) {
        Reader a(*ab, "model.ablations");
        a.get("no_llm", c.ablations.no_llm);
        a.get("no_memory", c.ablations.no_memory);
        a.get("no_individuals", c.ablations.no_individuals);
        a.finish();
    }
    r.get("seed", c.seed);
    r.finish();
    c.validate();
    return c;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    Reader r(j, "train");
    r.get("batch_size", c.batch_size);
    r.get("learning_rate", c.learning_rate);
    r.get("epochs", c.epochs);
    r.get("gamma", c.gamma);
    r.get("weight_decay", c.weight_decay);
    r.get("grad_clip", c.grad_clip);
    r.get("seed", c.seed);
    r.finish();
    c.validate();
    return c;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Reader r(j, "config");
    std::string preset_name;
    r.get("preset", preset_name);
    if (!preset_name.empty()) {
        auto p = preset(preset_name);
        c.model = p.model;
        c.train = p.train;
    }
    if (const json* m = r.sub("model")) {
        json merged = to_json(c.model);
        merged.merge_patch(*m);
        c.model = model_config_from_json(merged);
    }
    if (const json* t = r.sub("train")) {
        json merged = to_json(c.train);
        merged.merge_patch(*t);
        c.train = train_config_from_json(merged);
    }
    r.get("manifest", c.manifest);
    r.get("output_dir", c.output_dir);
    r.get("seeds", c.seeds);
    r.get("folds", c.folds);
    r.get("test_frac", c.test_frac);
    r.get("valid_frac", c.valid_frac);
    r.get("split_seed", c.split_seed);
    r.get("jobs", c.jobs);
    r.finish();
    c.validate();
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_object()) *node = json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config " + path);
        j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
    }
    for (const auto& o : overrides) apply_override(j, o);
    return run_config_from_json(j);
}

}  // namespace cpmt
