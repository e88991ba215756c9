#pragma once

// Model, training and run configuration with JSON round-tripping. Unknown keys
// are rejected on load.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpmt/crossmodal.hpp"
#include "cpmt/crossperson.hpp"

namespace cpmt {

enum class PoolMode { last_segment, all_segments };
std::string to_string(PoolMode m);
PoolMode parse_pool_mode(const std::string& name);

struct Ablations {
    bool no_llm = false;
    bool no_memory = false;
    bool no_individuals = false;
};

enum class Ablation { none, no_llm, no_memory, no_individuals };
std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& name);
void apply(Ablation a, Ablations& flags);

struct CPMTConfig {
    std::size_t d_model = 16;
    std::size_t num_heads = 2;
    std::size_t crossmodal_layers = 3;
    std::size_t cpa_layers = 3;
    std::size_t mem_layers = 1;
    std::size_t k_slots = 16;
    std::size_t K_segments = 4;
    double tau = 1.0;
    ConcatMode concat_policy = ConcatMode::symmetric;
    std::size_t num_classes = 3;
    double dropout_rate = 0.0;
    std::size_t behavior_dim = 32;  // hidden width of the classification head
    std::size_t ffn_mult = 2;       // feed-forward hidden = ffn_mult * sublayer width
    std::vector<Modality> modalities = {Modality::audio, Modality::video};
    std::map<Modality, std::size_t> input_dims = {{Modality::audio, 128}, {Modality::video, 512}};
    std::size_t seq_len = 0;  // 0: shortest stream of the fragment
    bool segment_local_attention = true;
    PoolMode pool = PoolMode::last_segment;
    std::size_t embedding_buckets = 512;
    std::size_t verbal_layers = 1;
    Ablations ablations;
    std::uint64_t seed = 0;

    void validate() const;  // ConfigError
};

struct TrainConfig {
    std::size_t batch_size = 16;
    double learning_rate = 3e-3;
    std::size_t epochs = 20;
    double gamma = 10.0;
    double weight_decay = 0.01;
    double grad_clip = 1.0;  // 0 disables clipping
    std::uint64_t seed = 0;

    void validate() const;
};

struct Preset {
    CPMTConfig model;
    TrainConfig train;
};

// Full-scale presets "dami", "mpii", "boss".
Preset preset(const std::string& name);
std::vector<std::string> preset_names();

struct RunConfig {
    CPMTConfig model;
    TrainConfig train;
    std::string manifest;
    std::string output_dir = "runs/run";
    std::vector<std::uint64_t> seeds = {0};
    std::size_t folds = 1;  // 0 runs every fold
    double test_frac = 0.1;
    double valid_frac = 0.2;
    std::uint64_t split_seed = 0;
    std::size_t jobs = 1;

    void validate() const;
};

nlohmann::json to_json(const CPMTConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RunConfig& c);
CPMTConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

}  // namespace cpmt
