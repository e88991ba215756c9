#pragma once

// The operations behind the command-line tool. Each returns normally on
// success and throws a cpmt::Error subclass otherwise.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpmt/config.hpp"
#include "cpmt/metrics.hpp"
#include "cpmt/synth.hpp"

namespace cpmt {

struct GenerateResult {
    std::string manifest_path;
    std::vector<std::size_t> class_counts;
};

// Refuses an existing non-empty directory unless force is set.
GenerateResult cmd_generate(const SynthSpec& spec, const std::string& out_dir, bool force);

struct TrainCommand {
    RunConfig config;
    Ablation ablation = Ablation::none;
    std::optional<std::vector<std::uint64_t>> seeds;  // overrides config.seeds
    bool force = false;
    bool resume = false;
    std::size_t stop_after = 0;  // simulate an interruption after N epochs per run
    bool verbose = false;
};

struct SeedRow {
    std::uint64_t seed = 0;
    EvalReport test;  // fold-averaged
};

struct TrainSummary {
    std::string run_dir;
    std::vector<SeedRow> rows;
    EvalReport mean;
    EvalReport stddev;  // scores only
    bool completed = true;
};

// Layout: <out>/config.json, <out>/seed_<s>/fold_<f>/{last.ckpt, best.ckpt,
// split.json, loss_curve.json, report.json, predictions.json},
// <out>/summary.csv, <out>/summary.json.
TrainSummary cmd_train(const TrainCommand& cmd);

struct EvalCommand {
    std::string checkpoint;
    std::string manifest;
    std::string split_file;  // optional split.json from a training fold
    std::string split = "all";  // all | train | valid | test
    std::string bootstrap;      // optional predictions.json to compare against
    Metric metric = Metric::macro_f1;
    std::size_t bootstrap_samples = 1000;
    double alpha = 0.05;
    std::size_t comparisons = 1;
    std::uint64_t seed = 0;
    std::string predictions_out;  // optional path for this model's predictions
};

nlohmann::json cmd_eval(const EvalCommand& cmd);

struct InspectCommand {
    std::string checkpoint;
    std::string manifest;
    std::string fragment;
    std::string dump_dir;
    std::size_t layer = 0;
    std::string direction;  // crossmodal direction, e.g. "video->audio"; empty: all
};

// Writes CSV + SVG per matrix and slots.json; returns the sidecar JSON.
nlohmann::json cmd_inspect(const InspectCommand& cmd);

// Reads a run directory, writes loss_curve.svg, per_class_f1.svg and
// per_class_f1.csv into it. Returns the written paths.
std::vector<std::string> cmd_plot(const std::string& run_dir);

// Slot category from the write self-weight.
std::string slot_type(double self_weight);

// Process exit code for an exception thrown by a command.
int exit_code_for(const std::exception& e);

}  // namespace cpmt
