// cpmt: generate synthetic data, train, evaluate, inspect and plot.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "cpmt/commands.hpp"
#include "cpmt/errors.hpp"

using namespace cpmt;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw ConfigError("seed '" + item + "' is not a nonnegative integer");
        }
    }
    if (out.empty()) throw ConfigError("--seeds needs at least one value");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-person memory transformer: data generation, training and analysis"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic dyadic dataset");
    SynthSpec spec;
    std::string task = "contingency", balance, gen_out;
    bool gen_force = false, uninformative = false;
    gen->add_option("--task", task, "contingency | longrange | verbal | cue")->capture_default_str();
    gen->add_option("--n", spec.n_fragments, "number of fragments")->capture_default_str();
    gen->add_option("--T", spec.T, "time steps per stream")->capture_default_str();
    gen->add_option("--d-a", spec.d_a, "audio feature width")->capture_default_str();
    gen->add_option("--d-v", spec.d_v, "video feature width")->capture_default_str();
    gen->add_option("--rho", spec.rho, "contingency strength")->capture_default_str();
    gen->add_option("--lag", spec.lag, "contingency lag")->capture_default_str();
    gen->add_option("--noise", spec.noise, "observation noise std")->capture_default_str();
    gen->add_option("--horizon", spec.longrange_horizon, "long-range horizon in segments")->capture_default_str();
    gen->add_option("--amplitude", spec.motif_amplitude, "motif amplitude")->capture_default_str();
    gen->add_option("--cue", spec.cue_strength, "nonverbal cue strength")->capture_default_str();
    gen->add_option("--balance", balance, "class balance: comma list or dami-like");
    gen->add_option("--groups", spec.n_groups, "number of groups")->capture_default_str();
    gen->add_flag("--uninformative", uninformative, "verbal task: same reasoning text for every fragment");
    gen->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_flag("--force", gen_force, "overwrite a non-empty output directory");

    // train
    auto* tr = app.add_subcommand("train", "train over seeds and folds");
    std::string config_path, ablation = "none", seeds, train_out, manifest_path;
    std::vector<std::string> overrides;
    bool train_force = false, resume = false, verbose = false;
    std::size_t jobs = 0, stop_after = 0;
    tr->add_option("--config", config_path, "run config JSON");
    tr->add_option("--set", overrides, "dotted override, e.g. train.epochs=5");
    tr->add_option("--ablation", ablation, "none | no_llm | no_memory | no_individuals")->capture_default_str();
    tr->add_option("--seeds", seeds, "comma-separated seeds");
    tr->add_option("--manifest", manifest_path, "dataset manifest (overrides the config)");
    tr->add_option("--out", train_out, "run directory (overrides output_dir)");
    tr->add_option("--jobs", jobs, "parallel independent runs");
    tr->add_option("--stop-after", stop_after, "stop each run after N epochs (resume later)");
    tr->add_flag("--force", train_force, "overwrite a non-empty run directory");
    tr->add_flag("--resume", resume, "continue an interrupted run directory");
    tr->add_flag("--verbose", verbose, "log every epoch");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    EvalCommand ec;
    std::string metric = "macro_f1", eval_out;
    ev->add_option("--checkpoint", ec.checkpoint, "model checkpoint")->required();
    ev->add_option("--manifest", ec.manifest, "dataset manifest")->required();
    ev->add_option("--split-file", ec.split_file, "split.json from a training fold");
    ev->add_option("--split", ec.split, "all | train | valid | test")->capture_default_str();
    ev->add_option("--bootstrap", ec.bootstrap, "predictions.json of a competing system");
    ev->add_option("--metric", metric, "bootstrap metric")->capture_default_str();
    ev->add_option("--B", ec.bootstrap_samples, "bootstrap resamples")->capture_default_str();
    ev->add_option("--alpha", ec.alpha, "significance level")->capture_default_str();
    ev->add_option("--comparisons", ec.comparisons, "Bonferroni comparison count")->capture_default_str();
    ev->add_option("--seed", ec.seed, "bootstrap seed")->capture_default_str();
    ev->add_option("--predictions", ec.predictions_out, "write this model's predictions here");
    ev->add_option("--out", eval_out, "write the report JSON here instead of stdout");

    // inspect
    auto* in = app.add_subcommand("inspect", "dump attention and memory matrices for one fragment");
    InspectCommand ic;
    in->add_option("--checkpoint", ic.checkpoint, "model checkpoint")->required();
    in->add_option("--manifest", ic.manifest, "dataset manifest")->required();
    in->add_option("--fragment", ic.fragment, "fragment id")->required();
    in->add_option("--dump", ic.dump_dir, "output directory")->required();
    in->add_option("--layer", ic.layer, "crossmodal layer")->capture_default_str();
    in->add_option("--direction", ic.direction, "crossmodal direction, e.g. video->audio");

    // plot
    auto* pl = app.add_subcommand("plot", "render loss curves and per-class F1 for a run");
    std::string plot_dir;
    pl->add_option("run_dir", plot_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*gen) {
            spec.task = parse_synth_task(task);
            if (!balance.empty()) spec.class_balance = balance_preset(balance);
            spec.informative_text = !uninformative;
            const auto r = cmd_generate(spec, gen_out, gen_force);
            std::cout << r.manifest_path << "\n";
            for (std::size_t c = 0; c < r.class_counts.size(); ++c)
                std::cout << "class " << c << ": " << r.class_counts[c] << "\n";
        } else if (*tr) {
            TrainCommand tc;
            tc.config = load_run_config(config_path, overrides);
            if (!manifest_path.empty()) tc.config.manifest = manifest_path;
            if (!train_out.empty()) tc.config.output_dir = train_out;
            if (jobs) tc.config.jobs = jobs;
            tc.ablation = parse_ablation(ablation);
            if (!seeds.empty()) tc.seeds = parse_seeds(seeds);
            tc.force = train_force;
            tc.resume = resume;
            tc.stop_after = stop_after;
            tc.verbose = verbose;
            const auto s = cmd_train(tc);
            if (!s.completed) {
                std::cout << s.run_dir << " (stopped early; rerun with --resume)\n";
            } else {
                std::cout << s.run_dir << "\n";
                for (const auto& row : s.rows)
                    std::cout << "seed " << row.seed << ": accuracy " << row.test.accuracy << " macro-F1 "
                              << row.test.macro_f1 << "\n";
                std::cout << "mean macro-F1 " << s.mean.macro_f1 << " ± " << s.stddev.macro_f1 << "\n";
            }
        } else if (*ev) {
            ec.metric = parse_metric(metric);
            const auto j = cmd_eval(ec);
            if (eval_out.empty()) {
                std::cout << j.dump(2) << "\n";
            } else {
                std::ofstream out(eval_out);
                if (!out) throw DataError("cannot write " + eval_out);
                out << j.dump(2) << "\n";
            }
        } else if (*in) {
            const auto j = cmd_inspect(ic);
            std::cout << "wrote " << j.at("files").size() << " files to " << ic.dump_dir << "\n";
        } else if (*pl) {
            for (const auto& p : cmd_plot(plot_dir)) std::cout << p << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 0;
}
