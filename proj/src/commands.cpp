#include "cpmt/commands.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "cpmt/errors.hpp"
#include "cpmt/svg.hpp"
#include "cpmt/train.hpp"

namespace cpmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw FormatError(path.string() + " is not valid JSON");
    return j;
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

json split_json(const Split& s) {
    return {{"train_groups", s.train_groups}, {"valid_groups", s.valid_groups}, {"test_groups", s.test_groups}};
}

Split split_from_json(const json& j) {
    Split s;
    s.train_groups = j.at("train_groups").get<std::vector<std::string>>();
    s.valid_groups = j.at("valid_groups").get<std::vector<std::string>>();
    s.test_groups = j.at("test_groups").get<std::vector<std::string>>();
    return s;
}

json predictions_json(const std::vector<Example>& ex, const Predictions& p) {
    std::vector<std::string> ids;
    for (const auto& e : ex) ids.push_back(e.fragment->id);
    return {{"ids", ids}, {"y_true", p.y_true}, {"y_pred", p.y_pred}};
}

// Reasoning text per fragment, fetched once per command.
std::vector<std::optional<ReasoningSet>> fetch_reasoning(const Manifest& m, const std::vector<Fragment>& frags,
                                                         bool wanted) {
    std::vector<std::optional<ReasoningSet>> out(frags.size());
    if (!wanted) return out;
    bool any_context = false;
    for (const auto& f : frags) any_context = any_context || f.context.has_value();
    if (!any_context) return out;
    const std::string fixture = m.llm_fixture.empty() ? "" : m.resolve(m.llm_fixture);
    auto client = make_llm_client(fixture);
    for (std::size_t i = 0; i < frags.size(); ++i)
        if (frags[i].context) out[i] = collect_reasoning(*client, *frags[i].context);
    return out;
}

std::vector<Example> make_examples(const CPMTModel& model, const std::vector<Fragment>& frags,
                                   const std::vector<std::optional<ReasoningSet>>& reasoning,
                                   const std::vector<std::size_t>& indices) {
    std::vector<Example> out;
    for (auto i : indices) {
        Example e{&frags[i], {}};
        if (reasoning[i]) e.verbal = model.verbal_tokens(*reasoning[i]);
        out.push_back(std::move(e));
    }
    return out;
}

void fit_to_manifest(CPMTConfig& cfg, const Manifest& m) {
    for (auto mod : cfg.modalities) {
        auto it = m.modality_dims.find(mod);
        if (it == m.modality_dims.end())
            throw ConfigError("configured modality " + to_string(mod) + " is not present in the manifest");
        cfg.input_dims[mod] = it->second;
    }
    for (auto it = cfg.input_dims.begin(); it != cfg.input_dims.end();) {
        bool used = false;
        for (auto mod : cfg.modalities) used = used || mod == it->first;
        it = used ? std::next(it) : cfg.input_dims.erase(it);
    }
    cfg.num_classes = m.num_classes();
}

EvalReport score_stats(const std::vector<EvalReport>& rs, bool stddev) {
    EvalReport mean = dyad_average(rs);
    if (!stddev) return mean;
    EvalReport sd = mean;
    const double n = static_cast<double>(rs.size());
    auto sdev = [&](auto get) {
        if (rs.size() < 2) return 0.0;
        double m = 0.0, s = 0.0;
        for (const auto& r : rs) m += get(r) / n;
        for (const auto& r : rs) s += (get(r) - m) * (get(r) - m);
        return std::sqrt(s / (n - 1.0));
    };
    sd.accuracy = sdev([](const EvalReport& r) { return r.accuracy; });
    sd.weighted_f1 = sdev([](const EvalReport& r) { return r.weighted_f1; });
    sd.macro_f1 = sdev([](const EvalReport& r) { return r.macro_f1; });
    for (std::size_t c = 0; c < sd.per_class_f1.size(); ++c)
        sd.per_class_f1[c] = sdev([c](const EvalReport& r) { return r.per_class_f1[c]; });
    return sd;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

GenerateResult cmd_generate(const SynthSpec& spec, const std::string& out_dir, bool force) {
    spec.validate();
    if (non_empty_dir(out_dir)) {
        if (!force) throw ConfigError("output directory " + out_dir + " is not empty; pass --force to overwrite");
        fs::remove_all(out_dir);
    }
    const Manifest m = synth_generate(spec, out_dir);
    GenerateResult r;
    r.manifest_path = (fs::path(out_dir) / "manifest.json").string();
    r.class_counts.assign(m.num_classes(), 0);
    for (const auto& f : m.fragments) ++r.class_counts[f.label];
    return r;
}

TrainSummary cmd_train(const TrainCommand& cmd) {
    RunConfig cfg = cmd.config;
    apply(cmd.ablation, cfg.model.ablations);
    if (cmd.seeds) cfg.seeds = *cmd.seeds;
    if (cfg.manifest.empty()) throw ConfigError("no manifest given (set \"manifest\" in the config)");
    const Manifest manifest = Manifest::load(cfg.manifest);
    manifest.validate(true);
    fit_to_manifest(cfg.model, manifest);
    cfg.validate();

    const fs::path run_dir(cfg.output_dir);
    const json effective = to_json(cfg);
    if (non_empty_dir(run_dir)) {
        if (cmd.resume) {
            if (!fs::exists(run_dir / "config.json") || read_json(run_dir / "config.json") != effective)
                throw ConfigError("cannot resume " + run_dir.string() + ": effective config differs");
        } else if (cmd.force) {
            fs::remove_all(run_dir);
        } else {
            throw ConfigError("run directory " + run_dir.string() + " is not empty; use --resume or --force");
        }
    }
    fs::create_directories(run_dir);
    write_json(run_dir / "config.json", effective);

    const std::vector<Fragment> frags = load_all(manifest);
    const auto reasoning = fetch_reasoning(manifest, frags, !cfg.model.ablations.no_llm);
    const auto groups = manifest.groups();
    const std::size_t total_folds = fold_count(groups.size(), cfg.test_frac);
    const std::size_t n_folds = cfg.folds == 0 ? total_folds : std::min(cfg.folds, total_folds);

    struct Task {
        std::uint64_t seed;
        std::size_t fold;
    };
    std::vector<Task> tasks;
    for (auto s : cfg.seeds)
        for (std::size_t f = 0; f < n_folds; ++f) tasks.push_back({s, f});
    std::vector<std::optional<EvalReport>> results(tasks.size());

    std::mutex log_mutex;
    auto run_task = [&](std::size_t ti) {
        const Task& t = tasks[ti];
        const fs::path dir = run_dir / ("seed_" + std::to_string(t.seed)) / ("fold_" + std::to_string(t.fold));
        fs::create_directories(dir);
        CPMTConfig mcfg = cfg.model;
        mcfg.seed = t.seed;
        TrainConfig tcfg = cfg.train;
        tcfg.seed = t.seed;
        CPMTModel model = CPMTModel::init(mcfg);
        const Split split = group_fold(groups, t.fold, cfg.test_frac, cfg.valid_frac, cfg.split_seed);
        write_json(dir / "split.json", split_json(split));
        const SplitIndices idx = split_indices(manifest, split);
        const auto train_set = make_examples(model, frags, reasoning, idx.train);
        const auto valid_set = make_examples(model, frags, reasoning, idx.valid);
        const auto test_set = make_examples(model, frags, reasoning, idx.test);
        TrainOptions opts;
        opts.checkpoint_dir = dir.string();
        opts.resume = true;
        opts.stop_after = cmd.stop_after;
        if (cmd.verbose)
            opts.on_epoch = [&](const EpochLog& e) {
                std::lock_guard lock(log_mutex);
                std::cerr << "seed " << t.seed << " fold " << t.fold << " epoch " << e.epoch << " loss "
                          << fmt(e.train_loss) << " valid macro-F1 " << fmt(e.valid_macro_f1) << "\n";
            };
        const TrainResult tr = train(model, train_set, valid_set, tcfg, opts);
        json curve = json::array();
        for (const auto& e : tr.curve) curve.push_back(e.to_json());
        write_json(dir / "loss_curve.json", curve);
        if (!tr.completed) return;
        const Predictions p = predict(model, test_set);
        const EvalReport test = metrics(p.y_true, p.y_pred, mcfg.num_classes);
        json report = {{"seed", t.seed},
                       {"fold", t.fold},
                       {"best_epoch", tr.best_epoch},
                       {"best_valid_macro_f1", tr.best_valid_macro_f1},
                       {"final_train_loss", tr.final_train_loss},
                       {"train", tr.train_report.to_json()},
                       {"test", test.to_json()}};
        write_json(dir / "report.json", report);
        write_json(dir / "predictions.json", predictions_json(test_set, p));
        results[ti] = test;
    };

    const std::size_t jobs = std::min(cfg.jobs, tasks.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex fail_mutex;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < jobs; ++w)
            pool.emplace_back([&] {
                for (std::size_t i; (i = next++) < tasks.size();) {
                    try {
                        run_task(i);
                    } catch (...) {
                        std::lock_guard lock(fail_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    TrainSummary summary;
    summary.run_dir = run_dir.string();
    for (const auto& r : results) summary.completed = summary.completed && r.has_value();
    if (!summary.completed) return summary;

    std::size_t ti = 0;
    std::vector<EvalReport> per_seed;
    for (auto s : cfg.seeds) {
        std::vector<EvalReport> folds;
        for (std::size_t f = 0; f < n_folds; ++f, ++ti) folds.push_back(*results[ti]);
        summary.rows.push_back({s, score_stats(folds, false)});
        per_seed.push_back(summary.rows.back().test);
    }
    summary.mean = score_stats(per_seed, false);
    summary.stddev = score_stats(per_seed, true);

    std::ofstream csv(run_dir / "summary.csv");
    csv << "seed,accuracy,weighted_f1,macro_f1";
    for (const auto& c : manifest.class_names) csv << ",f1_" << c;
    csv << "\n";
    for (const auto& row : summary.rows) {
        csv << row.seed << "," << fmt(row.test.accuracy) << "," << fmt(row.test.weighted_f1) << ","
            << fmt(row.test.macro_f1);
        for (double v : row.test.per_class_f1) csv << "," << fmt(v);
        csv << "\n";
    }
    auto pm = [](double m, double s) { return fmt(m) + " ± " + fmt(s); };
    csv << "mean±std," << pm(summary.mean.accuracy, summary.stddev.accuracy) << ","
        << pm(summary.mean.weighted_f1, summary.stddev.weighted_f1) << ","
        << pm(summary.mean.macro_f1, summary.stddev.macro_f1);
    for (std::size_t c = 0; c < summary.mean.per_class_f1.size(); ++c)
        csv << "," << pm(summary.mean.per_class_f1[c], summary.stddev.per_class_f1[c]);
    csv << "\n";

    json rows = json::array();
    for (const auto& row : summary.rows) rows.push_back({{"seed", row.seed}, {"test", row.test.to_json()}});
    write_json(run_dir / "summary.json", {{"class_names", manifest.class_names},
                                          {"ablation", to_string(cmd.ablation)},
                                          {"folds", n_folds},
                                          {"rows", rows},
                                          {"mean", summary.mean.to_json()},
                                          {"std", summary.stddev.to_json()}});
    return summary;
}

json cmd_eval(const EvalCommand& cmd) {
    if (!fs::exists(cmd.checkpoint)) throw DataError("checkpoint file not found: " + cmd.checkpoint);
    const CPMTModel model = load_model(cmd.checkpoint);
    const Manifest manifest = Manifest::load(cmd.manifest);
    if (manifest.num_classes() != model.cfg.num_classes)
        throw DataError("manifest has " + std::to_string(manifest.num_classes()) + " classes, checkpoint expects " +
                        std::to_string(model.cfg.num_classes));
    std::vector<std::size_t> indices;
    if (cmd.split == "all") {
        for (std::size_t i = 0; i < manifest.fragments.size(); ++i) indices.push_back(i);
    } else {
        if (cmd.split_file.empty()) throw ConfigError("--split " + cmd.split + " needs --split-file");
        const SplitIndices si = split_indices(manifest, split_from_json(read_json(cmd.split_file)));
        if (cmd.split == "train") indices = si.train;
        else if (cmd.split == "valid") indices = si.valid;
        else if (cmd.split == "test") indices = si.test;
        else throw ConfigError("unknown split '" + cmd.split + "' (expected all, train, valid or test)");
    }
    if (indices.empty()) throw DataError("split '" + cmd.split + "' selects no fragments");
    std::vector<Fragment> frags = load_fragments(manifest, indices);
    const auto reasoning = fetch_reasoning(manifest, frags, !model.cfg.ablations.no_llm);
    std::vector<std::size_t> all(frags.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto examples = make_examples(model, frags, reasoning, all);
    const Predictions p = predict(model, examples);
    const EvalReport report = metrics(p.y_true, p.y_pred, model.cfg.num_classes);
    json out = {{"checkpoint", cmd.checkpoint}, {"split", cmd.split}, {"report", report.to_json()}};
    if (!cmd.predictions_out.empty()) write_json(cmd.predictions_out, predictions_json(examples, p));
    if (!cmd.bootstrap.empty()) {
        const json other = read_json(cmd.bootstrap);
        const auto ids = other.at("ids").get<std::vector<std::string>>();
        const auto preds = other.at("y_pred").get<std::vector<std::size_t>>();
        if (ids.size() != preds.size()) throw FormatError(cmd.bootstrap + ": ids and y_pred differ in length");
        std::map<std::string, std::size_t> by_id;
        for (std::size_t i = 0; i < ids.size(); ++i) by_id[ids[i]] = preds[i];
        std::vector<std::size_t> other_pred;
        for (const auto& e : examples) {
            auto it = by_id.find(e.fragment->id);
            if (it == by_id.end()) throw DataError(cmd.bootstrap + " has no prediction for fragment " + e.fragment->id);
            other_pred.push_back(it->second);
        }
        const auto b = paired_bootstrap(p.y_true, p.y_pred, other_pred, model.cfg.num_classes, cmd.metric,
                                        cmd.bootstrap_samples, cmd.alpha, cmd.comparisons, cmd.seed);
        out["bootstrap"] = {{"against", cmd.bootstrap}, {"p_value", b.p_value},   {"threshold", b.threshold},
                            {"significant", b.significant}, {"B", cmd.bootstrap_samples}, {"comparisons", cmd.comparisons}};
    }
    return out;
}

std::string slot_type(double self_weight) {
    if (self_weight > 0.9) return "type-1 (self-focused)";
    if (self_weight < 0.1) return "type-3 (token-focused)";
    return "type-2 (partial)";
}

namespace {

void write_matrix(const fs::path& base, const std::vector<double>& v, std::size_t rows, std::size_t cols,
                  const std::vector<std::string>& header, const std::string& title, json& files) {
    std::ofstream csv(base.string() + ".csv");
    if (!csv) throw DataError("cannot write " + base.string() + ".csv");
    for (std::size_t j = 0; j < header.size(); ++j) csv << (j ? "," : "") << header[j];
    if (!header.empty()) csv << "\n";
    csv.precision(9);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) csv << (j ? "," : "") << v[i * cols + j];
        csv << "\n";
    }
    svg::write_file(base.string() + ".svg", svg::heatmap(v, rows, cols, title));
    files.push_back(base.filename().string() + ".csv");
    files.push_back(base.filename().string() + ".svg");
}

}  // namespace

json cmd_inspect(const InspectCommand& cmd) {
    if (!fs::exists(cmd.checkpoint)) throw DataError("checkpoint file not found: " + cmd.checkpoint);
    const CPMTModel model = load_model(cmd.checkpoint);
    const Manifest manifest = Manifest::load(cmd.manifest);
    std::size_t index = manifest.fragments.size();
    for (std::size_t i = 0; i < manifest.fragments.size(); ++i)
        if (manifest.fragments[i].id == cmd.fragment) index = i;
    if (index == manifest.fragments.size()) throw LookupError("fragment " + cmd.fragment + " not in manifest");
    const std::vector<Fragment> frags = {load_fragment(manifest, index)};
    const auto reasoning = fetch_reasoning(manifest, frags, !model.cfg.ablations.no_llm);
    const auto ex = make_examples(model, frags, reasoning, {0});

    ForwardTrace trace;
    {
        NoGradGuard guard;
        model.forward(ex[0].fragment->persons, ex[0].verbal, ForwardContext{}, &trace);
    }

    // Validate the crossmodal selection before writing anything.
    const auto& mods = model.cfg.modalities;
    std::vector<std::string> directions;
    if (mods.size() == 2) {
        directions = {to_string(mods[0]) + "->" + to_string(mods[1]), to_string(mods[1]) + "->" + to_string(mods[0])};
    } else {
        directions = {to_string(mods[0]) + "->" + to_string(mods[0])};
    }
    const std::size_t n_layers = model.cfg.crossmodal_layers;
    if (n_layers > 0 && cmd.layer >= n_layers)
        throw ConfigError("layer " + std::to_string(cmd.layer) + " out of range; valid layers: 0.." +
                          std::to_string(n_layers - 1));
    if (!cmd.direction.empty() && std::find(directions.begin(), directions.end(), cmd.direction) == directions.end()) {
        std::string valid;
        for (const auto& d : directions) valid += (valid.empty() ? "" : ", ") + d;
        throw ConfigError("unknown crossmodal direction '" + cmd.direction + "'; valid: " + valid);
    }

    const fs::path dir(cmd.dump_dir);
    fs::create_directories(dir);
    json files = json::array();
    json steps = json::array();
    for (std::size_t s = 0; s < trace.memory.writes.size(); ++s) {
        const auto& w = trace.memory.writes[s];
        std::vector<std::string> header = {"self"};
        for (std::size_t j = 0; j < w.n_tokens; ++j) header.push_back("token" + std::to_string(j));
        write_matrix(dir / ("memory_write_step" + std::to_string(s)), w.weights, w.k, 1 + w.n_tokens, header,
                     "memory write, step " + std::to_string(s), files);
        json slots = json::array();
        for (std::size_t i = 0; i < w.k; ++i) {
            const double self = w.weights[i * (1 + w.n_tokens)];
            slots.push_back({{"slot", i}, {"self_weight", self}, {"type", slot_type(self)}});
        }
        steps.push_back({{"step", s}, {"slots", slots}});
    }

    const std::size_t T = trace.boundaries.empty() ? 0 : model.sequence_length(ex[0].fragment->persons);
    for (const auto& [person, ft] : trace.fusion) {
        const std::vector<const std::vector<std::vector<double>>*> banks = {&ft.to_second, &ft.to_first};
        for (std::size_t d = 0; d < directions.size(); ++d) {
            if (!cmd.direction.empty() && cmd.direction != directions[d]) continue;
            const auto& layers = *banks[d];
            if (cmd.layer >= layers.size()) continue;
            std::string name = directions[d];
            std::replace(name.begin(), name.end(), '>', '_');
            name.erase(std::remove(name.begin(), name.end(), '-'), name.end());
            write_matrix(dir / ("crossmodal_" + person + "_" + name + "_layer" + std::to_string(cmd.layer)),
                         layers[cmd.layer], T, T, {}, "crossmodal " + directions[d] + " (" + person + ")", files);
        }
    }
    for (std::size_t d = 0; d < trace.cross_person.directions.size(); ++d) {
        const auto& layers = trace.cross_person.weights[d];
        for (std::size_t l = 0; l < layers.size(); ++l)
            write_matrix(dir / ("cpa_" + to_string(trace.cross_person.directions[d]) + "_layer" + std::to_string(l)),
                         layers[l], T, T, {}, "cross-person " + to_string(trace.cross_person.directions[d]), files);
    }
    json sidecar = {{"fragment", cmd.fragment},
                    {"label", ex[0].fragment->label},
                    {"segment_boundaries", trace.boundaries},
                    {"memory_steps", steps},
                    {"files", files}};
    write_json(dir / "slots.json", sidecar);
    return sidecar;
}

std::vector<std::string> cmd_plot(const std::string& run_dir) {
    const fs::path dir(run_dir);
    if (!fs::is_directory(dir)) throw DataError("run directory not found: " + run_dir);
    std::vector<svg::Series> loss;
    std::vector<fs::path> curves;
    for (const auto& seed : fs::directory_iterator(dir)) {
        if (!seed.is_directory() || seed.path().filename().string().rfind("seed_", 0) != 0) continue;
        for (const auto& fold : fs::directory_iterator(seed.path()))
            if (fs::exists(fold.path() / "loss_curve.json")) curves.push_back(fold.path() / "loss_curve.json");
    }
    std::sort(curves.begin(), curves.end());
    if (curves.empty() && !fs::exists(dir / "summary.json"))
        throw DataError("run directory " + run_dir + " holds no training results");
    std::vector<std::string> written;
    if (!curves.empty()) {
        for (const auto& c : curves) {
            svg::Series s;
            s.name = c.parent_path().parent_path().filename().string() + "/" + c.parent_path().filename().string();
            for (const auto& e : read_json(c)) s.y.push_back(e.at("train_loss").get<double>());
            if (!s.y.empty()) loss.push_back(std::move(s));
        }
        if (!loss.empty()) {
            svg::write_file((dir / "loss_curve.svg").string(), svg::line_chart(loss, "training loss", "epoch", "loss"));
            written.push_back((dir / "loss_curve.svg").string());
        }
    }
    if (fs::exists(dir / "summary.json")) {
        const json summary = read_json(dir / "summary.json");
        const auto names = summary.at("class_names").get<std::vector<std::string>>();
        const auto f1 = summary.at("mean").at("per_class_f1").get<std::vector<double>>();
        std::ofstream csv(dir / "per_class_f1.csv");
        csv << "class,f1\n";
        csv.precision(9);
        for (std::size_t c = 0; c < names.size(); ++c) csv << names[c] << "," << f1[c] << "\n";
        svg::write_file((dir / "per_class_f1.svg").string(), svg::bar_chart(names, f1, "per-class F1 (mean over seeds)"));
        written.push_back((dir / "per_class_f1.csv").string());
        written.push_back((dir / "per_class_f1.svg").string());
    }
    return written;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const MaskError*>(&e)) return 4;
    if (dynamic_cast<const Error*>(&e)) return 3;
    return 1;
}

}  // namespace cpmt
