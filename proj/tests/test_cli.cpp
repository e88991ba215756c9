#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <sys/wait.h>

#include "cpmt/commands.hpp"
#include "cpmt/errors.hpp"
#include "cpmt/model.hpp"
#include "helpers.hpp"

using namespace cpmt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const std::string& path) {
    std::ifstream in(path);
    return json::parse(in);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SynthSpec small_spec() {
    SynthSpec s;
    s.task = SynthTask::verbal;
    s.n_fragments = 40;
    s.T = 8;
    s.d_a = 3;
    s.d_v = 4;
    s.lag = 1;
    s.longrange_horizon = 2;
    s.n_groups = 10;
    s.cue_strength = 1.0;
    return s;
}

RunConfig small_run(const std::string& manifest, const std::string& out) {
    RunConfig rc;
    rc.model = testutil::tiny_config();
    rc.train.epochs = 2;
    rc.train.batch_size = 8;
    rc.manifest = manifest;
    rc.output_dir = out;
    return rc;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CPMT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// One trained run shared by the tests below.
struct TrainedRun {
    testutil::TempDir dir{"cli_run"};
    std::string manifest;
    TrainSummary summary;

    TrainedRun() {
        manifest = cmd_generate(small_spec(), dir / "data", false).manifest_path;
        TrainCommand tc;
        tc.config = small_run(manifest, dir / "run");
        tc.seeds = std::vector<std::uint64_t>{1, 2, 3};
        tc.ablation = Ablation::no_memory;
        summary = cmd_train(tc);
    }
};

TrainedRun& trained() {
    static TrainedRun run;
    return run;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("generate writes the requested dataset and refuses to overwrite") {
    testutil::TempDir dir("cli_gen");
    auto r = cmd_generate(small_spec(), dir / "d", false);
    CHECK(fs::exists(r.manifest_path));
    CHECK(Manifest::load(r.manifest_path).fragments.size() == 40);
    std::size_t total = 0;
    for (auto c : r.class_counts) total += c;
    CHECK(total == 40);
    CHECK_THROWS_AS(cmd_generate(small_spec(), dir / "d", false), ConfigError);
    CHECK_NOTHROW(cmd_generate(small_spec(), dir / "d", true));
}

TEST_CASE("generate balance option") {
    testutil::TempDir dir("cli_bal");
    auto s = small_spec();
    s.task = SynthTask::cue;
    s.n_fragments = 1000;
    s.T = 4;
    s.class_balance = parse_balance("0.03,0.27,0.70");
    auto r = cmd_generate(s, dir / "d", false);
    const double target[3] = {0.03, 0.27, 0.70};
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(r.class_counts[c] / 1000.0 - target[c]) <= 0.02);
}

TEST_CASE("train writes per-seed rows, a mean row and the echoed ablation") {
    auto& run = trained();
    CHECK(run.summary.completed);
    CHECK(run.summary.rows.size() == 3);
    auto csv = read_text(run.dir / "run/summary.csv");
    std::size_t lines = 0;
    for (char c : csv) lines += c == '\n';
    CHECK(lines >= 5);  // header, three seeds, mean
    CHECK(csv.find("mean±std") != std::string::npos);
    auto cfg = read_json(run.dir / "run/config.json");
    CHECK(cfg["model"]["ablations"]["no_memory"] == true);
    CHECK(cfg["seeds"] == json::array({1, 2, 3}));
    for (const char* f : {"last.ckpt", "best.ckpt", "split.json", "loss_curve.json", "report.json", "predictions.json"})
        CHECK(fs::exists(run.dir / (std::string("run/seed_2/fold_0/") + f)));
}

TEST_CASE("a non-empty run directory needs --force or --resume") {
    auto& run = trained();
    TrainCommand tc;
    tc.config = small_run(run.manifest, run.dir / "run");
    CHECK_THROWS_AS(cmd_train(tc), ConfigError);
    tc.resume = true;
    CHECK_THROWS_AS(cmd_train(tc), ConfigError);  // config differs: no ablation, seed list
}

TEST_CASE("eval on the train split reproduces the logged train metrics") {
    auto& run = trained();
    const std::string fold = run.dir / "run/seed_1/fold_0";
    EvalCommand ec;
    ec.checkpoint = fold + "/best.ckpt";
    ec.manifest = run.manifest;
    ec.split_file = fold + "/split.json";
    ec.split = "train";
    auto out = cmd_eval(ec);
    auto logged = read_json(fold + "/report.json")["train"];
    for (const char* k : {"accuracy", "macro_f1", "weighted_f1"})
        CHECK(std::abs(out["report"][k].get<double>() - logged[k].get<double>()) < 1e-6);
}

TEST_CASE("eval on the test split matches the stored predictions and bootstrap against itself") {
    auto& run = trained();
    const std::string fold = run.dir / "run/seed_1/fold_0";
    EvalCommand ec;
    ec.checkpoint = fold + "/best.ckpt";
    ec.manifest = run.manifest;
    ec.split_file = fold + "/split.json";
    ec.split = "test";
    ec.bootstrap = fold + "/predictions.json";
    ec.predictions_out = run.dir / "preds_again.json";
    auto out = cmd_eval(ec);
    CHECK(out["bootstrap"]["significant"] == false);
    CHECK(out["bootstrap"]["p_value"].get<double>() >= 0.5);
    CHECK(read_json(run.dir / "preds_again.json")["y_pred"] == read_json(fold + "/predictions.json")["y_pred"]);
}

TEST_CASE("missing checkpoint is a data error") {
    auto& run = trained();
    EvalCommand ec;
    ec.checkpoint = run.dir / "nope.ckpt";
    ec.manifest = run.manifest;
    try {
        cmd_eval(ec);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("not found") != std::string::npos);
        CHECK(exit_code_for(e) == 3);
    }
}

TEST_CASE("inspect dumps memory, crossmodal and cross-person matrices") {
    auto& run = trained();
    InspectCommand ic;
    ic.checkpoint = run.dir / "run/seed_1/fold_0/best.ckpt";
    ic.manifest = run.manifest;
    ic.fragment = "f00003";
    ic.dump_dir = run.dir / "dump_noread";
    CHECK_NOTHROW(cmd_inspect(ic));

    // An untrained model with memory enabled.
    testutil::TempDir dir("cli_inspect");
    auto cfg = testutil::tiny_config();
    cfg.input_dims = {{Modality::audio, 3}, {Modality::video, 4}};
    save_model(dir / "untrained.ckpt", CPMTModel::init(cfg));
    ic.checkpoint = dir / "untrained.ckpt";
    ic.dump_dir = dir / "dump";
    auto side = cmd_inspect(ic);
    CHECK(side["memory_steps"].size() == cfg.K_segments);
    for (const auto& step : side["memory_steps"])
        for (const auto& slot : step["slots"]) {
            const double w = slot["self_weight"];
            CHECK((w >= 0.0 && w <= 1.0));
            CHECK(slot["type"] == slot_type(w));
        }
    auto csv = read_text(dir / "dump/memory_write_step0.csv");
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    CHECK(line.rfind("self", 0) == 0);
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        std::stringstream ss(line);
        std::string cell;
        double s = 0;
        while (std::getline(ss, cell, ',')) s += std::stod(cell);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        ++rows;
    }
    CHECK(rows == cfg.k_slots);
    CHECK(fs::exists(dir / "dump/slots.json"));
    std::string listed;
    for (const auto& f : side["files"]) {
        const std::string name = f.get<std::string>();
        CHECK_MESSAGE(fs::exists(fs::path(dir / "dump") / fs::path(name).filename()), name);
        listed += fs::path(name).filename().string() + " ";
    }
    for (const char* part : {"memory_write_step0.svg", "_audio_video_layer0.csv", "_video_audio_layer0.svg",
                             "cpa_other_to_self_layer0.csv"})
        CHECK_MESSAGE(listed.find(part) != std::string::npos, part);
    CHECK(read_text(dir / "dump/memory_write_step0.svg").rfind("<svg", 0) == 0);

    ic.layer = 5;
    CHECK_THROWS_WITH_AS(cmd_inspect(ic), doctest::Contains("valid layers"), ConfigError);
    ic.layer = 0;
    ic.direction = "audio->text";
    CHECK_THROWS_WITH_AS(cmd_inspect(ic), doctest::Contains("video->audio"), ConfigError);
    ic.direction = "";
    ic.fragment = "zzz";
    CHECK_THROWS_AS(cmd_inspect(ic), LookupError);
}

TEST_CASE("slot types") {
    CHECK(slot_type(0.95) == "type-1 (self-focused)");
    CHECK(slot_type(0.5) == "type-2 (partial)");
    CHECK(slot_type(0.02) == "type-3 (token-focused)");
}

TEST_CASE("plot writes figures whose bar values match the CSV") {
    auto& run = trained();
    auto files = cmd_plot(run.dir / "run");
    CHECK(fs::exists(run.dir / "run/loss_curve.svg"));
    CHECK(files.size() == 3);
    auto csv = read_text(run.dir / "run/per_class_f1.csv");
    auto svg = read_text(run.dir / "run/per_class_f1.svg");
    std::vector<double> from_csv, from_svg;
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) from_csv.push_back(std::stod(line.substr(line.find(',') + 1)));
    std::regex attr("data-value=\"([^\"]+)\"");
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), attr); it != std::sregex_iterator(); ++it)
        from_svg.push_back(std::stod((*it)[1]));
    REQUIRE(from_csv.size() == 3);
    REQUIRE(from_svg.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(from_csv[i] == doctest::Approx(from_svg[i]).epsilon(1e-6));

    testutil::TempDir empty("cli_empty");
    CHECK_THROWS_AS(cmd_plot(empty.str()), DataError);
    CHECK_THROWS_AS(cmd_plot(empty / "missing"), DataError);
}

TEST_CASE("config overrides and unknown keys") {
    json j = to_json(RunConfig{});
    apply_override(j, "train.epochs=7");
    apply_override(j, "model.concat_policy=child_coordinated");
    apply_override(j, "seeds=[4,5]");
    auto rc = run_config_from_json(j);
    CHECK(rc.train.epochs == 7);
    CHECK(rc.model.concat_policy == ConcatMode::child_coordinated);
    CHECK(rc.seeds == std::vector<std::uint64_t>{4, 5});
    json bad = to_json(RunConfig{});
    bad["model"]["d_modle"] = 4;
    CHECK_THROWS_WITH_AS(run_config_from_json(bad), doctest::Contains("d_modle"), ConfigError);
    json top = to_json(RunConfig{});
    top["extra"] = 1;
    CHECK_THROWS_AS(run_config_from_json(top), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST_CASE("dataset presets") {
    auto dami = preset("dami"), mpii = preset("mpii"), boss = preset("boss");
    CHECK(dami.train.batch_size == 48);
    CHECK(mpii.train.batch_size == 48);
    CHECK(boss.train.batch_size == 32);
    CHECK(dami.train.learning_rate == 3e-3);
    CHECK(mpii.train.learning_rate == 1e-3);
    CHECK(boss.train.learning_rate == 2e-3);
    CHECK(dami.model.k_slots == 128);
    CHECK(mpii.model.k_slots == 256);
    CHECK(boss.model.k_slots == 256);
    CHECK(dami.train.epochs == 20);
    CHECK(mpii.train.epochs == 15);
    CHECK(boss.train.epochs == 15);
    for (auto* p : {&dami, &mpii, &boss}) CHECK(p->train.gamma == 10.0);
    CHECK_THROWS_AS(preset("imagenet"), ConfigError);
}

TEST_CASE("the echoed config reproduces a run") {
    auto& run = trained();
    auto echoed = run_config_from_json(read_json(run.dir / "run/config.json"));
    echoed.output_dir = run.dir / "rerun";
    TrainCommand tc;
    tc.config = echoed;
    auto again = cmd_train(tc);
    REQUIRE(again.rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(again.rows[i].test.macro_f1 == run.summary.rows[i].test.macro_f1);
    auto a = read_json(run.dir / "run/seed_3/fold_0/report.json"), b = read_json(run.dir / "rerun/seed_3/fold_0/report.json");
    CHECK(a["final_train_loss"] == b["final_train_loss"]);
}

TEST_CASE("interrupted training resumes to the same result") {
    auto& run = trained();
    TrainCommand tc;
    tc.config = small_run(run.manifest, run.dir / "interrupted");
    tc.seeds = std::vector<std::uint64_t>{2};
    tc.ablation = Ablation::no_memory;
    tc.config.seeds = {1, 2, 3};
    tc.stop_after = 1;
    auto partial = cmd_train(tc);
    CHECK_FALSE(partial.completed);
    tc.stop_after = 0;
    tc.resume = true;
    auto done = cmd_train(tc);
    CHECK(done.completed);
    auto a = read_json(run.dir / "interrupted/seed_2/fold_0/report.json");
    auto b = read_json(run.dir / "run/seed_2/fold_0/report.json");
    CHECK(a["final_train_loss"] == b["final_train_loss"]);
    CHECK(a["test"]["macro_f1"] == b["test"]["macro_f1"]);
}

TEST_CASE("command-line exit codes") {
    testutil::TempDir dir("cli_exit");
    CHECK(run_cli("generate --task cue --n 30 --T 6 --lag 1 --horizon 2 --groups 5 --out " + (dir / "d")) == 0);
    CHECK(run_cli("generate --task cue --n 30 --T 6 --out " + (dir / "d")) == 2);
    CHECK(run_cli("generate --task nonsense --out " + (dir / "x")) == 2);
    CHECK(run_cli("generate --n 5 --T 4 --lag 9 --out " + (dir / "y")) == 3);
    CHECK(run_cli("eval --checkpoint " + (dir / "none.ckpt") + " --manifest " + (dir / "d")) == 3);
    CHECK(run_cli("plot " + (dir / "empty")) == 3);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("train --manifest " + (dir / "d") + " --out " + (dir / "r") +
                  " --set model.d_model=4 --set model.num_heads=2 --set model.crossmodal_layers=1"
                  " --set model.cpa_layers=1 --set model.k_slots=2 --set model.K_segments=2"
                  " --set model.behavior_dim=4 --set train.epochs=1 --set train.batch_size=8") == 0);
    CHECK(fs::exists(dir / "r/summary.csv"));
    CHECK(run_cli("train --manifest " + (dir / "d") + " --out " + (dir / "r2") + " --set model.bogus=1") == 2);
    CHECK(run_cli("plot " + (dir / "r")) == 0);
}

}
