#include <doctest.h>

#include <cmath>

#include "cpmt/errors.hpp"
#include "cpmt/grad_check.hpp"
#include "cpmt/metrics.hpp"
#include "cpmt/ops.hpp"
#include "cpmt/synth.hpp"
#include "cpmt/train.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace cpmt;
using testutil::max_abs_diff;
using testutil::randn;

namespace {

// Logits with softmax probability p on class 0 of two classes.
Tensor two_class_logits(double p) { return Tensor::vector({std::log(p), std::log(1.0 - p)}); }

struct TinyTask {
    SynthDataset data;
    std::vector<Example> train, valid;
    CPMTConfig cfg;
};

TinyTask tiny_task(std::size_t n, SynthTask task = SynthTask::cue) {
    SynthSpec s;
    s.task = task;
    s.n_fragments = n;
    s.T = 8;
    s.d_a = 3;
    s.d_v = 4;
    s.lag = 1;
    s.longrange_horizon = 2;
    s.cue_strength = 1.0;
    s.class_balance = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    s.n_groups = 5;
    TinyTask t;
    t.data = synth_fragments(s);
    t.cfg = testutil::tiny_config();
    t.cfg.ablations.no_llm = true;
    return t;
}

std::vector<Example> examples_of(const std::vector<Fragment>& frags, std::size_t begin, std::size_t end) {
    std::vector<Example> out;
    for (std::size_t i = begin; i < end; ++i) out.push_back({&frags[i], {}});
    return out;
}

}  // namespace

TEST_SUITE("train-eval") {

TEST_CASE("focal loss worked examples") {
    CHECK(focal_loss(Tensor::vector({50, -50}), 0, 2.0).item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(focal_loss(two_class_logits(0.5), 0, 0.0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(std::abs(focal_loss(two_class_logits(0.9), 0, 2.0).item() - 0.0010536) < 1e-6);
    CHECK_THROWS_AS(focal_loss(Tensor::vector({1, 2}), 2, 1.0), Error);
}

TEST_CASE("focal loss with gamma 0 is cross-entropy") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        auto z = randn({5}, rng, 4.0);
        const std::size_t t = rng.index(5);
        std::vector<double> zv(z.data().begin(), z.data().end());
        CHECK(std::abs(focal_loss(z, t, 0.0).item() - oracle::cross_entropy(zv, t)) < 1e-9);
    }
}

TEST_CASE("property: focal loss does not increase with p_t") {
    for (double gamma : {0.0, 0.5, 2.0, 10.0}) {
        double prev = INFINITY;
        for (int i = 1; i < 100; ++i) {
            const double v = focal_loss(two_class_logits(i / 100.0), 0, gamma).item();
            CHECK(v <= prev + 1e-15);
            prev = v;
        }
    }
}

TEST_CASE("focal loss log clamp keeps extreme logits finite") {
    auto v = focal_loss(Tensor::vector({0, 1e4}), 0, 0.0).item();
    CHECK(v == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("focal loss passes grad_check") {
    Rng rng(2);
    for (double gamma : {0.0, 1.0, 2.0, 10.0}) {
        auto z = randn({4}, rng, 1.0, true);
        auto r = grad_check([&] { return focal_loss(z, 1, gamma); }, {z});
        CAPTURE(gamma);
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("metrics hand example") {
    auto r = metrics({0, 0, 1, 2}, {0, 1, 1, 2}, 3);
    CHECK(r.accuracy == doctest::Approx(0.75).epsilon(1e-4));
    CHECK(r.macro_f1 == doctest::Approx(0.7778).epsilon(1e-4));
    CHECK(r.weighted_f1 == doctest::Approx(0.75).epsilon(1e-4));
    CHECK(r.confusion[0] == std::vector<std::size_t>{1, 1, 0});
    auto perfect = metrics({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.macro_f1 == 1.0);
    CHECK(perfect.weighted_f1 == 1.0);
}

TEST_CASE("absent class scores zero and still counts in macro F1") {
    auto r = metrics({0, 1, 0, 1}, {0, 1, 0, 1}, 3);
    CHECK(r.per_class_f1[2] == 0.0);
    CHECK(r.macro_f1 == doctest::Approx(2.0 / 3));
    CHECK_THROWS_AS(metrics({0, 3}, {0, 1}, 3), Error);
    CHECK_THROWS_AS(metrics({0, 1}, {0}, 3), Error);
}

TEST_CASE("metrics match the brute-force oracle exhaustively for n <= 4") {
    const std::size_t C = 3;
    for (std::size_t n = 1; n <= 4; ++n) {
        std::size_t total = 1;
        for (std::size_t i = 0; i < 2 * n; ++i) total *= C;
        for (std::size_t code = 0; code < total; ++code) {
            std::vector<std::size_t> y(n), p(n);
            std::size_t c = code;
            for (std::size_t i = 0; i < n; ++i, c /= C) y[i] = c % C;
            for (std::size_t i = 0; i < n; ++i, c /= C) p[i] = c % C;
            auto r = metrics(y, p, C);
            auto o = oracle::brute_force_scores(y, p, C);
            REQUIRE(r.confusion == o.confusion);
            REQUIRE(r.accuracy == doctest::Approx(o.accuracy).epsilon(1e-12));
            REQUIRE(r.macro_f1 == doctest::Approx(o.macro_f1).epsilon(1e-12));
            REQUIRE(r.weighted_f1 == doctest::Approx(o.weighted_f1).epsilon(1e-12));
        }
    }
}

TEST_CASE("property: scores are bounded and confusion rows match support") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.index(30);
        std::vector<std::size_t> y(n), p(n);
        for (std::size_t i = 0; i < n; ++i) y[i] = rng.index(4), p[i] = rng.index(4);
        auto r = metrics(y, p, 4);
        for (double v : {r.accuracy, r.macro_f1, r.weighted_f1}) CHECK((v >= 0.0 && v <= 1.0));
        for (std::size_t c = 0; c < 4; ++c) {
            std::size_t row = 0;
            for (auto x : r.confusion[c]) row += x;
            CHECK(row == static_cast<std::size_t>(std::count(y.begin(), y.end(), c)));
        }
    }
}

TEST_CASE("property: macro F1 is invariant to relabeling") {
    Rng rng(4);
    std::vector<std::size_t> perm = {2, 0, 1};
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::size_t> y(12), p(12), yp(12), pp(12);
        for (std::size_t i = 0; i < 12; ++i) {
            y[i] = rng.index(3), p[i] = rng.index(3);
            yp[i] = perm[y[i]], pp[i] = perm[p[i]];
        }
        CHECK(metrics(y, p, 3).macro_f1 == doctest::Approx(metrics(yp, pp, 3).macro_f1).epsilon(1e-12));
    }
}

TEST_CASE("eval report json round-trip") {
    auto r = metrics({0, 0, 1, 2}, {0, 1, 1, 2}, 3);
    auto back = EvalReport::from_json(r.to_json());
    CHECK(back.macro_f1 == r.macro_f1);
    CHECK(back.confusion == r.confusion);
    CHECK(back.per_class_f1 == r.per_class_f1);
}

TEST_CASE("paired bootstrap cases") {
    Rng rng(5);
    std::vector<std::size_t> y(50), perfect(50), wrong(50), random(50);
    for (std::size_t i = 0; i < 50; ++i) {
        y[i] = rng.index(3);
        perfect[i] = y[i];
        wrong[i] = (y[i] + 1) % 3;
        random[i] = rng.index(3);
    }
    auto same = paired_bootstrap(y, random, random, 3, Metric::macro_f1, 1000, 0.05, 1, 1);
    CHECK(same.p_value == 1.0);
    CHECK_FALSE(same.significant);
    auto dom = paired_bootstrap(y, perfect, wrong, 3, Metric::macro_f1, 1000, 0.05, 1, 1);
    CHECK(dom.p_value == 0.0);
    CHECK(dom.significant);
    auto bonf = paired_bootstrap(y, perfect, wrong, 3, Metric::accuracy, 200, 0.05, 3, 1);
    CHECK(bonf.threshold == doctest::Approx(0.05 / 3));
    auto again = paired_bootstrap(y, perfect, random, 3, Metric::weighted_f1, 300, 0.05, 1, 9);
    CHECK(again.p_value == paired_bootstrap(y, perfect, random, 3, Metric::weighted_f1, 300, 0.05, 1, 9).p_value);
    CHECK_THROWS_AS(paired_bootstrap(y, perfect, wrong, 3, Metric::accuracy, 50), Error);
}

TEST_CASE("dyad average") {
    auto a = metrics({0, 1, 2, 2}, {0, 1, 2, 2}, 3);
    auto b = metrics({0, 1, 2, 2}, {1, 1, 0, 2}, 3);
    auto one = dyad_average({a});
    CHECK(one.macro_f1 == a.macro_f1);
    auto avg = dyad_average({a, b});
    CHECK(avg.macro_f1 == doctest::Approx((a.macro_f1 + b.macro_f1) / 2));
    CHECK(avg.accuracy == doctest::Approx((a.accuracy + b.accuracy) / 2));
    CHECK(avg.confusion[2][2] == a.confusion[2][2] + b.confusion[2][2]);
    CHECK_THROWS_AS(dyad_average({a, metrics({0, 1}, {0, 1}, 2)}), Error);
    CHECK_THROWS_AS(dyad_average({}), Error);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    auto t = tiny_task(12);
    auto model = CPMTModel::init(t.cfg);
    std::vector<std::vector<double>> before;
    for (const auto& [n, p] : model.parameters()) before.emplace_back(p.data().begin(), p.data().end());
    TrainConfig tc;
    tc.learning_rate = 0.0;
    tc.weight_decay = 0.0;
    tc.epochs = 1;
    tc.batch_size = 4;
    train(model, examples_of(t.data.fragments, 0, 12), {}, tc);
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(max_abs_diff(params[i].second.data(), before[i]) == 0.0);
}

TEST_CASE("AdamW applies decoupled weight decay and clips the global norm") {
    auto w = Tensor::vector({1.0, -2.0}, true);
    ParamList params = {{"w", w}};
    AdamW opt(params, 0.1, 0.5);
    w.mutable_grad()[0] = 3.0;
    w.mutable_grad()[1] = 4.0;
    const double norm = opt.step(params, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    // First Adam step moves each coordinate by lr * sign(g) after bias correction.
    CHECK(w.at(0) == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0 - 0.1).epsilon(1e-6));
    CHECK(w.at(1) == doctest::Approx(-2.0 - 0.1 * 0.5 * -2.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("a tiny model overfits 20 fragments") {
    auto t = tiny_task(20);
    t.cfg.d_model = 8;
    auto model = CPMTModel::init(t.cfg);
    TrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.weight_decay = 0.0;
    tc.gamma = 0.0;
    tc.batch_size = 5;
    tc.epochs = 200;
    auto train_set = examples_of(t.data.fragments, 0, 20);
    TrainOptions opts;
    std::size_t reached = 0;
    opts.on_epoch = [&](const EpochLog& log) {
        if (reached == 0 && log.train_loss < 0.01) reached = log.epoch;
    };
    auto r = train(model, train_set, {}, tc, opts);
    CHECK(r.completed);
    CHECK(r.train_report.accuracy == 1.0);
    CHECK(evaluate(model, train_set).accuracy == 1.0);
}

TEST_CASE("same seed gives the same loss curve") {
    auto t = tiny_task(15);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 7;
    auto train_set = examples_of(t.data.fragments, 0, 10);
    auto valid_set = examples_of(t.data.fragments, 10, 15);
    auto m1 = CPMTModel::init(t.cfg);
    auto m2 = CPMTModel::init(t.cfg);
    auto r1 = train(m1, train_set, valid_set, tc);
    auto r2 = train(m2, train_set, valid_set, tc);
    REQUIRE(r1.curve.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) CHECK(r1.curve[e].train_loss == r2.curve[e].train_loss);
    CHECK(r1.best_epoch == r2.best_epoch);
}

TEST_CASE("resuming after an interruption matches an uninterrupted run") {
    testutil::TempDir dir("resume");
    auto t = tiny_task(15);
    t.cfg.dropout_rate = 0.1;
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 4;
    tc.seed = 3;
    auto train_set = examples_of(t.data.fragments, 0, 10);
    auto valid_set = examples_of(t.data.fragments, 10, 15);

    auto ref = CPMTModel::init(t.cfg);
    auto full = train(ref, train_set, valid_set, tc);

    TrainOptions opts;
    opts.checkpoint_dir = dir / "run";
    opts.stop_after = 2;
    auto part_model = CPMTModel::init(t.cfg);
    auto part = train(part_model, train_set, valid_set, tc, opts);
    CHECK_FALSE(part.completed);
    CHECK(part.curve.size() == 2);

    opts.stop_after = 0;
    auto resumed_model = CPMTModel::init(t.cfg);
    auto resumed = train(resumed_model, train_set, valid_set, tc, opts);
    CHECK(resumed.completed);
    REQUIRE(resumed.curve.size() == 4);
    for (std::size_t e = 0; e < 4; ++e) CHECK(resumed.curve[e].train_loss == full.curve[e].train_loss);
    CHECK(resumed.best_epoch == full.best_epoch);
    auto a = ref.parameters(), b = resumed_model.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(max_abs_diff(a[i].second.data(), b[i].second.data()) == 0.0);

    TrainConfig other = tc;
    other.learning_rate = 0.5;
    auto m = CPMTModel::init(t.cfg);
    CHECK_THROWS_AS(train(m, train_set, valid_set, other, opts), ConfigError);
}

TEST_CASE("invalid training settings") {
    TrainConfig tc;
    tc.gamma = -1;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    auto t = tiny_task(6);
    auto model = CPMTModel::init(t.cfg);
    CHECK_THROWS_AS(train(model, {}, {}, TrainConfig{}), DataError);
}

}
