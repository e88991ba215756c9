#include <doctest.h>

#include <cmath>

#include "cpmt/errors.hpp"
#include "cpmt/grad_check.hpp"
#include "cpmt/ops.hpp"
#include "cpmt/slot_memory.hpp"
#include "helpers.hpp"

using namespace cpmt;
using testutil::max_abs_diff;
using testutil::randn;

namespace {

AttentionParams identity_params(std::size_t d) {
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    AttentionParams p;
    p.w_q = Tensor::from({d, d}, eye);
    p.w_k = Tensor::from({d, d}, eye);
    p.w_v = Tensor::from({d, d}, eye);
    p.w_o = Tensor::from({d, d}, eye);
    p.num_heads = 1;
    return p;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

double max_norm_error(const Tensor& slots) {
    double worst = 0;
    for (std::size_t i = 0; i < slots.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < slots.cols(); ++j) s += slots.at(i, j) * slots.at(i, j);
        worst = std::max(worst, std::abs(std::sqrt(s) - 1.0));
    }
    return worst;
}

std::vector<Tensor> trainable(const ParamList& params) {
    std::vector<Tensor> out;
    for (auto& [n, t] : params) {
        Tensor copy = t;
        copy.set_requires_grad(true);
        out.push_back(copy);
    }
    return out;
}

}  // namespace

TEST_SUITE("slot-memory") {

TEST_CASE("bmn worked examples") {
    auto a = bmn(Tensor::vector({1, 0}), Tensor::vector({0, 2}));
    CHECK(a.at(0) == doctest::Approx(0.4472).epsilon(1e-3));
    CHECK(a.at(1) == doctest::Approx(0.8944).epsilon(1e-3));
    auto b = bmn(Tensor::vector({0, 0}), Tensor::vector({3, 4}));
    CHECK(b.at(0) == doctest::Approx(0.6));
    CHECK(b.at(1) == doctest::Approx(0.8));
    auto c = bmn(Tensor::vector({0.6, 0.8}), Tensor::vector({3, 4}));
    CHECK(c.at(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(c.at(1) == doctest::Approx(0.8).epsilon(1e-12));
    auto init = initial_memory(Tensor::matrix({{3, 4}}));
    CHECK(init.slots.at(0, 0) == doctest::Approx(0.6));
    CHECK(init.step == 0);
}

TEST_CASE("bmn rescues an antipodal slot toward the bias direction") {
    auto r = bmn(Tensor::vector({-3, -4}), Tensor::vector({3, 4}));
    CHECK(r.at(0) == doctest::Approx(0.6));
    CHECK(r.at(1) == doctest::Approx(0.8));
}

TEST_CASE("invalid memory settings") {
    CHECK_THROWS_AS(initial_memory(Tensor::matrix({{0, 0}})), ConfigError);
    CHECK_THROWS_AS(initial_memory(Tensor::matrix({{1, 0}}), 0.0), ParameterError);
    auto state = initial_memory(Tensor::matrix({{1, 0}}));
    state.tau = -1;
    CHECK_THROWS_AS(memory_write(state, Tensor::matrix({{0, 1}}), identity_params(2)), ParameterError);
    CHECK_THROWS_AS(memory_read(Tensor::matrix({{0, 1}}), Tensor(), identity_params(2)), ConfigError);
}

TEST_CASE("single-slot write matches the hand oracle") {
    MemoryState state = memory_from_slots(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1e-4}}), 1.0);
    WriteTrace trace;
    auto out = memory_write(state, Tensor::matrix({{0, 1}}), identity_params(2), &trace);
    // scores [m.m, m.x] / sqrt(2) = [1/sqrt(2), 0]
    const double e0 = std::exp(1.0 / std::sqrt(2.0)), e1 = 1.0;
    const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    const double y0 = w0, y1 = w1 + 1e-4, norm = std::sqrt(y0 * y0 + y1 * y1);
    CHECK(trace.weights[0] == doctest::Approx(w0).epsilon(1e-12));
    CHECK(trace.weights[1] == doctest::Approx(w1).epsilon(1e-12));
    CHECK(out.at(0, 0) == doctest::Approx(y0 / norm).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(y1 / norm).epsilon(1e-12));
}

TEST_CASE("temperature sharpens the write attention") {
    MemoryState state = memory_from_slots(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1e-4}}), 0.5);
    WriteTrace trace;
    memory_write(state, Tensor::matrix({{0, 1}}), identity_params(2), &trace);
    const double e0 = std::exp(2.0 / std::sqrt(2.0));
    CHECK(trace.weights[0] == doctest::Approx(e0 / (e0 + 1.0)).epsilon(1e-12));
}

TEST_CASE("slots never attend to other slots") {
    Rng rng(1);
    auto params = AttentionParams::init(6, 6, 2, rng);
    auto state = initial_memory(randn({5, 6}, rng));
    WriteTrace trace;
    memory_write(state, randn({7, 6}, rng), params, &trace);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            if (i != j) CHECK(trace.raw[i * 12 + j] == 0.0);
}

TEST_CASE("empty segment write is BMN of the slot's value projection") {
    Rng rng(2);
    auto params = AttentionParams::init(4, 4, 2, rng);
    auto bias = randn({3, 4}, rng);
    auto state = initial_memory(bias);
    auto out = memory_write(state, Tensor(), params);
    auto expected = bmn(matmul(matmul(state.slots, params.w_v), params.w_o), bias);
    CHECK(max_abs_diff(out.data(), expected.data()) < 1e-12);
}

TEST_CASE("read from a single slot copies its projected value") {
    Rng rng(3);
    auto params = AttentionParams::init(4, 4, 2, rng);
    auto slot = row_normalize(randn({1, 4}, rng));
    std::vector<double> w;
    auto h = memory_read(randn({5, 4}, rng), slot, params, &w);
    CHECK(h.shape() == Shape{5, 4});
    for (double x : w) CHECK(x == 1.0);
    auto expected = matmul(matmul(slot, params.w_v), params.w_o);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(h.at(i, j) == doctest::Approx(expected.at(0, j)).epsilon(1e-12));
}

TEST_CASE("duplicated slots read the same as one slot") {
    Rng rng(4);
    auto params = AttentionParams::init(4, 4, 2, rng);
    auto slot = row_normalize(randn({1, 4}, rng));
    auto x = randn({3, 4}, rng);
    auto one = memory_read(x, slot, params);
    auto three = memory_read(x, concat_rows({slot, slot, slot}), params);
    CHECK(max_abs_diff(one.data(), three.data()) < 1e-6);
}

TEST_CASE("property: unit norm after every write") {
    Rng rng(5);
    auto params = AttentionParams::init(8, 8, 2, rng);
    auto state = initial_memory(randn({6, 8}, rng, 0.3));
    for (int step = 0; step < 100; ++step) {
        state.slots = memory_write(state, randn({1 + rng.index(5), 8}, rng, 3.0), params);
        REQUIRE(max_norm_error(state.slots) < 1e-6);
    }
}

TEST_CASE("property: a slot's update ignores the other slots") {
    Rng rng(6);
    auto params = AttentionParams::init(4, 4, 2, rng);
    auto bias = randn({3, 4}, rng);
    auto tokens = randn({5, 4}, rng);
    auto state = initial_memory(bias);
    auto base = memory_write(state, tokens, params);
    auto perturbed = state;
    auto slots = state.slots.detach();
    for (std::size_t j = 0; j < 4; ++j) slots.mutable_data()[1 * 4 + j] += 0.5 * rng.normal();
    perturbed.slots = slots;
    auto moved = memory_write(perturbed, tokens, params);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(moved.at(0, j) == base.at(0, j));
        CHECK(moved.at(2, j) == base.at(2, j));
    }
    CHECK(max_abs_diff(slice_rows(moved, 1, 1).data(), slice_rows(base, 1, 1).data()) > 1e-6);
}

TEST_CASE("property: forgetting converges to the bias direction") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        auto bias = randn({6}, rng);
        const double target = 0.1 + rng.uniform(0.0, 2.0);
        double bn = 0;
        for (double b : bias.data()) bn += b * b;
        bias = scale(bias, target / std::sqrt(bn));
        auto m = row_normalize(randn({1, 6}, rng));
        m = reshape(m, {6});
        double prev = cosine(m.data(), bias.data());
        int reached = -1;
        for (int it = 1; it <= 200; ++it) {
            m = bmn(m, bias);
            double c = cosine(m.data(), bias.data());
            CHECK(c >= prev - 1e-12);
            prev = c;
            if (reached < 0 && c >= 0.999) reached = it;
        }
        CHECK(reached > 0);
    }
}

TEST_CASE("property: larger bias forgets faster") {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        auto dir = reshape(row_normalize(randn({1, 5}, rng)), {5});
        auto m = reshape(row_normalize(randn({1, 5}, rng)), {5});
        const double c0 = cosine(m.data(), dir.data());
        const double small = cosine(bmn(m, scale(dir, 0.1)).data(), dir.data()) - c0;
        const double large = cosine(bmn(m, scale(dir, 1.0)).data(), dir.data()) - c0;
        CHECK(large > small);
    }
}

TEST_CASE("run_segments writes once per segment") {
    Rng rng(9);
    auto enc = MemoryEncoder::init(2, 4, 2, 8, rng);
    auto mem0 = initial_memory(randn({3, 4}, rng));
    auto one = run_segments({randn({5, 4}, rng)}, mem0, enc, {});
    CHECK(one.final_state.step == 1);
    CHECK(one.outputs.size() == 1);
    MemoryTrace trace;
    auto three = run_segments({randn({2, 4}, rng), randn({3, 4}, rng), randn({4, 4}, rng)}, mem0, enc, {}, {}, &trace);
    CHECK(three.final_state.step == 3);
    CHECK(trace.writes.size() == 3);
    CHECK(three.outputs[2].shape() == Shape{4, 4});
    CHECK_THROWS_AS(run_segments({}, mem0, enc, {}), DataError);
    auto broken = enc;
    broken.layers[0].is_last = true;
    CHECK_THROWS_AS(run_segments({randn({2, 4}, rng)}, mem0, broken, {}), ConfigError);
}

TEST_CASE("without writes a segment's output ignores earlier segments") {
    Rng rng(10);
    auto enc = MemoryEncoder::init(1, 4, 2, 8, rng);
    auto mem0 = initial_memory(randn({3, 4}, rng));
    auto s1 = randn({4, 4}, rng), s2 = randn({4, 4}, rng), s3 = randn({4, 4}, rng);
    SegmentOptions no_write{true, false};
    auto a = run_segments({s1, s2, s3}, mem0, enc, {}, no_write);
    auto b = run_segments({s2, s1, s3}, mem0, enc, {}, no_write);
    CHECK(max_abs_diff(a.outputs[2].data(), b.outputs[2].data()) == 0.0);
    CHECK(a.final_state.step == 0);
}

TEST_CASE("a change in the first segment reaches the last one through memory") {
    Rng rng(11);
    auto enc = MemoryEncoder::init(1, 4, 2, 8, rng);
    auto mem0 = initial_memory(randn({3, 4}, rng));
    std::vector<Tensor> segs = {randn({4, 4}, rng), randn({4, 4}, rng), randn({4, 4}, rng), randn({4, 4}, rng)};
    auto base = run_segments(segs, mem0, enc, {});
    auto changed = segs;
    auto s0 = segs[0].detach();
    s0.mutable_data()[0] += 1.0;
    changed[0] = s0;
    auto moved = run_segments(changed, mem0, enc, {});
    CHECK(max_abs_diff(base.outputs[3].data(), moved.outputs[3].data()) > 1e-9);
}

TEST_CASE("run_segments passes grad_check including v_bias") {
    Rng rng(12);
    auto enc = MemoryEncoder::init(1, 4, 2, 8, rng);
    ParamList params;
    enc.collect("mem", params);
    auto ps = trainable(params);
    auto bias = randn({3, 4}, rng, 1.0, true);
    ps.push_back(bias);
    std::vector<Tensor> segs = {randn({3, 4}, rng), randn({3, 4}, rng)};
    auto coef = randn({3, 4}, rng), coef_m = randn({3, 4}, rng);
    auto loss = [&] {
        auto run = run_segments(segs, initial_memory(bias), enc, {});
        return add(sum(mul(run.outputs[1], coef)), sum(mul(run.final_state.slots, coef_m)));
    };
    auto r = grad_check(loss, ps);
    CHECK(r.max_rel_error < 1e-4);
    loss().backward();
    double gb = 0;
    for (double g : bias.grad()) gb += std::abs(g);
    CHECK(gb > 1e-8);
}

}
