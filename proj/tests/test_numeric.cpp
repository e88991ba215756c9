#include <doctest.h>

#include <cmath>

#include "cpmt/errors.hpp"
#include "cpmt/grad_check.hpp"
#include "cpmt/ops.hpp"
#include "helpers.hpp"

using namespace cpmt;
using testutil::randn;

TEST_SUITE("numeric-core") {

TEST_CASE("matmul of a row by a column") {
    auto c = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.at(0, 0) == 11.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Rng rng(1);
    CHECK_THROWS_AS(matmul(randn({2, 3}, rng), randn({2, 3}, rng)), DimensionError);
}

TEST_CASE("matmul matches a naive triple loop") {
    Rng rng(2);
    auto a = randn({5, 7}, rng), b = randn({7, 3}, rng);
    auto c = matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 7; ++k) s += a.at(i, k) * b.at(k, j);
            CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-12));
        }
    auto nt = matmul_nt(a, transpose(b));
    CHECK(testutil::max_abs_diff(nt.data(), c.data()) < 1e-12);
}

TEST_CASE("softmax worked example") {
    auto y = softmax(Tensor::vector({1, 2, 3}), 0);
    CHECK(y.at(0) == doctest::Approx(0.09003).epsilon(1e-4));
    CHECK(y.at(1) == doctest::Approx(0.24473).epsilon(1e-4));
    CHECK(y.at(2) == doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("softmax of large logits does not overflow") {
    auto y = softmax(Tensor::vector({1000, 0}), 0);
    CHECK(std::isfinite(y.at(0)));
    CHECK(y.at(0) == doctest::Approx(1.0));
    CHECK(y.at(1) >= 0.0);
    CHECK(y.at(1) < 1e-300);
}

TEST_CASE("layer_norm worked example") {
    auto y = layer_norm(Tensor::vector({1, 2, 3}), Tensor::full({3}, 1.0), Tensor::zeros({3}), 1e-5);
    CHECK(y.at(0) == doctest::Approx(-1.2247).epsilon(1e-4));
    CHECK(y.at(1) == doctest::Approx(0.0));
    CHECK(y.at(2) == doctest::Approx(1.2247).epsilon(1e-4));
}

TEST_CASE("grad_check of sum of squares") {
    auto x = Tensor::vector({1, 2}, true);
    auto r = grad_check([&] { return sum(mul(x, x)); }, {x});
    CHECK(r.max_rel_error < 1e-6);
    CHECK(x.grad()[0] == 0.0);
    sum(mul(x, x)).backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("grad_check rejects a bad step size") {
    auto x = Tensor::vector({1}, true);
    CHECK_THROWS_AS(grad_check([&] { return sum(x); }, {x}, 0.1), ParameterError);
}

TEST_CASE("every differentiable op passes grad_check") {
    Rng rng(5);
    auto a = randn({3, 4}, rng, 1.0, true);
    auto b = randn({4, 2}, rng, 1.0, true);
    auto c = randn({3, 4}, rng, 1.0, true);
    auto row = randn({4}, rng, 1.0, true);
    auto g = randn({4}, rng, 1.0, true);
    auto w = randn({3, 2}, rng);  // fixed random projection to make every loss non-trivial
    auto probe = [&](const Tensor& t) {
        Rng r(99);
        auto coef = randn(t.shape(), r);
        return sum(mul(t, coef));
    };
    auto check = [&](const char* name, std::function<Tensor()> f, std::vector<Tensor> params) {
        CAPTURE(name);
        auto r = grad_check(f, params);
        CHECK(r.max_rel_error < 1e-6);
    };
    check("matmul", [&] { return probe(matmul(a, b)); }, {a, b});
    check("matmul_nt", [&] { return probe(matmul_nt(a, c)); }, {a, c});
    check("transpose", [&] { return probe(transpose(a)); }, {a});
    check("add", [&] { return probe(add(a, c)); }, {a, c});
    check("add_row", [&] { return probe(add(a, row)); }, {a, row});
    check("sub", [&] { return probe(sub(a, c)); }, {a, c});
    check("mul", [&] { return probe(mul(a, c)); }, {a, c});
    check("scale", [&] { return probe(scale(a, -2.5)); }, {a});
    check("softmax1", [&] { return probe(softmax(a, 1)); }, {a});
    check("softmax0", [&] { return probe(softmax(a, 0)); }, {a});
    check("layer_norm", [&] { return probe(layer_norm(a, g, row, 1e-5)); }, {a, g, row});
    check("gelu", [&] { return probe(gelu(a)); }, {a});
    check("concat_cols", [&] { return probe(concat_cols({a, c})); }, {a, c});
    check("concat_rows", [&] { return probe(concat_rows({a, c})); }, {a, c});
    check("slice_rows", [&] { return probe(slice_rows(a, 1, 2)); }, {a});
    check("slice_cols", [&] { return probe(slice_cols(a, 1, 2)); }, {a});
    check("gather_rows", [&] { return probe(gather_rows(a, {2, 0, 2})); }, {a});
    check("reshape", [&] { return probe(reshape(a, {2, 6})); }, {a});
    check("mean_rows", [&] { return probe(mean_rows(a)); }, {a});
    check("row_normalize", [&] { return probe(row_normalize(a)); }, {a});
    check("composite", [&] { return probe(matmul(softmax(matmul_nt(a, c), 1), w)); }, {a, c});
}

TEST_CASE("relu gradient away from the kink") {
    auto x = Tensor::vector({-1.5, -0.3, 0.4, 2.0}, true);
    auto r = grad_check([&] { return sum(mul(relu(x), x)); }, {x});
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("dropout keeps expectation and is identity at rate 0") {
    Rng rng(3);
    auto x = Tensor::full({200, 50}, 1.0);
    Rng d0(4);
    auto y0 = dropout(x, 0.0, d0);
    CHECK(testutil::max_abs_diff(y0.data(), x.data()) == 0.0);
    Rng d1(4);
    auto y = dropout(x, 0.5, d1);
    double mean = sum(y).item() / 10000.0;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
    CHECK_THROWS_AS(dropout(x, 1.0, d1), ParameterError);
}

TEST_CASE("property: softmax rows sum to one") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = randn({4, 9}, rng, 10.0);
        auto y = softmax(x, 1);
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 9; ++j) {
                CHECK(y.at(i, j) >= 0.0);
                s += y.at(i, j);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("property: matmul is associative") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = randn({3, 5}, rng), b = randn({5, 4}, rng), c = randn({4, 6}, rng);
        auto l = matmul(matmul(a, b), c);
        auto r = matmul(a, matmul(b, c));
        CHECK(testutil::max_abs_diff(l.data(), r.data()) < 1e-10);
    }
}

TEST_CASE("no-grad mode records no graph") {
    auto x = Tensor::vector({1, 2}, true);
    Tensor y;
    {
        NoGradGuard guard;
        y = mul(x, x);
    }
    CHECK_FALSE(y.requires_grad());
    auto z = mul(x, x);
    CHECK(z.requires_grad());
}

TEST_CASE("gradients accumulate until zero_grad") {
    auto x = Tensor::vector({3}, true);
    sum(x).backward();
    sum(x).backward();
    CHECK(x.grad()[0] == 2.0);
    x.zero_grad();
    CHECK((x.grad().empty() || x.grad()[0] == 0.0));
}

}
