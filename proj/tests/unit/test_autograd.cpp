#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "pfadseg/autograd.hpp"
#include "pfadseg/errors.hpp"

using namespace pfadseg;
using gradcheck::probe;
using gradcheck::randn;

namespace {

constexpr double kTol = 1e-6;

void expect_grads(const std::function<ag::Var()>& f, std::vector<gradcheck::Slot> slots, double tol = kTol) {
    const auto report = gradcheck::check(f, std::move(slots));
    INFO(report.describe());
    CHECK(report.worst() < tol);
}

}  // namespace

TEST_CASE("conv2d matches a direct loop") {
    Rng rng(1);
    ag::Var x = ag::parameter(randn({2, 3, 5, 6}, rng));
    ag::Var w = ag::parameter(randn({4, 3, 3, 2}, rng));
    ag::Var b = ag::parameter(randn({4, 1, 1, 1}, rng));
    const ag::Conv2dSpec spec{2, 1, 1, 0};
    const Tensor y = ag::conv2d(x, w, b, spec).value();
    const int oh = (5 + 2 - 3) / 2 + 1, ow = (6 - 2) / 1 + 1;
    REQUIRE(y.shape() == Shape{2, 4, oh, ow});
    for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 4; ++o)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    double acc = b.value()[o];
                    for (int c = 0; c < 3; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 2; ++kx) {
                                const int yy = i * 2 - 1 + ky, xx = j + kx;
                                if (yy < 0 || yy >= 5) continue;
                                acc += x.value().at(n, c, yy, xx) * w.value().at(o, c, ky, kx);
                            }
                    CHECK(y.at(n, o, i, j) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv2d gradients, strided and padded") {
    Rng rng(2);
    ag::Var x = ag::parameter(randn({2, 3, 6, 5}, rng));
    ag::Var w = ag::parameter(randn({2, 3, 3, 3}, rng));
    ag::Var b = ag::parameter(randn({2, 1, 1, 1}, rng));
    expect_grads([&] { return probe(ag::conv2d(x, w, b, {2, 2, 1, 1})); }, {{"x", x}, {"w", w}, {"b", b}});
    ag::Var w1 = ag::parameter(randn({4, 3, 1, 1}, rng));
    expect_grads([&] { return probe(ag::conv2d(x, w1, ag::Var(), {})); }, {{"x", x}, {"w1", w1}});
}

TEST_CASE("batch norm: training gradients, running statistics, eval mode") {
    Rng rng(3);
    ag::Var x = ag::parameter(randn({3, 2, 3, 3}, rng, 2.0));
    ag::Var g = ag::parameter(randn({1, 2, 1, 1}, rng));
    ag::Var b = ag::parameter(randn({1, 2, 1, 1}, rng));
    Tensor rm({1, 2, 1, 1}, 0.0), rv({1, 2, 1, 1}, 1.0);
    ag::BatchNormState st{&rm, &rv, 0.1, 1e-5};
    expect_grads([&] { return probe(ag::batch_norm(x, g, b, st, true)); }, {{"x", x}, {"gamma", g}, {"beta", b}});

    Tensor rm2({1, 2, 1, 1}, 0.0), rv2({1, 2, 1, 1}, 1.0);
    ag::batch_norm(x, g, b, {&rm2, &rv2, 0.1, 1e-5}, true);
    double mean = 0.0;
    for (int n = 0; n < 3; ++n)
        for (int i = 0; i < 9; ++i) mean += x.value()[x.value().index(n, 0, 0, 0) + i];
    mean /= 27.0;
    CHECK(rm2[0] == doctest::Approx(0.1 * mean).epsilon(1e-12));

    expect_grads([&] { return probe(ag::batch_norm(x, g, b, st, false)); }, {{"x", x}, {"gamma", g}, {"beta", b}});
    const Tensor y = ag::batch_norm(x, g, b, st, false).value();
    const double expect = (x.value()[0] - rm[0]) / std::sqrt(rv[0] + 1e-5) * g.value()[0] + b.value()[0];
    CHECK(y[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("pointwise and broadcasting ops") {
    Rng rng(4);
    ag::Var a = ag::parameter(randn({2, 3, 3, 4}, rng));
    ag::Var c = ag::parameter(randn({2, 3, 1, 1}, rng));
    ag::Var r = ag::parameter(randn({2, 3, 3, 1}, rng));
    ag::Var k = ag::parameter(randn({2, 3, 1, 4}, rng));
    expect_grads([&] { return probe(ag::sigmoid(a)); }, {{"a", a}});
    expect_grads([&] { return probe(ag::affine(a, -2.0, 0.5)); }, {{"a", a}});
    expect_grads([&] { return probe(ag::add(a, c)); }, {{"a", a}, {"c", c}});
    expect_grads([&] { return probe(ag::sub(c, a)); }, {{"a", a}, {"c", c}});
    expect_grads([&] { return probe(ag::mul(a, c)); }, {{"a", a}, {"c", c}});
    expect_grads([&] { return probe(ag::mul(r, k)); }, {{"r", r}, {"k", k}});
    // Shift away from the kink so the central difference is well defined.
    ag::Var shifted = ag::parameter(a.value());
    for (double& v : shifted.mutable_value().values()) v += v > 0 ? 0.1 : -0.1;
    expect_grads([&] { return probe(ag::relu(shifted)); }, {{"x", shifted}});
    CHECK_THROWS_AS(ag::add(a, ag::constant(Tensor({2, 2, 1, 1}))), InvalidArgument);
}

TEST_CASE("sigmoid is stable for large magnitudes") {
    ag::Var x = ag::constant(Tensor({1, 1, 1, 2}, std::vector<double>{-800.0, 800.0}));
    const Tensor y = ag::sigmoid(x).value();
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 1.0);
}

TEST_CASE("reductions, pooling and resampling") {
    Rng rng(5);
    ag::Var x = ag::parameter(randn({2, 2, 5, 6}, rng));
    expect_grads([&] { return probe(ag::mean_hw(x, true, false)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::mean_hw(x, false, true)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::mean_hw(x, true, true)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::adaptive_avg_pool(x, 2, 4)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::upsample_bilinear(x, 7, 3)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::upsample_bilinear(x, 10, 12)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::max_pool(x, 3, 2, 1)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::softmax_channels(x)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::pad_replicate(x, 2, 3)); }, {{"x", x}});
    expect_grads([&] { return probe(ag::sum_channels(x)); }, {{"x", x}});
    expect_grads([&] { return ag::mean_all(ag::mul(x, x)); }, {{"x", x}});
}

TEST_CASE("channel plumbing ops") {
    Rng rng(6);
    ag::Var a = ag::parameter(randn({2, 3, 2, 3}, rng));
    ag::Var b = ag::parameter(randn({2, 6, 2, 3}, rng));
    std::vector<ag::Var> parts{a, b};
    expect_grads([&] { return probe(ag::concat_channels(parts)); }, {{"a", a}, {"b", b}});
    expect_grads([&] { return probe(ag::slice_channels(b, 2, 3)); }, {{"b", b}});
    expect_grads([&] { return probe(ag::group_sum(b, 3)); }, {{"b", b}});
    const Tensor g = ag::group_sum(b, 3).value();
    CHECK(g.at(1, 1, 0, 2) ==
          doctest::Approx(b.value().at(1, 1, 0, 2) + b.value().at(1, 3, 0, 2) + b.value().at(1, 5, 0, 2)));
}

TEST_CASE("adaptive pooling uses floor/ceil bins") {
    Tensor t({1, 1, 1, 5}, std::vector<double>{1, 2, 3, 4, 5});
    // Bins over width 5 into 2: [0, 3) and [2, 5).
    const Tensor y = ag::adaptive_avg_pool(ag::constant(t), 1, 2).value();
    CHECK(y[0] == doctest::Approx(2.0));
    CHECK(y[1] == doctest::Approx(4.0));
}

TEST_CASE("bilinear resampling uses half-pixel centers") {
    Tensor t({1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
    const Tensor y = ag::upsample_bilinear(ag::constant(t), 1, 4).value();
    // Source coordinates -0.25, 0.25, 0.75, 1.25 clamp to [0, 1].
    CHECK(y[0] == doctest::Approx(0.0));
    CHECK(y[1] == doctest::Approx(0.25));
    CHECK(y[2] == doctest::Approx(0.75));
    CHECK(y[3] == doctest::Approx(1.0));
}

TEST_CASE("softmax across channels sums to one") {
    Rng rng(7);
    const Tensor y = ag::softmax_channels(ag::constant(randn({2, 5, 3, 3}, rng, 10.0))).value();
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int c = 0; c < 5; ++c) s += y.at(n, c, i, j);
                CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            }
}

TEST_CASE("cosine similarity, focal and L1 gradients") {
    Rng rng(8);
    ag::Var ft = ag::parameter(randn({2, 4, 3, 3}, rng));
    ag::Var fs = ag::parameter(randn({2, 4, 3, 3}, rng));
    expect_grads([&] { return probe(ag::cosine_similarity(ft, fs, 1e-8)); }, {{"ft", ft}, {"fs", fs}});

    Tensor p({2, 1, 3, 3}), k({2, 1, 3, 3});
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = 0.05 + 0.9 * rng.uniform();
        k[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    ag::Var prob = ag::parameter(p);
    for (double gamma : {0.0, 2.0, 4.0}) {
        expect_grads([&] { return ag::focal_loss(prob, k, gamma, 1e-7); }, {{"prob", prob}});
    }
    expect_grads([&] { return ag::l1_loss(prob, k); }, {{"prob", prob}});
}

TEST_CASE("backward requires a scalar and accumulates") {
    ag::Var x = ag::parameter(Tensor({1, 1, 1, 2}, 1.0));
    CHECK_THROWS_AS(ag::mul(x, x).backward(), InvalidArgument);
    ag::mean_all(x).backward();
    ag::mean_all(x).backward();
    CHECK(x.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("constants carry no graph") {
    ag::Var c = ag::constant(Tensor({1, 1, 2, 2}, 1.0));
    ag::Var y = ag::sigmoid(ag::mul(c, c));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}
