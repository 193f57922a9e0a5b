#include <cmath>
#include <vector>

#include "doctest.h"
#include "ihd/autodiff.hpp"
#include "ihd/errors.hpp"
#include "ihd/rng.hpp"

using namespace ihd;

namespace {

DenseArray random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    DenseArray a(std::move(shape), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
    return a;
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("matmul forward, known product") {
    auto a = parameter(DenseArray({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto b = parameter(DenseArray({3, 2}, {7, 8, 9, 10, 11, 12}));
    auto c = matmul(a, b);
    const std::vector<double> want = {58, 64, 139, 154};
    for (std::size_t i = 0; i < 4; ++i) CHECK(c->value[i] == want[i]);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("softmax rows sum to one, rejects non-finite") {
    Rng rng(1);
    auto x = parameter(random_array({3, 4, 5}, rng, -30.0, 30.0));
    auto y = softmax(x, 2);
    for (std::size_t r = 0; r < 12; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 5; ++c) s += y->value[r * 5 + c];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    // softmax [ln 1, ln 3] = [0.25, 0.75]
    auto z = softmax(parameter(DenseArray({1, 2}, {0.0, std::log(3.0)})), 1);
    CHECK(z->value[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(z->value[1] == doctest::Approx(0.75).epsilon(1e-12));

    DenseArray bad({2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(softmax(parameter(bad), 0), ValidationError);
}

TEST_CASE("gelu closed-form point") {
    auto y = gelu(parameter(DenseArray({1}, {1.0})));
    // x * Phi(x) at x=1
    const double want = 1.0 * 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(y->value[0] == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("bce matches a naive oracle over wide logits") {
    Rng rng(7);
    const std::size_t n = 40, c = 6;
    const std::vector<double> weights = {1, 1, 1, 1, 1, 2};
    auto logits = parameter(random_array({n, c}, rng, -20.0, 20.0));
    DenseArray targets({n, c}, 0.0);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;

    auto loss = bce_with_logits(logits, targets, weights);

    double wsum = 0.0;
    for (double w : weights) wsum += w;
    double naive = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const double l = logits->value[i * c + j];
            const double p = 1.0 / (1.0 + std::exp(-l));
            const double y = targets[i * c + j];
            naive += -weights[j] * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        }
    }
    naive /= double(n) * wsum;
    CHECK(loss->value[0] == doctest::Approx(naive).epsilon(1e-9));

    // all-zero logits, uniform weights -> ln 2
    auto flat = bce_with_logits(parameter(DenseArray({2, 6}, 0.0)), DenseArray({2, 6}, 0.0),
                                std::vector<double>(6, 1.0));
    CHECK(std::abs(flat->value[0] - std::log(2.0)) < 1e-15);

    CHECK_THROWS_AS(bce_with_logits(logits, DenseArray({n, c}, 0.5), weights), ValidationError);
}

TEST_CASE("fan-out accumulates gradients") {
    auto x = parameter(DenseArray({3}, {1.0, 2.0, 3.0}));
    auto y = sum_all(add(x, x));
    backward(y);
    for (std::size_t i = 0; i < 3; ++i) CHECK(x->grad[i] == 2.0);
}

TEST_CASE("backward validates the root and is rerunnable") {
    auto x = parameter(DenseArray({2, 2}, {1, 2, 3, 4}));
    CHECK_THROWS_AS(backward(x), ValidationError);  // non-scalar
    auto y = sum_all(scale(x, 3.0));
    backward(y);
    const double g0 = x->grad[0];
    backward(y);  // grads cleared, not doubled
    CHECK(x->grad[0] == g0);
    CHECK(g0 == 3.0);
}

TEST_CASE("composite graph passes finite-difference audit") {
    Rng rng(13);
    auto w1 = parameter(random_array({6, 8}, rng, -0.5, 0.5));
    auto b1 = parameter(random_array({8}, rng, -0.1, 0.1));
    auto w2 = parameter(random_array({8, 4}, rng, -0.5, 0.5));
    auto gain = parameter(DenseArray({8}, 1.0));
    auto bias = parameter(DenseArray({8}, 0.0));
    auto table = parameter(random_array({5, 4}, rng, -0.3, 0.3));
    const DenseArray x = random_array({7, 6}, rng);
    DenseArray targets({7, 4}, 0.0);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;

    auto build = [&]() {
        auto h = layer_norm(add(matmul(constant(x), w1), b1), gain, bias);
        auto act = gelu(h);
        auto logits = add(matmul(act, w2), gather_rows(table, {0, 1, 2, 3, 4, 0, 2}));
        auto probs_path = softmax(reshape(logits, {7, 2, 2}), 1);
        auto mixed = add(scale(logits, 0.7), scale(reshape(permute(probs_path, {0, 2, 1}), {7, 4}), 0.3));
        return bce_with_logits(mixed, targets, {1.0, 2.0, 1.0, 1.5});
    };
    std::vector<std::pair<std::string, NodePtr>> params = {
        {"w1", w1}, {"b1", b1}, {"w2", w2}, {"gain", gain}, {"bias", bias}, {"table", table},
    };
    Rng pick(99);
    const auto report = grad_check(build, params, 1e-5, 1e-5, 120, pick);
    INFO(report.to_string());
    CHECK(report.passed);
    CHECK(report.checked >= 100);
}

TEST_CASE("grad_check flags a corrupted backward rule") {
    Rng rng(3);
    auto w = parameter(random_array({4, 4}, rng));
    const DenseArray x = random_array({2, 4}, rng);
    auto build = [&]() {
        auto h = matmul(constant(x), w);
        // forward = sum(h), but the node lies about its gradient
        auto bad = make_node(DenseArray({1}, {0.0}), {h}, "bad-sum");
        double s = 0.0;
        for (std::size_t i = 0; i < h->value.size(); ++i) s += h->value[i];
        bad->value[0] = s;
        bad->backward_rule = [](Node& node) {
            DenseArray g(node.parents[0]->value.shape(), 2.0 * node.grad[0]);  // wrong by 2x
            node.parents[0]->accumulate(std::move(g));
        };
        return bad;
    };
    Rng pick(4);
    const auto report = grad_check(build, {{"w", w}}, 1e-5, 1e-5, 16, pick);
    CHECK_FALSE(report.passed);
}

TEST_CASE("bmm batches independently") {
    Rng rng(21);
    auto a = parameter(random_array({3, 2, 4}, rng));
    auto b = parameter(random_array({3, 4, 5}, rng));
    auto c = bmm(a, b);
    REQUIRE(c->value.shape() == Shape{3, 2, 5});
    // batch 1 alone must reproduce rows of the batched product
    DenseArray a1({2, 4}, 0.0), b1({4, 5}, 0.0);
    for (std::size_t i = 0; i < 8; ++i) a1[i] = a->value[8 + i];
    for (std::size_t i = 0; i < 20; ++i) b1[i] = b->value[20 + i];
    auto c1 = matmul(parameter(a1), parameter(b1));
    for (std::size_t i = 0; i < 10; ++i) CHECK(c->value[10 + i] == doctest::Approx(c1->value[i]).epsilon(1e-14));
}

TEST_CASE("gather_rows repeats accumulate in the backward pass") {
    auto t = parameter(DenseArray({3, 2}, {1, 2, 3, 4, 5, 6}));
    auto g = gather_rows(t, {1, 1, 0});
    backward(sum_all(g));
    CHECK(t->grad[0 * 2 + 0] == 1.0);
    CHECK(t->grad[1 * 2 + 0] == 2.0);
    CHECK(t->grad[2 * 2 + 0] == 0.0);
}

TEST_CASE("sgd descends a convex bowl") {
    auto w = parameter(DenseArray({4}, {10.0, -7.0, 2.0, 0.5}));
    for (int i = 0; i < 200; ++i) {
        auto diff = add(w, constant(DenseArray({4}, -3.0)));
        auto loss = sum_all(scale(bmm(reshape(diff, {1, 1, 4}), reshape(diff, {1, 4, 1})), 0.5));
        backward(loss);
        sgd_update({w}, 0.1);
    }
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(w->value[i] - 3.0) < 1e-6);
    CHECK_THROWS_AS(sgd_update({w}, -0.1), ValidationError);
}

TEST_CASE("mean_axis and permute shapes and values") {
    auto x = parameter(DenseArray({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto m = mean_axis(x, 1);
    REQUIRE(m->value.shape() == Shape{2});
    CHECK(m->value[0] == doctest::Approx(2.0));
    CHECK(m->value[1] == doctest::Approx(5.0));

    auto p = permute(x, {1, 0});
    REQUIRE(p->value.shape() == Shape{3, 2});
    CHECK(p->value[0] == 1.0);
    CHECK(p->value[1] == 4.0);
    CHECK(p->value[4] == 3.0);
    CHECK_THROWS_AS(permute(x, {0, 0}), ShapeError);
    CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
}

TEST_SUITE_END();
