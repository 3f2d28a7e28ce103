// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "neo/rng.hpp"
#include "neo/tensor.hpp"
#include "support/gradcheck.hpp"

using neo::Shape;
using neo::Tensor;
using neo::test::grad_check;
using neo::test::random_tensor;

namespace {

Tensor<double> constant(Shape shape, std::vector<double> v) {
    return Tensor<double>::from(std::move(shape), std::move(v), false);
}

} // namespace

TEST_CASE("matmul identity and hand-checked products") {
    auto eye = constant({2, 2}, {1, 0, 0, 1});
    auto m = constant({2, 2}, {5, 6, 7, 8});
    auto out = neo::matmul(eye, m);
    CHECK(out.values() == std::vector<double>{5, 6, 7, 8});

    auto a = constant({1, 2}, {1, 2});
    auto b = constant({2, 1}, {3, 4});
    CHECK(neo::matmul(a, b).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = constant({4, 3}, std::vector<double>(12, 1.0));
    auto b = constant({5, 7}, std::vector<double>(35, 1.0));
    CHECK_THROWS_WITH_AS(neo::matmul(a, b),
                         "matmul: inner dimensions disagree: [4, 3] vs [5, 7]",
                         neo::DimensionError);
}

TEST_CASE("matmul backward matches finite differences") {
    neo::Rng rng(11);
    auto a = random_tensor({4, 3}, rng);
    auto b = random_tensor({3, 5}, rng);
    auto w = random_tensor({4, 5}, rng, 1.0, false);
    auto loss = [&] { return neo::sum(neo::mul(neo::matmul(a, b), w)); };
    auto res = grad_check(loss, {&a, &b});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("matmul_nt and batched variants match finite differences") {
    neo::Rng rng(12);

    auto a = random_tensor({2, 4, 3}, rng);
    auto b = random_tensor({5, 3}, rng);
    auto w = random_tensor({2, 4, 5}, rng, 1.0, false);
    auto loss_nt = [&] { return neo::sum(neo::mul(neo::matmul_nt(a, b), w)); };
    CHECK(grad_check(loss_nt, {&a, &b}).max_rel_err < 1e-6);

    auto c = random_tensor({2, 4, 3}, rng);
    auto d = random_tensor({2, 3, 5}, rng);
    auto w2 = random_tensor({2, 4, 5}, rng, 1.0, false);
    auto loss_bb = [&] { return neo::sum(neo::mul(neo::matmul(c, d), w2)); };
    CHECK(grad_check(loss_bb, {&c, &d}).max_rel_err < 1e-6);

    auto e = random_tensor({2, 4, 3}, rng);
    auto f = random_tensor({2, 5, 3}, rng);
    auto w3 = random_tensor({2, 4, 5}, rng, 1.0, false);
    auto loss_bnt = [&] { return neo::sum(neo::mul(neo::matmul_nt(e, f), w3)); };
    CHECK(grad_check(loss_bnt, {&e, &f}).max_rel_err < 1e-6);
}

TEST_CASE("softmax basics") {
    auto s = neo::softmax(constant({3}, {0, 0, 0}));
    for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    auto big = neo::softmax(constant({2}, {1000, 0}));
    CHECK(big.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(big.values()[1] == doctest::Approx(0.0).epsilon(1e-12));

    neo::Rng rng(3);
    auto x = random_tensor({7}, rng, 3.0, false);
    auto sm = neo::softmax(x);
    double total = 0;
    for (double v : sm.values()) {
        CHECK(v >= 0.0);
        total += v;
    }
    CHECK(std::fabs(total - 1.0) < 1e-12);
}

TEST_CASE("softmax along a middle axis") {
    neo::Rng rng(4);
    auto x = random_tensor({2, 3, 4}, rng, 2.0, false);
    auto sm = neo::softmax(x, 1);
    // sums over axis 1 are 1 for every (outer, inner) pair
    for (int o = 0; o < 2; ++o) {
        for (int in = 0; in < 4; ++in) {
            double total = 0;
            for (int i = 0; i < 3; ++i) total += sm.values()[static_cast<size_t>(o * 12 + i * 4 + in)];
            CHECK(std::fabs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("softmax rejects NaN input") {
    auto x = constant({2}, {0.0, std::nan("")});
    CHECK_THROWS_AS(neo::softmax(x), neo::NumericError);
}

TEST_CASE("backward on sum gives all-ones and analytic square grad") {
    neo::Rng rng(5);
    auto w = random_tensor({2, 3}, rng);
    neo::backward(neo::sum(w));
    for (double g : w.grad()) CHECK(g == 1.0);

    auto x = Tensor<double>::from({3}, {1, 2, 3}, true);
    neo::backward(neo::sum(neo::mul(x, x)));
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward rejects non-scalar root") {
    auto x = Tensor<double>::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(neo::backward(neo::scale(x, 2.0)), neo::UsageError);
}

TEST_CASE("tensor consumed twice accumulates both path gradients") {
    auto x = Tensor<double>::from({3}, {1.0, -2.0, 0.5}, true);
    auto a = constant({3}, {2, 3, 4});
    auto b = constant({3}, {-1, 5, 7});

    // two-path loss
    neo::backward(neo::add(neo::sum(neo::mul(x, a)), neo::sum(neo::mul(neo::mul(x, x), b))));
    auto both = x.grad();

    // one path at a time
    auto x1 = Tensor<double>::from({3}, {1.0, -2.0, 0.5}, true);
    neo::backward(neo::sum(neo::mul(x1, a)));
    auto x2 = Tensor<double>::from({3}, {1.0, -2.0, 0.5}, true);
    neo::backward(neo::sum(neo::mul(neo::mul(x2, x2), b)));

    for (size_t i = 0; i < 3; ++i) {
        CHECK(both[i] == doctest::Approx(x1.grad()[i] + x2.grad()[i]).epsilon(1e-12));
    }
}

TEST_CASE("no-grad tensors never accumulate gradient") {
    auto x = Tensor<double>::from({2}, {1, 2}, true);
    auto c = constant({2}, {3, 4});
    neo::backward(neo::sum(neo::mul(x, c)));
    CHECK(x.has_grad());
    CHECK_FALSE(c.has_grad());
}

TEST_CASE("backward graph visits each node exactly once") {
    auto x = Tensor<double>::from({2}, {1, 2}, true);
    auto y = neo::scale(x, 2.0);
    auto z = neo::add(y, y); // diamond: y feeds the root twice
    auto loss = neo::sum(z);
    auto graph = neo::build_backward_graph(loss);
    CHECK(graph.order.size() == 4); // x, y, z, loss
    neo::backward(loss);
    CHECK(x.grad() == std::vector<double>{4, 4});
}

TEST_CASE("elementwise, norm and shape ops match finite differences") {
    neo::Rng rng(6);

    SUBCASE("add sub mul scale") {
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({3, 4}, rng);
        auto w = random_tensor({3, 4}, rng, 1.0, false);
        auto loss = [&] {
            auto t = neo::add(neo::mul(a, b), neo::scale(neo::sub(a, b), 0.7));
            return neo::sum(neo::mul(t, w));
        };
        CHECK(grad_check(loss, {&a, &b}).max_rel_err < 1e-6);
    }
    SUBCASE("gelu and log") {
        auto a = random_tensor({20}, rng);
        for (int64_t i = 0; i < a.size(); ++i) a.data()[i] = std::fabs(a.data()[i]) + 0.5;
        auto loss = [&] { return neo::sum(neo::log(neo::gelu(a))); };
        CHECK(grad_check(loss, {&a}).max_rel_err < 1e-5);
    }
    SUBCASE("rmsnorm") {
        auto x = random_tensor({4, 6}, rng);
        auto g = random_tensor({6}, rng);
        auto w = random_tensor({4, 6}, rng, 1.0, false);
        auto loss = [&] { return neo::sum(neo::mul(neo::rmsnorm(x, g), w)); };
        CHECK(grad_check(loss, {&x, &g}).max_rel_err < 1e-5);
    }
    SUBCASE("transpose reshape slice concat") {
        auto a = random_tensor({2, 3, 4}, rng);
        auto w = random_tensor({24}, rng, 1.0, false);
        auto loss = [&] {
            auto t = neo::transpose(a);                       // [2,4,3]
            auto r = neo::reshape(t, {2, 12});
            auto s1 = neo::slice_last(r, 0, 5);
            auto s2 = neo::slice_last(r, 5, 7);
            auto c = neo::concat_last<double>({s1, s2});      // [2,12]
            return neo::sum(neo::mul(neo::reshape(c, {24}), w));
        };
        CHECK(grad_check(loss, {&a}).max_rel_err < 1e-6);
    }
    SUBCASE("softmax with causal mask") {
        auto s = random_tensor({2, 4, 4}, rng);
        auto w = random_tensor({2, 4, 4}, rng, 1.0, false);
        auto loss = [&] { return neo::sum(neo::mul(neo::softmax(neo::causal_mask(s)), w)); };
        CHECK(grad_check(loss, {&s}).max_rel_err < 1e-5);
    }
    SUBCASE("log_softmax take_last mul_rowwise") {
        auto z = random_tensor({6, 5}, rng, 2.0);
        auto w = random_tensor({6}, rng, 1.0, false);
        std::vector<int32_t> ids = {0, 4, 2, 2, 1, 3};
        auto loss = [&] {
            auto lp = neo::log_softmax(z);
            auto picked = neo::take_last(lp, std::span<const int32_t>(ids));
            return neo::sum(neo::mul(picked, w));
        };
        CHECK(grad_check(loss, {&z}).max_rel_err < 1e-6);

        auto x = random_tensor({3, 4}, rng);
        auto rw = random_tensor({3}, rng);
        auto loss2 = [&] { return neo::sum(neo::mul_rowwise(x, rw)); };
        CHECK(grad_check(loss2, {&x, &rw}).max_rel_err < 1e-6);
    }
    SUBCASE("embedding scatter-add backward") {
        auto table = random_tensor({7, 3}, rng);
        std::vector<int32_t> ids = {1, 1, 4, 0, 6, 1};
        auto w = random_tensor({6, 3}, rng, 1.0, false);
        auto loss = [&] {
            return neo::sum(neo::mul(neo::embedding(table, std::span<const int32_t>(ids), {6}), w));
        };
        CHECK(grad_check(loss, {&table}).max_rel_err < 1e-6);
    }
    SUBCASE("mean") {
        auto a = random_tensor({5}, rng);
        auto loss = [&] { return neo::mean(neo::mul(a, a)); };
        CHECK(grad_check(loss, {&a}).max_rel_err < 1e-6);
    }
}

TEST_CASE("causal mask zeroes future positions") {
    auto s = constant({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto p = neo::softmax(neo::causal_mask(s));
    CHECK(p.values()[1] == 0.0);
    CHECK(p.values()[2] == 0.0);
    CHECK(p.values()[5] == 0.0);
    CHECK(p.values()[0] == 1.0);
}

TEST_CASE("embedding rejects out-of-range ids with position") {
    auto table = constant({4, 2}, std::vector<double>(8, 0.0));
    std::vector<int32_t> ids = {0, 7};
    CHECK_THROWS_WITH_AS(neo::embedding(table, std::span<const int32_t>(ids), {2}),
                         "embedding: id 7 out of range [0, 4) at position 1", neo::DataError);
}

TEST_CASE("rng streams are deterministic and portable") {
    neo::Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

    neo::Rng c(42);
    std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8}, v2{1, 2, 3, 4, 5, 6, 7, 8};
    c.shuffle(v1);
    neo::Rng d(42);
    d.shuffle(v2);
    CHECK(v1 == v2);
}
