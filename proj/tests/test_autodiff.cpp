#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "interpoll/graph.hpp"
#include "interpoll/rng.hpp"
#include "oracle.hpp"

using namespace interpoll;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.5,
                     double hi = 1.5) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("convex_combine endpoints and midpoint", "[autodiff]") {
    Graph g;
    Tensor a({2}, {1.0, 3.0});
    Tensor b({2}, {7.0, 5.0});
    NodeId na = g.parameter(a);
    NodeId nb = g.parameter(b);

    SECTION("lambda 0 is bitwise a") {
        NodeId c = g.convex_combine(na, nb, 0.0);
        CHECK(g.value(c).values() == a.values());
    }
    SECTION("lambda 1 is bitwise b") {
        NodeId c = g.convex_combine(na, nb, 1.0);
        CHECK(g.value(c).values() == b.values());
    }
    SECTION("lambda 0.25 blends") {
        Tensor b2({2}, {3.0, 1.0});
        NodeId nb2 = g.parameter(b2);
        NodeId c = g.convex_combine(na, nb2, 0.25);
        CHECK(g.value(c)[0] == Catch::Approx(1.5));
        CHECK(g.value(c)[1] == Catch::Approx(2.5));
    }
    SECTION("lambda outside [0,1] rejected") {
        CHECK_THROWS_AS(g.convex_combine(na, nb, -0.1), Error);
        CHECK_THROWS_AS(g.convex_combine(na, nb, 1.1), Error);
    }
    SECTION("shape mismatch names both shapes") {
        Tensor c({3}, {1.0, 2.0, 3.0});
        NodeId nc = g.parameter(c);
        try {
            g.convex_combine(na, nc, 0.5);
            FAIL("expected shape error");
        } catch (const Error& e) {
            const std::string what = e.what();
            CHECK(what.find("[2]") != std::string::npos);
            CHECK(what.find("[3]") != std::string::npos);
        }
    }
}

TEST_CASE("softmax cross entropy closed forms", "[autodiff]") {
    Graph g;
    SECTION("uniform logits give ln K") {
        Tensor logits({3}, {0.0, 0.0, 0.0});
        NodeId loss = g.softmax_cross_entropy(g.parameter(logits), 0);
        CHECK(g.value(loss)[0] == Catch::Approx(std::log(3.0)).epsilon(1e-12));
    }
    SECTION("confident correct logits give ln(1 + 2e^-10)") {
        Tensor logits({3}, {10.0, 0.0, 0.0});
        NodeId loss = g.softmax_cross_entropy(g.parameter(logits), 0);
        CHECK(g.value(loss)[0] ==
              Catch::Approx(std::log1p(2.0 * std::exp(-10.0))).epsilon(1e-12));
        CHECK(g.value(loss)[0] == Catch::Approx(9.08e-5).margin(2e-7));
    }
    SECTION("gradient is softmax minus one-hot") {
        Tensor logits({3}, {0.0, 0.0, 0.0});
        NodeId nl = g.parameter(logits);
        NodeId loss = g.softmax_cross_entropy(nl, 1);
        g.backward(loss);
        REQUIRE(logits.has_grad());
        CHECK(logits.grad()[0] == Catch::Approx(1.0 / 3.0));
        CHECK(logits.grad()[1] == Catch::Approx(-2.0 / 3.0));
        CHECK(logits.grad()[2] == Catch::Approx(1.0 / 3.0));
    }
    SECTION("huge logits stay finite via max subtraction") {
        Tensor logits({3}, {1000.0, 900.0, -1000.0});
        NodeId loss = g.softmax_cross_entropy(g.parameter(logits), 0);
        CHECK(std::isfinite(g.value(loss)[0]));
        CHECK(g.value(loss)[0] >= 0.0);
    }
    SECTION("label out of range rejected") {
        Tensor logits({3}, {0.0, 0.0, 0.0});
        NodeId nl = g.parameter(logits);
        CHECK_THROWS_AS(g.softmax_cross_entropy(nl, 3), Error);
        CHECK_THROWS_AS(g.softmax_cross_entropy(nl, -1), Error);
    }
}

TEST_CASE("cross entropy is non-negative, ln K only at constant logits", "[autodiff]") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Graph g;
        Tensor logits = random_tensor({4}, rng, -3.0, 3.0);
        const auto label = static_cast<std::int32_t>(rng.below(4));
        NodeId loss = g.softmax_cross_entropy(g.parameter(logits), label);
        CHECK(g.value(loss)[0] >= 0.0);
    }
    Graph g;
    Tensor constant({5}, {2.5, 2.5, 2.5, 2.5, 2.5});
    NodeId loss = g.softmax_cross_entropy(g.parameter(constant), 3);
    CHECK(g.value(loss)[0] == Catch::Approx(std::log(5.0)).epsilon(1e-14));
    Graph g2;
    Tensor skewed({3}, {1.0, 0.0, 0.0});
    NodeId loss2 = g2.softmax_cross_entropy(g2.parameter(skewed), 0);
    CHECK(g2.value(loss2)[0] != Catch::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("sum of a parameter vector has all-ones gradient", "[autodiff]") {
    Graph g;
    Tensor p({4}, {0.5, -1.0, 2.0, 3.5});
    NodeId loss = g.sum(g.parameter(p));
    g.backward(loss);
    REQUIRE(p.has_grad());
    for (double gv : p.grad()) CHECK(gv == 1.0);
}

TEST_CASE("lambda 0 sends exactly zero gradient to b", "[autodiff]") {
    Graph g;
    Tensor a({3}, {0.3, -0.7, 1.1});
    Tensor b({3}, {2.0, 2.0, 2.0});
    NodeId c = g.convex_combine(g.parameter(a), g.parameter(b), 0.0);
    NodeId loss = g.softmax_cross_entropy(c, 1);
    g.backward(loss);
    REQUIRE(b.has_grad());
    for (double gv : b.grad()) CHECK(gv == 0.0);
    bool a_nonzero = false;
    for (double gv : a.grad()) a_nonzero |= (gv != 0.0);
    CHECK(a_nonzero);
}

TEST_CASE("finite differences confirm every primitive", "[autodiff]") {
    Rng rng(42);

    SECTION("matmul vector x matrix") {
        Tensor x = random_tensor({4}, rng);
        Tensor w = random_tensor({4, 3}, rng);
        auto res = oracle::gradcheck({&x, &w}, [&](Graph& g) {
            return g.sum(g.matmul(g.parameter(x), g.parameter(w)));
        });
        CHECK(res.checked == 16);
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("matmul matrix x matrix") {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({3, 2}, rng);
        auto res = oracle::gradcheck({&a, &b}, [&](Graph& g) {
            return g.sum(g.tanh(g.matmul(g.parameter(a), g.parameter(b))));
        });
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("elementwise add") {
        Tensor a = random_tensor({5}, rng);
        Tensor b = random_tensor({5}, rng);
        auto res = oracle::gradcheck({&a, &b}, [&](Graph& g) {
            return g.sum(g.tanh(g.add(g.parameter(a), g.parameter(b))));
        });
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("tanh") {
        Tensor a = random_tensor({6}, rng, -2.0, 2.0);
        auto res = oracle::gradcheck(
            {&a}, [&](Graph& g) { return g.sum(g.tanh(g.parameter(a))); });
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("scale") {
        Tensor a = random_tensor({5}, rng);
        auto res = oracle::gradcheck({&a}, [&](Graph& g) {
            return g.sum(g.tanh(g.scale(g.parameter(a), -1.7)));
        });
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("embedding gather with mean pooling, repeated tokens") {
        Tensor table = random_tensor({7, 3}, rng);
        const std::vector<std::int32_t> tokens = {1, 4, 4, 6, 0};
        auto res = oracle::gradcheck({&table}, [&](Graph& g) {
            return g.sum(g.tanh(g.embed_mean(g.parameter(table), tokens)));
        });
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("convex_combine interior lambda") {
        Tensor a = random_tensor({4}, rng);
        Tensor b = random_tensor({4}, rng);
        auto res = oracle::gradcheck({&a, &b}, [&](Graph& g) {
            return g.softmax_cross_entropy(
                g.convex_combine(g.parameter(a), g.parameter(b), 0.3), 2);
        });
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("softmax cross entropy") {
        Tensor logits = random_tensor({5}, rng, -2.0, 2.0);
        auto res = oracle::gradcheck({&logits}, [&](Graph& g) {
            return g.softmax_cross_entropy(g.parameter(logits), 3);
        });
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("mean of scalar losses") {
        Tensor a = random_tensor({3}, rng);
        Tensor b = random_tensor({3}, rng);
        auto res = oracle::gradcheck({&a, &b}, [&](Graph& g) {
            std::vector<NodeId> losses = {
                g.softmax_cross_entropy(g.parameter(a), 0),
                g.softmax_cross_entropy(g.parameter(b), 1),
                g.softmax_cross_entropy(g.add(g.parameter(a), g.parameter(b)), 2),
            };
            return g.mean(losses);
        });
        CHECK(res.max_rel_err < 1e-4);
    }
    SECTION("composite graph with every primitive") {
        Tensor table = random_tensor({6, 4}, rng);
        Tensor w = random_tensor({4, 3}, rng);
        Tensor bias = random_tensor({3}, rng);
        const std::vector<std::int32_t> left = {0, 2, 5};
        const std::vector<std::int32_t> right = {1, 1, 3, 4};
        auto res = oracle::gradcheck({&table, &w, &bias}, [&](Graph& g) {
            NodeId t = g.parameter(table);
            NodeId za = g.embed_mean(g.parameter(table), left);
            NodeId zb = g.embed_mean(t, right);
            NodeId mix = g.convex_combine(za, zb, 0.4);
            NodeId h = g.tanh(g.add(g.matmul(mix, g.parameter(w)), g.parameter(bias)));
            NodeId hs = g.scale(h, 2.5);
            std::vector<NodeId> losses = {g.softmax_cross_entropy(hs, 1),
                                          g.softmax_cross_entropy(hs, 0)};
            return g.mean(losses);
        });
        CHECK(res.checked == 6 * 4 + 4 * 3 + 3);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("backward bookkeeping", "[autodiff]") {
    SECTION("repeated backward is rejected") {
        Graph g;
        Tensor p({2}, {1.0, 2.0});
        NodeId loss = g.sum(g.parameter(p));
        g.backward(loss);
        CHECK_THROWS_AS(g.backward(loss), Error);
    }
    SECTION("non-scalar root is rejected") {
        Graph g;
        Tensor p({2}, {1.0, 2.0});
        NodeId n = g.parameter(p);
        CHECK_THROWS_AS(g.backward(n), Error);
    }
    SECTION("reset allows a fresh recording") {
        Graph g;
        Tensor p({2}, {1.0, 2.0});
        g.backward(g.sum(g.parameter(p)));
        g.reset();
        g.backward(g.sum(g.parameter(p)));
        CHECK(p.grad()[0] == 2.0);  // two backward passes accumulated
    }
    SECTION("binding one tensor in two branches sums its gradient") {
        Graph g;
        Tensor p({2}, {1.0, 2.0});
        NodeId n1 = g.parameter(p);
        NodeId n2 = g.parameter(p);
        CHECK(n1 == n2);
        NodeId loss = g.sum(g.add(n1, n2));
        g.backward(loss);
        for (double gv : p.grad()) CHECK(gv == 2.0);
    }
    SECTION("gradients accumulate across separate graphs until cleared") {
        Tensor p({2}, {1.0, 2.0});
        for (int i = 0; i < 3; ++i) {
            Graph g;
            g.backward(g.sum(g.parameter(p)));
        }
        for (double gv : p.grad()) CHECK(gv == 3.0);
        p.clear_grad();
        CHECK_FALSE(p.has_grad());
    }
}

TEST_CASE("forward evaluation is deterministic", "[autodiff]") {
    Rng rng(7);
    Tensor table = random_tensor({5, 3}, rng);
    Tensor w = random_tensor({3, 3}, rng);
    const std::vector<std::int32_t> tokens = {0, 3, 3, 2};
    auto run = [&]() {
        Graph g;
        NodeId h = g.tanh(g.matmul(g.embed_mean(g.parameter(table), tokens), g.parameter(w)));
        return g.value(g.softmax_cross_entropy(h, 1))[0];
    };
    const double first = run();
    const double second = run();
    CHECK(std::memcmp(&first, &second, sizeof first) == 0);
}

TEST_CASE("graph rejects malformed wiring", "[autodiff]") {
    Graph g;
    Tensor v({3}, {1.0, 2.0, 3.0});
    Tensor m({2, 2}, {1.0, 0.0, 0.0, 1.0});
    NodeId nv = g.parameter(v);
    NodeId nm = g.parameter(m);
    CHECK_THROWS_AS(g.matmul(nv, nm), Error);    // inner dims disagree
    CHECK_THROWS_AS(g.matmul(nm, nv), Error);    // right operand must be rank 2
    CHECK_THROWS_AS(g.add(nv, nm), Error);       // shape mismatch
    CHECK_THROWS_AS(g.mean(std::vector<NodeId>{nv}), Error);  // non-scalar mean input

    const std::vector<std::int32_t> bad = {0, 7};
    try {
        g.embed_mean(nm, bad);
        FAIL("expected out-of-vocabulary error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("7") != std::string::npos);
    }
}
