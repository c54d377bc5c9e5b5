#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "interpoll/model.hpp"
#include "oracle.hpp"

using namespace interpoll;

namespace {

ModelConfig small_config(std::uint64_t seed = 123) {
    return {.vocab_size = 12,
            .embed_dim = 8,
            .hidden_dims = {16},
            .num_classes = 3,
            .init_seed = seed};
}

bool same_parameters(Model& a, Model& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->values() != pb[i]->values()) return false;
    return true;
}

}  // namespace

TEST_CASE("init is seed-deterministic and range-bounded", "[model]") {
    Model a(small_config());
    Model b(small_config());
    CHECK(same_parameters(a, b));

    Model c(small_config(124));
    CHECK_FALSE(same_parameters(a, c));

    // each tensor's entries lie within its own Glorot bound
    const auto& cfg = a.config();
    auto params = a.parameters();
    const double s_embed = std::sqrt(6.0 / double(cfg.vocab_size + cfg.embed_dim));
    const double s_layer = std::sqrt(6.0 / double(cfg.embed_dim + cfg.hidden_dims[0]));
    const double s_head = std::sqrt(6.0 / double(cfg.hidden_dims[0] + cfg.num_classes));
    const double bounds[] = {s_embed, s_layer, s_layer, s_head, s_head};
    REQUIRE(params.size() == 5);
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t i = 0; i < params[pi]->size(); ++i) {
            CHECK((*params[pi])[i] <= bounds[pi]);
            CHECK((*params[pi])[i] >= -bounds[pi]);
        }
}

TEST_CASE("model config validation", "[model]") {
    CHECK_THROWS_AS(Model({.vocab_size = 0, .embed_dim = 4, .hidden_dims = {}, .num_classes = 2}),
                    Error);
    CHECK_THROWS_AS(Model({.vocab_size = 4, .embed_dim = 4, .hidden_dims = {}, .num_classes = 1}),
                    Error);
    CHECK_THROWS_AS(Model({.vocab_size = 4, .embed_dim = 4, .hidden_dims = {8, 0},
                           .num_classes = 2}),
                    Error);
    // empty hidden stack (linear encoder) is legal: that's the tiny auxiliary
    Model linear({.vocab_size = 4, .embed_dim = 4, .hidden_dims = {}, .num_classes = 2});
    CHECK(linear.representation_dim() == 4);
}

TEST_CASE("representations have the configured width at every cut", "[model]") {
    Model m(small_config());
    const std::vector<std::int32_t> tokens = {0, 3, 7};
    CHECK(m.representation(tokens).size() == 16);
    CHECK(m.representation(tokens, 0).size() == 8);   // pooled embedding
    CHECK(m.representation(tokens, 1).size() == 16);  // after the only layer
    CHECK_THROWS_AS(m.representation(tokens, 2), Error);
}

TEST_CASE("encode is deterministic and order-invariant", "[model]") {
    Model m(small_config());
    const std::vector<std::int32_t> tokens = {1, 5, 9, 5};
    const std::vector<std::int32_t> permuted = {5, 9, 5, 1};
    const auto za = m.representation(tokens);
    const auto zb = m.representation(tokens);
    CHECK(za == zb);
    const auto zp = m.representation(permuted);
    REQUIRE(zp.size() == za.size());
    for (std::size_t i = 0; i < za.size(); ++i)
        CHECK(zp[i] == Catch::Approx(za[i]).epsilon(1e-12));
}

TEST_CASE("out-of-vocabulary tokens are rejected with the offending id", "[model]") {
    Model m(small_config());
    const std::vector<std::int32_t> bad = {0, 99};
    try {
        m.representation(bad);
        FAIL("expected rejection");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("99") != std::string::npos);
    }
    Graph g;
    CHECK_THROWS_AS(m.encode(g, bad), Error);
}

TEST_CASE("classify produces a proper distribution", "[model]") {
    Model m(small_config());
    const std::vector<std::int32_t> tokens = {2, 4, 6};
    const auto z = m.representation(tokens);
    const auto probs = m.classify(z);
    REQUIRE(probs.size() == 3);
    double sum = 0.0;
    for (double p : probs) {
        CHECK(p > 0.0);
        sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);

    // argmax of probabilities equals argmax of logits
    const auto logits = m.raw_logits(tokens);
    std::size_t arg_p = 0, arg_l = 0;
    for (std::size_t i = 1; i < 3; ++i) {
        if (probs[i] > probs[arg_p]) arg_p = i;
        if (logits[i] > logits[arg_l]) arg_l = i;
    }
    CHECK(arg_p == arg_l);
    CHECK(m.predict(tokens) == static_cast<std::int32_t>(arg_l));

    std::vector<double> wrong_dim(7, 0.0);
    CHECK_THROWS_AS(m.classify(wrong_dim), Error);
}

TEST_CASE("zeroed head gives uniform probabilities and lowest-index argmax", "[model]") {
    Model m(small_config());
    auto params = m.parameters();
    Tensor* head_w = params[params.size() - 2];
    Tensor* head_b = params[params.size() - 1];
    for (std::size_t i = 0; i < head_w->size(); ++i) (*head_w)[i] = 0.0;
    for (std::size_t i = 0; i < head_b->size(); ++i) (*head_b)[i] = 0.0;
    const std::vector<std::int32_t> tokens = {1, 2, 3};
    const auto probs = m.class_probabilities(tokens);
    for (double p : probs) CHECK(p == Catch::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(m.predict(tokens) == 0);  // tie resolves to the lowest class index
}

TEST_CASE("predicted class ignores constant logit shifts", "[model]") {
    Model m(small_config());
    const std::vector<std::int32_t> tokens = {0, 1, 11};
    const auto before = m.predict(tokens);
    Tensor* head_b = m.parameters().back();
    for (std::size_t i = 0; i < head_b->size(); ++i) (*head_b)[i] += 7.25;
    CHECK(m.predict(tokens) == before);
}

TEST_CASE("tape forward matches the tapeless evaluation path", "[model]") {
    Model m(small_config(9));
    const std::vector<std::int32_t> tokens = {3, 3, 8, 10};
    Graph g;
    const NodeId rep = m.encode(g, tokens);
    CHECK(g.value(rep).values() == m.representation(tokens));
    Graph g2;
    const NodeId logits = m.logits(g2, tokens);
    CHECK(g2.value(logits).values() == m.raw_logits(tokens));
}

TEST_CASE("encode then classify passes the end-to-end gradient check", "[model]") {
    Model m({.vocab_size = 9, .embed_dim = 5, .hidden_dims = {4}, .num_classes = 3,
             .init_seed = 77});
    const std::vector<std::int32_t> tokens = {0, 4, 4, 8, 2};
    auto res = oracle::gradcheck(m.parameters(), [&](Graph& g) {
        return g.softmax_cross_entropy(m.logits(g, tokens), 1);
    });
    CHECK(res.checked == 9 * 5 + 5 * 4 + 4 + 4 * 3 + 3);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("interpolated forward through a cut layer gradient-checks", "[model]") {
    Model m({.vocab_size = 8, .embed_dim = 4, .hidden_dims = {5, 4}, .num_classes = 3,
             .init_seed = 31});
    const std::vector<std::int32_t> xi = {0, 2, 4};
    const std::vector<std::int32_t> xj = {1, 3, 5, 7};
    auto res = oracle::gradcheck(m.parameters(), [&](Graph& g) {
        const NodeId hi = m.encode(g, xi, 1);
        const NodeId hj = m.encode(g, xj, 1);
        const NodeId mixed = g.convex_combine(hi, hj, 0.35);
        const NodeId rep = m.forward_from(g, mixed, 1);
        return g.softmax_cross_entropy(m.logits_from(g, rep), 2);
    });
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("checkpoint round-trip is bitwise exact", "[model]") {
    Model m({.vocab_size = 11, .embed_dim = 6, .hidden_dims = {7, 5}, .num_classes = 4,
             .init_seed = 5150});
    const std::string path = "test_model_ckpt.bin";
    m.save(path);
    Model r = Model::load(path);
    CHECK(r.config() == m.config());
    auto pm = m.parameters();
    auto pr = r.parameters();
    REQUIRE(pm.size() == pr.size());
    for (std::size_t i = 0; i < pm.size(); ++i) {
        REQUIRE(pm[i]->size() == pr[i]->size());
        CHECK(std::memcmp(pm[i]->values().data(), pr[i]->values().data(),
                          pm[i]->size() * sizeof(double)) == 0);
    }
    std::remove(path.c_str());
}

TEST_CASE("loading rejects non-checkpoints and truncation", "[model]") {
    const std::string garbage = "test_model_garbage.bin";
    {
        std::ofstream out(garbage, std::ios::binary);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(Model::load(garbage), Error);
    std::remove(garbage.c_str());

    Model m(small_config());
    const std::string path = "test_model_trunc.bin";
    m.save(path);
    // chop off the tail
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(Model::load(path), Error);
    std::remove(path.c_str());

    CHECK_THROWS_AS(Model::load("test_model_missing_file.bin"), Error);
}
