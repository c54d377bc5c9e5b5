#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "interpoll/grouping.hpp"
#include "interpoll/io.hpp"

using namespace interpoll;

namespace {

// A model whose zeroed head always predicts class 0 (lowest-index tie-break).
Model constant_class_model(std::size_t vocab, std::size_t k) {
    Model m({.vocab_size = vocab, .embed_dim = 4, .hidden_dims = {}, .num_classes = k,
             .init_seed = 17});
    auto params = m.parameters();
    Tensor* head_w = params[params.size() - 2];
    Tensor* head_b = params.back();
    for (std::size_t i = 0; i < head_w->size(); ++i) (*head_w)[i] = 0.0;
    for (std::size_t i = 0; i < head_b->size(); ++i) (*head_b)[i] = 0.0;
    return m;
}

Dataset planted_train(std::uint64_t seed, std::size_t n = 900) {
    PlantedConfig cfg;
    cfg.n = n;
    cfg.test_n = 90;
    cfg.seed = seed;
    return gen_planted_shortcut(cfg).train;
}

}  // namespace

TEST_CASE("an always-correct auxiliary infers zero minority", "[grouping]") {
    Dataset d = planted_train(3, 300);
    for (Example& ex : d.examples) ex.label = 0;  // constant-0 model is now perfect
    const Model aux = constant_class_model(d.vocab_size, d.num_classes);
    const auto a = infer_min_maj(aux, d, "perfect");
    CHECK(a.flags.size() == d.size());
    CHECK(a.minority_count() == 0);
    CHECK(a.source == "perfect");
}

TEST_CASE("a constant-class auxiliary flags the other classes as minority", "[grouping]") {
    const Dataset d = planted_train(4, 900);
    const Model aux = constant_class_model(d.vocab_size, d.num_classes);
    const auto a = infer_min_maj(aux, d);
    // balanced 3-class set: everything not labeled 0 is misclassified
    std::size_t expected = 0;
    for (const Example& ex : d.examples) expected += ex.label != 0 ? 1 : 0;
    CHECK(a.minority_count() == expected);
    const double frac = static_cast<double>(a.minority_count()) / static_cast<double>(d.size());
    CHECK(std::abs(frac - 2.0 / 3.0) <= 1.0 / static_cast<double>(d.size()) + 1e-12);
}

TEST_CASE("inference is idempotent and partitions the dataset", "[grouping]") {
    const Dataset d = planted_train(5);
    const Model aux = constant_class_model(d.vocab_size, d.num_classes);
    const auto a = infer_min_maj(aux, d);
    const auto b = infer_min_maj(aux, d);
    CHECK(a.flags == b.flags);
    CHECK(a.flags.size() == d.size());  // every id exactly once
    for (const Example& ex : d.examples) {
        CHECK(a.flags.count(ex.id) == 1);  // covered
    }
}

TEST_CASE("inference rejects incompatible models", "[grouping]") {
    const Dataset d = planted_train(6, 300);
    const Model wrong_vocab = constant_class_model(d.vocab_size + 5, d.num_classes);
    CHECK_THROWS_AS(infer_min_maj(wrong_vocab, d), Error);
    const Model wrong_k = constant_class_model(d.vocab_size, d.num_classes + 1);
    CHECK_THROWS_AS(infer_min_maj(wrong_k, d), Error);
}

TEST_CASE("minority recall scores inference against ground truth", "[grouping]") {
    const Dataset d = planted_train(7, 600);

    SECTION("inference equal to ground truth scores 1") {
        GroupAssignment a;
        for (const Example& ex : d.examples) a.flags[ex.id] = *ex.group == Group::minority;
        CHECK(minority_recall(a, d) == 1.0);
    }
    SECTION("empty inferred minority scores 0") {
        GroupAssignment a;
        for (const Example& ex : d.examples) a.flags[ex.id] = false;
        CHECK(minority_recall(a, d) == 0.0);
    }
    SECTION("empty ground-truth minority scores 0 by convention") {
        Dataset all_major = d;
        for (Example& ex : all_major.examples) ex.group = Group::majority;
        GroupAssignment a;
        for (const Example& ex : all_major.examples) a.flags[ex.id] = true;
        CHECK(minority_recall(a, all_major) == 0.0);
    }
    SECTION("missing tags are rejected") {
        Dataset untagged = d;
        untagged.examples[3].group.reset();
        GroupAssignment a;
        for (const Example& ex : untagged.examples) a.flags[ex.id] = false;
        CHECK_THROWS_AS(minority_recall(a, untagged), Error);
    }
    SECTION("uniformly random flags at rate q recall about q") {
        const double q = 0.3;
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(derive_seed(seed, "recall-mc"));
            GroupAssignment a;
            for (const Example& ex : d.examples) a.flags[ex.id] = rng.next_unit() < q;
            total += minority_recall(a, d);
        }
        CHECK(std::abs(total / 20.0 - q) <= 0.05);
    }
}

TEST_CASE("group pools index examples by class and flag", "[grouping]") {
    const Dataset d = planted_train(8, 300);
    const Model aux = constant_class_model(d.vocab_size, d.num_classes);
    const auto a = infer_min_maj(aux, d);
    const auto pools = GroupPools::build(d, a);

    std::size_t pooled = 0;
    for (std::size_t c = 0; c < d.num_classes; ++c) {
        for (auto i : pools.minority_by_class[c]) {
            CHECK(static_cast<std::size_t>(d.examples[i].label) == c);
            CHECK(a.inferred_minority(d.examples[i].id));
        }
        for (auto i : pools.majority_by_class[c]) {
            CHECK(static_cast<std::size_t>(d.examples[i].label) == c);
            CHECK_FALSE(a.inferred_minority(d.examples[i].id));
        }
        for (auto i : pools.minority_other_class[c]) {
            CHECK(static_cast<std::size_t>(d.examples[i].label) != c);
            CHECK(a.inferred_minority(d.examples[i].id));
        }
        pooled += pools.minority_by_class[c].size() + pools.majority_by_class[c].size();
    }
    CHECK(pooled == d.size());
    CHECK_FALSE(pools.minority_empty());
}

TEST_CASE("assignments round-trip through jsonl", "[grouping]") {
    const Dataset d = planted_train(9, 120);
    const Model aux = constant_class_model(d.vocab_size, d.num_classes);
    auto a = infer_min_maj(aux, d, "aux kind=tiny embed=4 hidden=[]");
    const std::string path = "test_grouping_assignment.jsonl";
    save_assignment(a, path);
    const auto back = load_assignment(path);
    CHECK(back.flags == a.flags);
    CHECK(back.source == a.source);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_assignment("no_such_assignment.jsonl"), Error);
}

TEST_CASE("auxiliary variant descriptors name their settings", "[grouping]") {
    AuxiliaryVariant tiny;
    CHECK(tiny.describe().find("tiny") != std::string::npos);
    AuxiliaryVariant reg{.kind = AuxKind::regularized, .weight_decay = 1.0};
    CHECK(reg.describe().find("weight_decay=1") != std::string::npos);
    CHECK(aux_kind_from_name("under_trained") == AuxKind::under_trained);
    CHECK_THROWS_AS(aux_kind_from_name("bogus"), ConfigError);
}
