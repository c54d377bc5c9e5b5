#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "grouping.hpp"
#include "optimizer.hpp"

namespace interpoll {

// --------------------------------------------------------------------------
// Policy types

enum class LambdaKind : std::uint8_t { uniform, beta };

struct LambdaDist {
    LambdaKind kind = LambdaKind::uniform;
    double a = 0.0;
    double b = 0.5;

    // A degenerate Uniform(c, c) is legal; it is how the lambda-zero
    // equivalence contract is exercised.
    void validate() const {
        if (kind == LambdaKind::uniform) {
            if (!(a >= 0.0 && a <= b && b <= 1.0))
                fail_config("lambda: Uniform(", a, ", ", b, ") is not inside [0, 1]");
        } else {
            if (!(a > 0.0 && b > 0.0))
                fail_config("lambda: Beta(", a, ", ", b, ") needs positive parameters");
        }
    }

    double sample(Rng& rng) const {
        double v = kind == LambdaKind::uniform ? rng.uniform(a, b) : rng.beta(a, b);
        if (!(v >= 0.0 && v <= 1.0))
            fail("lambda draw ", v, " escaped [0, 1]");
        if (kind == LambdaKind::uniform && !(v >= a && (v < b || a == b)))
            fail("lambda draw ", v, " escaped Uniform(", a, ", ", b, ") support");
        return v;
    }

    std::string describe() const {
        return msg(kind == LambdaKind::uniform ? "U(" : "Beta(", fmt_double(a), ",",
                   fmt_double(b), ")");
    }

    bool operator==(const LambdaDist&) const = default;
};

enum class Direction : std::uint8_t { standard, inverse };
enum class ClassConstraint : std::uint8_t { intra, inter };

struct InterpolationPolicy {
    Direction direction = Direction::standard;
    ClassConstraint class_constraint = ClassConstraint::intra;
    LambdaDist lambda_dist{};                 // default Uniform(0, 0.5)
    std::optional<std::size_t> layer;         // interpolate after this encoder layer;
                                              // default: after the final layer
    bool stop_partner_gradient = false;

    bool operator==(const InterpolationPolicy&) const = default;
};

inline double sample_lambda(const InterpolationPolicy& policy, Rng& rng) {
    return policy.lambda_dist.sample(rng);
}

enum class Method : std::uint8_t { erm, interpoll, mixup, lisa };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::erm: return "erm";
        case Method::interpoll: return "interpoll";
        case Method::mixup: return "mixup";
        case Method::lisa: return "lisa";
    }
    return "?";
}

inline Method method_from_name(const std::string& s) {
    if (s == "erm") return Method::erm;
    if (s == "interpoll") return Method::interpoll;
    if (s == "mixup") return Method::mixup;
    if (s == "lisa") return Method::lisa;
    fail_config("unknown training method '", s, "'");
}

struct TrainConfig {
    Method method = Method::erm;
    std::size_t epochs = 12;
    std::size_t batch_size = 32;
    OptimizerConfig optimizer{};
    std::uint64_t seed = 0;
    InterpolationPolicy policy{};                                // interpoll only
    LambdaDist mixup_lambda{LambdaKind::beta, 0.2, 0.2};         // mixup only
    LambdaDist lisa_lambda{LambdaKind::uniform, 0.0, 1.0};       // lisa only
    bool dynamics_recording = true;

    bool operator==(const TrainConfig&) const = default;
};

// --------------------------------------------------------------------------
// Metrics

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_acc = 0.0;
    double train_acc_minority = 0.0;
    double train_acc_majority = 0.0;
    double mean_loss = 0.0;

    bool operator==(const EpochStats&) const = default;
};

struct MetricsRecord {
    std::vector<EpochStats> epochs;
    double id_test_acc = std::nan("");
    double ood_test_acc = std::nan("");
    double minority_test_acc = std::nan("");  // ground-truth minority subset of the OOD split
    double majority_test_acc = std::nan("");
    double wall_clock_seconds = 0.0;  // kept out of the serialized metrics (timing varies)
};

// Interpolation bookkeeping; the label/pass-through counters back the
// instrumented assertions, so violations also throw immediately.
struct TrainStats {
    std::size_t interpolated = 0;
    std::size_t pass_through = 0;   // protected-group anchors left unmodified
    std::size_t fallback_erm = 0;   // anchors whose partner pool was empty
    std::size_t self_partner = 0;
    std::size_t label_checks = 0;
    std::size_t label_violations = 0;
    std::size_t minority_altered = 0;  // standard direction: must stay 0
    std::size_t lambda_draws = 0;
};

struct TrainResult {
    MetricsRecord metrics;
    TrainStats stats;
};

// --------------------------------------------------------------------------
// Evaluation

struct Accuracy {
    double overall = std::nan("");
    double minority = std::nan("");
    double majority = std::nan("");
    std::size_t n = 0, n_minority = 0, n_majority = 0;
};

// Frozen-model accuracy with a ground-truth group breakdown. Untagged
// examples count toward the majority column.
inline Accuracy evaluate(const Model& model, const Dataset& d) {
    if (model.config().vocab_size != d.vocab_size)
        fail("evaluate: model vocab ", model.config().vocab_size, " does not match dataset ",
             d.vocab_size);
    Accuracy acc;
    std::size_t hit = 0, hit_min = 0, hit_maj = 0;
    for (const Example& ex : d.examples) {
        const bool correct = model.predict(ex.tokens) == ex.label;
        ++acc.n;
        hit += correct;
        if (ex.group && *ex.group == Group::minority) {
            ++acc.n_minority;
            hit_min += correct;
        } else {
            ++acc.n_majority;
            hit_maj += correct;
        }
    }
    if (acc.n) acc.overall = static_cast<double>(hit) / static_cast<double>(acc.n);
    if (acc.n_minority)
        acc.minority = static_cast<double>(hit_min) / static_cast<double>(acc.n_minority);
    if (acc.n_majority)
        acc.majority = static_cast<double>(hit_maj) / static_cast<double>(acc.n_majority);
    return acc;
}

struct EvalSets {
    const Dataset* id_test = nullptr;
    const Dataset* ood_test = nullptr;
};

// --------------------------------------------------------------------------
// Shared loop scaffolding

namespace detail {

struct Streams {
    Rng shuffle;
    Rng method;
};

// Every method draws its shuffle order from the "shuffle" stream and its
// method-specific randomness (partners, lambdas) from the "method" stream, so
// ERM and any interpolation method walk identical batch orders under one seed.
inline Streams make_streams(std::uint64_t seed) {
    return {Rng(derive_seed(seed, "shuffle")), Rng(derive_seed(seed, "method"))};
}

inline void validate_common(const Dataset& d, const TrainConfig& cfg, const Model& model) {
    if (d.examples.empty()) fail("train: empty dataset");
    if (cfg.batch_size == 0) fail_config("train: batch_size must be positive");
    if (model.config().vocab_size != d.vocab_size)
        fail("train: model vocab ", model.config().vocab_size, " does not match dataset ",
             d.vocab_size);
    if (model.config().num_classes != d.num_classes)
        fail("train: model classes ", model.config().num_classes,
             " do not match dataset ", d.num_classes);
}

inline void record_epoch(const Model& model, const Dataset& d, std::size_t epoch,
                         double mean_loss, MetricsRecord& rec) {
    const Accuracy a = evaluate(model, d);
    EpochStats s;
    s.epoch = epoch;
    s.train_acc = a.overall;
    s.train_acc_minority = a.n_minority ? a.minority : 0.0;
    s.train_acc_majority = a.n_majority ? a.majority : 0.0;
    s.mean_loss = mean_loss;
    rec.epochs.push_back(s);
}

inline void final_eval(const Model& model, const EvalSets& evals, MetricsRecord& rec) {
    if (evals.id_test) rec.id_test_acc = evaluate(model, *evals.id_test).overall;
    if (evals.ood_test) {
        const Accuracy a = evaluate(model, *evals.ood_test);
        rec.ood_test_acc = a.overall;
        rec.minority_test_acc = a.minority;
        rec.majority_test_acc = a.majority;
    }
}

// Runs the optimization loop. `build_batch(g, indices)` records one batch's
// loss on `g` and returns the scalar root; evaluation between epochs is
// frozen (plain predictions, no interpolation).
template <class BuildBatch>
double run_epochs(Model& model, const Dataset& d, const TrainConfig& cfg, Rng& shuffle_rng,
                  MetricsRecord& rec, BuildBatch&& build_batch) {
    Optimizer opt(cfg.optimizer);
    const auto params = model.parameters();
    std::vector<std::size_t> order(d.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            Graph g;
            const NodeId root =
                build_batch(g, std::span<const std::size_t>(order).subspan(start, stop - start));
            const double batch_loss = g.value(root)[0];
            if (!std::isfinite(batch_loss))
                fail("train: non-finite batch loss at epoch ", epoch);
            loss_sum += batch_loss * static_cast<double>(stop - start);
            g.backward(root);
            opt.step(params);
        }
        if (cfg.dynamics_recording)
            record_epoch(model, d, epoch, loss_sum / static_cast<double>(d.size()), rec);
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// --------------------------------------------------------------------------
// ERM

inline TrainResult train_erm(Model& model, const Dataset& d, const TrainConfig& cfg,
                             const EvalSets& evals = {}) {
    detail::validate_common(d, cfg, model);
    TrainResult res;
    auto streams = detail::make_streams(cfg.seed);
    res.metrics.wall_clock_seconds = detail::run_epochs(
        model, d, cfg, streams.shuffle, res.metrics,
        [&](Graph& g, std::span<const std::size_t> batch) {
            std::vector<NodeId> losses;
            losses.reserve(batch.size());
            for (const std::size_t i : batch) {
                const Example& ex = d.examples[i];
                losses.push_back(
                    g.softmax_cross_entropy(model.logits(g, ex.tokens), ex.label));
            }
            return g.mean(losses);
        });
    detail::final_eval(model, evals, res.metrics);
    return res;
}

// --------------------------------------------------------------------------
// InterpoLL

// Records one batch of the interpolation objective on `g` and returns the
// scalar batch loss root. Anchors (majority under the standard direction,
// minority under inverse) are mixed toward a sampled partner at the policy's
// layer; the protected group passes through unmodified.
inline NodeId interpoll_batch(Graph& g, Model& model, const Dataset& d,
                              std::span<const std::size_t> batch,
                              const GroupAssignment& assignment, const GroupPools& pools,
                              const InterpolationPolicy& policy, Rng& method_rng,
                              TrainStats& stats) {
    if (policy.layer && *policy.layer >= model.num_layers())
        fail_config("interpoll: policy layer ", *policy.layer, " exceeds encoder depth ",
                    model.num_layers());
    const std::size_t cut = policy.layer ? *policy.layer + 1 : model.num_layers();
    if (batch.empty()) fail("interpoll: empty batch");
    std::vector<NodeId> losses;
    losses.reserve(batch.size());
    for (const std::size_t i : batch) {
        const Example& ex = d.examples[i];
        const bool flagged_minority = assignment.inferred_minority(ex.id);
        const bool is_anchor =
            policy.direction == Direction::standard ? !flagged_minority : flagged_minority;
        NodeId z;
        if (!is_anchor) {
            // the protected group keeps its own representation, bit for bit
            z = model.encode(g, ex.tokens);
            ++stats.pass_through;
        } else {
            const auto cls = static_cast<std::size_t>(ex.label);
            const auto& pool = [&]() -> const std::vector<std::size_t>& {
                if (policy.direction == Direction::standard)
                    return policy.class_constraint == ClassConstraint::intra
                               ? pools.minority_by_class[cls]
                               : pools.minority_other_class[cls];
                return policy.class_constraint == ClassConstraint::intra
                           ? pools.majority_by_class[cls]
                           : pools.majority_other_class[cls];
            }();
            if (pool.empty()) {
                z = model.encode(g, ex.tokens);
                ++stats.fallback_erm;
            } else {
                const std::size_t j = pool[method_rng.below(pool.size())];
                const Example& partner = d.examples[j];
                ++stats.label_checks;
                if (policy.class_constraint == ClassConstraint::intra) {
                    if (partner.label != ex.label) {
                        ++stats.label_violations;
                        fail("interpoll: intra-class partner label ", partner.label,
                             " differs from anchor label ", ex.label);
                    }
                } else if (partner.label == ex.label) {
                    ++stats.label_violations;
                    fail("interpoll: inter-class partner shares anchor label ", ex.label);
                }
                if (policy.direction == Direction::standard &&
                    !assignment.inferred_minority(partner.id))
                    fail("interpoll: partner id ", partner.id, " is not flagged minority");
                if (j == i) ++stats.self_partner;
                const double lambda = policy.lambda_dist.sample(method_rng);
                ++stats.lambda_draws;
                const NodeId hi = model.encode(g, ex.tokens, cut);
                NodeId hj;
                if (policy.stop_partner_gradient) {
                    const auto frozen = model.representation(partner.tokens, cut);
                    hj = g.input(Tensor({frozen.size()}, frozen));
                } else {
                    hj = model.encode(g, partner.tokens, cut);
                }
                const NodeId mixed = g.convex_combine(hi, hj, lambda);
                z = model.forward_from(g, mixed, cut);
                ++stats.interpolated;
                if (flagged_minority) ++stats.minority_altered;
            }
        }
        // the loss always targets the anchor's own label
        losses.push_back(g.softmax_cross_entropy(model.logits_from(g, z), ex.label));
    }
    return g.mean(losses);
}

inline TrainResult train_interpoll(Model& model, const Dataset& d,
                                   const GroupAssignment& assignment, const TrainConfig& cfg,
                                   const EvalSets& evals = {}) {
    detail::validate_common(d, cfg, model);
    cfg.policy.lambda_dist.validate();
    for (const Example& ex : d.examples)
        (void)assignment.inferred_minority(ex.id);  // coverage check up front
    const GroupPools pools = GroupPools::build(d, assignment);

    TrainResult res;
    auto streams = detail::make_streams(cfg.seed);
    res.metrics.wall_clock_seconds = detail::run_epochs(
        model, d, cfg, streams.shuffle, res.metrics,
        [&](Graph& g, std::span<const std::size_t> batch) {
            return interpoll_batch(g, model, d, batch, assignment, pools, cfg.policy,
                                   streams.method, res.stats);
        });
    if (cfg.policy.direction == Direction::standard && res.stats.minority_altered != 0)
        fail("interpoll: ", res.stats.minority_altered, " minority representations altered");
    detail::final_eval(model, evals, res.metrics);
    return res;
}

// --------------------------------------------------------------------------
// Mixup baseline: pairs via a per-batch self-permutation, representations
// mixed at the final layer, loss weighted toward both labels.

inline TrainResult train_mixup(Model& model, const Dataset& d, const TrainConfig& cfg,
                               const EvalSets& evals = {}) {
    detail::validate_common(d, cfg, model);
    cfg.mixup_lambda.validate();
    TrainResult res;
    auto streams = detail::make_streams(cfg.seed);
    std::vector<std::size_t> perm;
    res.metrics.wall_clock_seconds = detail::run_epochs(
        model, d, cfg, streams.shuffle, res.metrics,
        [&](Graph& g, std::span<const std::size_t> batch) {
            perm.resize(batch.size());
            for (std::size_t b = 0; b < batch.size(); ++b) perm[b] = b;
            streams.method.shuffle(perm);
            std::vector<NodeId> losses;
            losses.reserve(batch.size());
            for (std::size_t b = 0; b < batch.size(); ++b) {
                const Example& ex = d.examples[batch[b]];
                const Example& partner = d.examples[batch[perm[b]]];
                const double lambda = cfg.mixup_lambda.sample(streams.method);
                ++res.stats.lambda_draws;
                if (perm[b] == b) ++res.stats.self_partner;
                const NodeId mixed = g.convex_combine(
                    model.encode(g, ex.tokens), model.encode(g, partner.tokens), lambda);
                const NodeId logits = model.logits_from(g, mixed);
                const NodeId own = g.softmax_cross_entropy(logits, ex.label);
                const NodeId other = g.softmax_cross_entropy(logits, partner.label);
                losses.push_back(g.add(g.scale(own, 1.0 - lambda), g.scale(other, lambda)));
                ++res.stats.interpolated;
            }
            return g.mean(losses);
        });
    detail::final_eval(model, evals, res.metrics);
    return res;
}

// --------------------------------------------------------------------------
// LISA baseline: partners share the anchor's label but come from the other
// ground-truth group, drawn from the same batch; the label stays the anchor's
// own. Anchors whose batch holds no cross-group classmate pass through
// unmodified, which at high rho is the common case for minority anchors' rarity
// to matter.

inline TrainResult train_lisa(Model& model, const Dataset& d, const TrainConfig& cfg,
                              const EvalSets& evals = {}) {
    detail::validate_common(d, cfg, model);
    cfg.lisa_lambda.validate();
    for (const Example& ex : d.examples)
        if (!ex.group)
            fail("lisa: example id ", ex.id, " carries no ground-truth group tag");

    TrainResult res;
    auto streams = detail::make_streams(cfg.seed);
    // pools[group][class], batch order; rebuilt per batch
    std::vector<std::vector<std::vector<std::size_t>>> by_group(
        2, std::vector<std::vector<std::size_t>>(d.num_classes));
    res.metrics.wall_clock_seconds = detail::run_epochs(
        model, d, cfg, streams.shuffle, res.metrics,
        [&](Graph& g, std::span<const std::size_t> batch) {
            for (auto& pools : by_group)
                for (auto& pool : pools) pool.clear();
            for (const std::size_t i : batch) {
                const Example& ex = d.examples[i];
                const std::size_t gidx = *ex.group == Group::minority ? 1 : 0;
                by_group[gidx][static_cast<std::size_t>(ex.label)].push_back(i);
            }
            std::vector<NodeId> losses;
            losses.reserve(batch.size());
            for (const std::size_t i : batch) {
                const Example& ex = d.examples[i];
                const std::size_t other_group = *ex.group == Group::minority ? 0 : 1;
                const auto& pool = by_group[other_group][static_cast<std::size_t>(ex.label)];
                NodeId z;
                if (pool.empty()) {
                    z = model.encode(g, ex.tokens);
                    ++res.stats.fallback_erm;
                } else {
                    const std::size_t j = pool[streams.method.below(pool.size())];
                    const Example& partner = d.examples[j];
                    ++res.stats.label_checks;
                    if (partner.label != ex.label) {
                        ++res.stats.label_violations;
                        fail("lisa: partner label ", partner.label, " differs from ",
                             ex.label);
                    }
                    if (*partner.group == *ex.group) {
                        ++res.stats.label_violations;
                        fail("lisa: partner for id ", ex.id, " is not cross-group");
                    }
                    const double lambda = cfg.lisa_lambda.sample(streams.method);
                    ++res.stats.lambda_draws;
                    z = g.convex_combine(model.encode(g, ex.tokens),
                                         model.encode(g, partner.tokens), lambda);
                    ++res.stats.interpolated;
                }
                losses.push_back(g.softmax_cross_entropy(model.logits_from(g, z), ex.label));
            }
            return g.mean(losses);
        });
    detail::final_eval(model, evals, res.metrics);
    return res;
}

// --------------------------------------------------------------------------
// Dispatch by method (harness entry point).

inline TrainResult train(Model& model, const Dataset& d, const TrainConfig& cfg,
                         const GroupAssignment* assignment = nullptr,
                         const EvalSets& evals = {}) {
    switch (cfg.method) {
        case Method::erm: return train_erm(model, d, cfg, evals);
        case Method::interpoll:
            if (!assignment) fail("train: interpoll needs a group assignment");
            return train_interpoll(model, d, *assignment, cfg, evals);
        case Method::mixup: return train_mixup(model, d, cfg, evals);
        case Method::lisa: return train_lisa(model, d, cfg, evals);
    }
    fail("train: bad method");
}

// --------------------------------------------------------------------------
// Auxiliary-model training for group inference. Each variant is plain ERM
// under a deliberately weakened regime.

struct AuxResult {
    Model model;
    MetricsRecord metrics;
    ModelConfig arch;
    TrainConfig schedule;
};

inline AuxResult train_auxiliary(const Dataset& d, const AuxiliaryVariant& variant,
                                 const ModelConfig& learner_arch,
                                 const TrainConfig& learner_schedule, std::uint64_t seed) {
    ModelConfig arch = learner_arch;
    arch.vocab_size = d.vocab_size;
    arch.num_classes = d.num_classes;
    arch.init_seed = derive_seed(seed, "aux-init");

    TrainConfig sched = learner_schedule;
    sched.method = Method::erm;
    sched.seed = derive_seed(seed, "aux-train");

    switch (variant.kind) {
        case AuxKind::tiny:
            arch.embed_dim = variant.tiny_embed_dim;
            arch.hidden_dims = variant.tiny_hidden_dims;
            if (variant.epochs) sched.epochs = *variant.epochs;
            break;
        case AuxKind::under_trained:
            sched.epochs = variant.epochs.value_or(3);
            break;
        case AuxKind::regularized:
            if (variant.epochs) sched.epochs = *variant.epochs;
            sched.optimizer.weight_decay = variant.weight_decay.value_or(1.0);
            break;
        case AuxKind::no_auxiliary:
            // the learner itself, caught early: same architecture, same
            // initialization, same data stream, stopped after two epochs
            arch.init_seed = learner_arch.init_seed;
            sched.seed = learner_schedule.seed;
            sched.epochs = variant.epochs.value_or(2);
            break;
    }
    if (variant.weight_decay && variant.kind != AuxKind::regularized)
        fail_config("auxiliary: weight_decay override only applies to the regularized variant");

    AuxResult out{Model(arch), {}, arch, sched};
    out.metrics = train_erm(out.model, d, sched).metrics;
    return out;
}

// --------------------------------------------------------------------------
// Metrics serialization: one CSV per run. Epoch rows leave the test columns
// empty; the final row leaves the train columns empty. Wall-clock time is
// deliberately absent so repeated runs produce identical bytes.

inline constexpr const char* metrics_csv_header =
    "epoch,train_acc,train_acc_minority,train_acc_majority,mean_loss,"
    "id_test_acc,ood_test_acc,minority_test_acc,majority_test_acc";

namespace detail {

inline std::string metrics_cell(double v) { return std::isnan(v) ? "" : fmt_double(v); }

inline double parse_metrics_cell(const std::string& s, const std::string& where) {
    if (s.empty()) return std::nan("");
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail("metrics: bad number '", s, "' in ", where);
    }
}

}  // namespace detail

inline std::string metrics_to_csv(const MetricsRecord& rec) {
    std::string out = msg(metrics_csv_header, "\n");
    for (const EpochStats& e : rec.epochs)
        out += msg(e.epoch, ",", fmt_double(e.train_acc), ",",
                   fmt_double(e.train_acc_minority), ",", fmt_double(e.train_acc_majority),
                   ",", fmt_double(e.mean_loss), ",,,,\n");
    out += msg("final,,,,,", detail::metrics_cell(rec.id_test_acc), ",",
               detail::metrics_cell(rec.ood_test_acc), ",",
               detail::metrics_cell(rec.minority_test_acc), ",",
               detail::metrics_cell(rec.majority_test_acc), "\n");
    return out;
}

inline void save_metrics(const MetricsRecord& rec, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("metrics: cannot open '", path, "' for writing");
    out << metrics_to_csv(rec);
    if (!out) fail("metrics: write to '", path, "' failed");
}

inline MetricsRecord metrics_from_csv(const std::string& text, const std::string& where) {
    std::vector<std::string> lines;
    std::string cur;
    for (const char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    if (lines.empty() || lines[0] != metrics_csv_header)
        fail("metrics: '", where, "' does not start with the expected header");

    MetricsRecord rec;
    bool saw_final = false;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        for (const char c : lines[li]) {
            if (c == ',') {
                cells.push_back(cell);
                cell.clear();
            } else {
                cell += c;
            }
        }
        cells.push_back(cell);
        const std::string where_line = msg(where, " line ", li + 1);
        if (cells.size() != 9) fail("metrics: ", where_line, " has ", cells.size(), " cells");
        if (cells[0] == "final") {
            if (saw_final) fail("metrics: ", where_line, " repeats the final row");
            saw_final = true;
            rec.id_test_acc = detail::parse_metrics_cell(cells[5], where_line);
            rec.ood_test_acc = detail::parse_metrics_cell(cells[6], where_line);
            rec.minority_test_acc = detail::parse_metrics_cell(cells[7], where_line);
            rec.majority_test_acc = detail::parse_metrics_cell(cells[8], where_line);
        } else {
            if (saw_final) fail("metrics: ", where_line, " follows the final row");
            EpochStats e;
            e.epoch = static_cast<std::size_t>(
                detail::parse_metrics_cell(cells[0], where_line));
            e.train_acc = detail::parse_metrics_cell(cells[1], where_line);
            e.train_acc_minority = detail::parse_metrics_cell(cells[2], where_line);
            e.train_acc_majority = detail::parse_metrics_cell(cells[3], where_line);
            e.mean_loss = detail::parse_metrics_cell(cells[4], where_line);
            rec.epochs.push_back(e);
        }
    }
    if (!saw_final) fail("metrics: '", where, "' has no final row");
    return rec;
}

inline MetricsRecord load_metrics(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("metrics: cannot open '", path, "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return metrics_from_csv(text, path);
}

}  // namespace interpoll
