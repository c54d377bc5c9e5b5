#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "io.hpp"
#include "probing.hpp"
#include "training.hpp"

namespace interpoll {

// --------------------------------------------------------------------------
// Experiment configuration: a flat key=value file covering the generator, the
// learner, the method roster, and the analysis toggles.

enum class GeneratorKind : std::uint8_t { planted, prefix };

struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::planted;
    std::size_t n = 10000;
    std::size_t test_n = 2000;
    std::size_t num_classes = 3;
    double rho = 0.95;  // planted majority fraction
    double p = 0.8;     // prefix alignment probability
    std::size_t sequence_length = 12;
    std::size_t core_tokens = 40;
    std::size_t core_slots = 5;
    double core_fidelity = 0.85;
    std::size_t noise_tokens = 60;
    std::uint64_t seed = 20240424;

    bool operator==(const GeneratorSpec&) const = default;

    PlantedConfig planted() const {
        PlantedConfig c;
        c.n = n;
        c.test_n = test_n;
        c.majority_fraction = rho;
        c.num_classes = num_classes;
        c.sequence_length = sequence_length;
        c.core_tokens_per_class = core_tokens;
        c.core_slots = core_slots;
        c.core_fidelity = core_fidelity;
        c.noise_tokens = noise_tokens;
        c.seed = seed;
        return c;
    }

    PrefixConfig prefix() const {
        PrefixConfig c;
        c.n = n;
        c.test_n = test_n;
        c.p = p;
        c.num_classes = num_classes;
        c.sequence_length = sequence_length;
        c.core_tokens_per_class = core_tokens;
        c.core_slots = core_slots;
        c.core_fidelity = core_fidelity;
        c.noise_tokens = noise_tokens;
        c.seed = seed;
        return c;
    }
};

struct AnalysisToggles {
    bool dynamics = true;   // per-epoch group accuracy curves
    bool probe = true;      // shortcut MDL per representation
    bool recall = true;     // auxiliary quality + downstream effect
    bool ratio = true;      // U(0,0.5) against U(0,1)
    bool variants = true;   // inverse direction, inter-class constraint
    bool layers = true;     // interpolation depth sweep
    bool noise = true;      // label flips
    bool prefix = true;     // indicator-token generator

    bool operator==(const AnalysisToggles&) const = default;
};

struct ExperimentConfig {
    std::string name = "default";
    std::string output_dir = "results";
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    GeneratorSpec generator{};
    ModelConfig learner{0, 32, {64}, 3, 0};  // vocab/classes/init filled per run
    TrainConfig schedule{};                  // template; method/seed set per run
    std::vector<Method> methods = {Method::erm, Method::interpoll, Method::mixup,
                                   Method::lisa};
    AuxiliaryVariant auxiliary{};
    // ablation knobs
    double noise_fraction = 0.05;
    std::uint64_t noise_seed = 77001;
    double prefix_p_high = 0.8;
    double prefix_p_low = 0.2;
    std::size_t prefix_n = 6000;
    std::size_t prefix_test_n = 2000;
    // the indicator correlation is weaker than the planted rho, so the prefix
    // core stays harder than the planted one or plain ERM walks away from the
    // indicator before the comparison can bite
    double prefix_core_fidelity = 0.65;
    std::size_t prefix_core_slots = 2;
    std::uint64_t prefix_seed = 88001;
    std::vector<std::size_t> layers_hidden = {64, 64};
    std::vector<std::size_t> layer_indices = {0, 1};
    AnalysisToggles analysis{};

    PrefixConfig prefix_track(double p) const {
        PrefixConfig pc = generator.prefix();
        pc.n = prefix_n;
        pc.test_n = prefix_test_n;
        pc.p = p;
        pc.core_fidelity = prefix_core_fidelity;
        pc.core_slots = prefix_core_slots;
        pc.seed = prefix_seed;  // runs re-derive per setting tag
        return pc;
    }

    void validate() const {
        if (seeds.empty()) fail_config("config: seed list is empty");
        {
            std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
            if (uniq.size() != seeds.size()) fail_config("config: duplicate seeds");
        }
        if (methods.empty()) fail_config("config: no methods requested");
        {
            std::set<Method> uniq(methods.begin(), methods.end());
            if (uniq.size() != methods.size()) fail_config("config: duplicate methods");
        }
        if (name.empty()) fail_config("config: experiment name is empty");
        if (output_dir.empty()) fail_config("config: output directory is empty");
        if (generator.kind == GeneratorKind::planted)
            interpoll::validate(generator.planted());
        else
            interpoll::validate(generator.prefix());
        schedule.policy.lambda_dist.validate();
        schedule.mixup_lambda.validate();
        schedule.lisa_lambda.validate();

        const auto has = [&](Method m) {
            for (const Method x : methods)
                if (x == m) return true;
            return false;
        };
        const bool planted = generator.kind == GeneratorKind::planted;
        if (analysis.probe && !planted)
            fail_config("config: the probe analysis needs the planted generator's "
                        "shortcut target");
        if (analysis.probe && !(has(Method::erm) && has(Method::interpoll)))
            fail_config("config: the probe analysis compares erm and interpoll");
        if ((analysis.dynamics || analysis.noise || analysis.ratio) &&
            !(has(Method::erm) && has(Method::interpoll)))
            fail_config(
                "config: dynamics/noise/ratio analyses need erm and interpoll runs");
        if ((analysis.ratio || analysis.variants || analysis.layers ||
             analysis.recall) &&
            !has(Method::interpoll))
            fail_config("config: interpolation ablations need an interpoll run");
        if ((analysis.ratio || analysis.variants || analysis.layers) && !planted)
            fail_config("config: interpolation ablations assume the planted generator");
        if (analysis.noise && !(noise_fraction >= 0.0 && noise_fraction <= 1.0))
            fail_config("config: noise fraction ", noise_fraction, " outside [0, 1]");
        if (analysis.prefix) {
            interpoll::validate(prefix_track(prefix_p_high));
            interpoll::validate(prefix_track(prefix_p_low));
        }
        if (analysis.layers) {
            if (layers_hidden.empty())
                fail_config("config: layer sweep needs a hidden stack");
            for (const std::size_t l : layer_indices)
                if (l >= layers_hidden.size())
                    fail_config("config: sweep layer ", l,
                                " exceeds the sweep encoder (", layers_hidden.size(),
                                " layers)");
        }
    }

    bool operator==(const ExperimentConfig&) const = default;
};

// --------------------------------------------------------------------------
// Config text format: `key = value` lines, '#' comments, strict keys.

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += msg(i ? "," : "", v[i]);
    return s;
}

inline std::string join_seeds(const std::vector<std::uint64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += msg(i ? "," : "", v[i]);
    return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (const char c : s) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    if (!cur.empty()) parts.push_back(cur);
    return parts;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& key) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail_config("config: key '", key, "' needs an unsigned integer, got '", s, "'");
    }
}

inline double parse_f64(const std::string& s, const std::string& key) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail_config("config: key '", key, "' needs a number, got '", s, "'");
    }
}

inline bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true") return true;
    if (s == "false") return false;
    fail_config("config: key '", key, "' needs true or false, got '", s, "'");
}

inline std::string dist_to_string(const LambdaDist& d) {
    return msg(d.kind == LambdaKind::uniform ? "uniform" : "beta", ":", fmt_double(d.a),
               ":", fmt_double(d.b));
}

inline LambdaDist parse_dist(const std::string& s, const std::string& key) {
    const auto c1 = s.find(':');
    const auto c2 = c1 == std::string::npos ? c1 : s.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        fail_config("config: key '", key, "' needs kind:a:b, got '", s, "'");
    const std::string kind = s.substr(0, c1);
    LambdaDist d;
    if (kind == "uniform")
        d.kind = LambdaKind::uniform;
    else if (kind == "beta")
        d.kind = LambdaKind::beta;
    else
        fail_config("config: key '", key, "' has unknown distribution '", kind, "'");
    d.a = parse_f64(s.substr(c1 + 1, c2 - c1 - 1), key);
    d.b = parse_f64(s.substr(c2 + 1), key);
    d.validate();
    return d;
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace detail

inline std::string serialize_config(const ExperimentConfig& c) {
    std::string s;
    const auto line = [&](const std::string& k, const std::string& v) {
        s += msg(k, " = ", v, "\n");
    };
    line("experiment.name", c.name);
    line("experiment.output_dir", c.output_dir);
    line("experiment.seeds", detail::join_seeds(c.seeds));
    line("generator.kind",
         c.generator.kind == GeneratorKind::planted ? "planted" : "prefix");
    line("generator.n", msg(c.generator.n));
    line("generator.test_n", msg(c.generator.test_n));
    line("generator.num_classes", msg(c.generator.num_classes));
    line("generator.rho", fmt_double(c.generator.rho));
    line("generator.p", fmt_double(c.generator.p));
    line("generator.sequence_length", msg(c.generator.sequence_length));
    line("generator.core_tokens", msg(c.generator.core_tokens));
    line("generator.core_slots", msg(c.generator.core_slots));
    line("generator.core_fidelity", fmt_double(c.generator.core_fidelity));
    line("generator.noise_tokens", msg(c.generator.noise_tokens));
    line("generator.seed", msg(c.generator.seed));
    line("learner.embed_dim", msg(c.learner.embed_dim));
    line("learner.hidden", detail::join_sizes(c.learner.hidden_dims));
    line("train.epochs", msg(c.schedule.epochs));
    line("train.batch_size", msg(c.schedule.batch_size));
    line("train.optimizer",
         c.schedule.optimizer.kind == OptimizerKind::sgd ? "sgd" : "adam");
    line("train.learning_rate", fmt_double(c.schedule.optimizer.learning_rate));
    line("train.weight_decay", fmt_double(c.schedule.optimizer.weight_decay));
    {
        std::string m;
        for (std::size_t i = 0; i < c.methods.size(); ++i)
            m += msg(i ? "," : "", method_name(c.methods[i]));
        line("methods", m);
    }
    line("auxiliary.kind", aux_kind_name(c.auxiliary.kind));
    line("auxiliary.epochs", c.auxiliary.epochs ? msg(*c.auxiliary.epochs) : "");
    line("auxiliary.weight_decay",
         c.auxiliary.weight_decay ? fmt_double(*c.auxiliary.weight_decay) : "");
    line("policy.direction",
         c.schedule.policy.direction == Direction::standard ? "standard" : "inverse");
    line("policy.constraint",
         c.schedule.policy.class_constraint == ClassConstraint::intra ? "intra"
                                                                      : "inter");
    line("policy.lambda", detail::dist_to_string(c.schedule.policy.lambda_dist));
    line("policy.layer", c.schedule.policy.layer ? msg(*c.schedule.policy.layer) : "");
    line("policy.stop_partner_gradient",
         c.schedule.policy.stop_partner_gradient ? "true" : "false");
    line("mixup.lambda", detail::dist_to_string(c.schedule.mixup_lambda));
    line("lisa.lambda", detail::dist_to_string(c.schedule.lisa_lambda));
    line("analysis.dynamics", c.analysis.dynamics ? "true" : "false");
    line("analysis.probe", c.analysis.probe ? "true" : "false");
    line("analysis.recall", c.analysis.recall ? "true" : "false");
    line("analysis.ratio", c.analysis.ratio ? "true" : "false");
    line("analysis.variants", c.analysis.variants ? "true" : "false");
    line("analysis.layers", c.analysis.layers ? "true" : "false");
    line("analysis.noise", c.analysis.noise ? "true" : "false");
    line("analysis.prefix", c.analysis.prefix ? "true" : "false");
    line("noise.fraction", fmt_double(c.noise_fraction));
    line("noise.seed", msg(c.noise_seed));
    line("prefix.p_high", fmt_double(c.prefix_p_high));
    line("prefix.p_low", fmt_double(c.prefix_p_low));
    line("prefix.n", msg(c.prefix_n));
    line("prefix.test_n", msg(c.prefix_test_n));
    line("prefix.core_fidelity", fmt_double(c.prefix_core_fidelity));
    line("prefix.core_slots", msg(c.prefix_core_slots));
    line("prefix.seed", msg(c.prefix_seed));
    line("layers.hidden", detail::join_sizes(c.layers_hidden));
    line("layers.indices", detail::join_sizes(c.layer_indices));
    return s;
}

inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::vector<std::string> lines;
    {
        std::string cur;
        for (const char ch : text) {
            if (ch == '\n') {
                lines.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        if (!cur.empty()) lines.push_back(cur);
    }
    for (std::size_t li = 0; li < lines.size(); ++li) {
        std::string line = lines[li];
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail_config("config: line ", li + 1, " is not key = value: '", line, "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));

        if (key == "experiment.name") c.name = val;
        else if (key == "experiment.output_dir") c.output_dir = val;
        else if (key == "experiment.seeds") {
            c.seeds.clear();
            for (const std::string& p : detail::split_list(val))
                c.seeds.push_back(detail::parse_u64(p, key));
        }
        else if (key == "generator.kind") {
            if (val == "planted") c.generator.kind = GeneratorKind::planted;
            else if (val == "prefix") c.generator.kind = GeneratorKind::prefix;
            else fail_config("config: unknown generator kind '", val, "'");
        }
        else if (key == "generator.n") c.generator.n = detail::parse_u64(val, key);
        else if (key == "generator.test_n")
            c.generator.test_n = detail::parse_u64(val, key);
        else if (key == "generator.num_classes")
            c.generator.num_classes = detail::parse_u64(val, key);
        else if (key == "generator.rho") c.generator.rho = detail::parse_f64(val, key);
        else if (key == "generator.p") c.generator.p = detail::parse_f64(val, key);
        else if (key == "generator.sequence_length")
            c.generator.sequence_length = detail::parse_u64(val, key);
        else if (key == "generator.core_tokens")
            c.generator.core_tokens = detail::parse_u64(val, key);
        else if (key == "generator.core_slots")
            c.generator.core_slots = detail::parse_u64(val, key);
        else if (key == "generator.core_fidelity")
            c.generator.core_fidelity = detail::parse_f64(val, key);
        else if (key == "generator.noise_tokens")
            c.generator.noise_tokens = detail::parse_u64(val, key);
        else if (key == "generator.seed") c.generator.seed = detail::parse_u64(val, key);
        else if (key == "learner.embed_dim")
            c.learner.embed_dim = detail::parse_u64(val, key);
        else if (key == "learner.hidden") {
            c.learner.hidden_dims.clear();
            for (const std::string& p : detail::split_list(val))
                c.learner.hidden_dims.push_back(detail::parse_u64(p, key));
        }
        else if (key == "train.epochs") c.schedule.epochs = detail::parse_u64(val, key);
        else if (key == "train.batch_size")
            c.schedule.batch_size = detail::parse_u64(val, key);
        else if (key == "train.optimizer") {
            if (val == "sgd") c.schedule.optimizer.kind = OptimizerKind::sgd;
            else if (val == "adam") c.schedule.optimizer.kind = OptimizerKind::adam;
            else fail_config("config: unknown optimizer '", val, "'");
        }
        else if (key == "train.learning_rate")
            c.schedule.optimizer.learning_rate = detail::parse_f64(val, key);
        else if (key == "train.weight_decay")
            c.schedule.optimizer.weight_decay = detail::parse_f64(val, key);
        else if (key == "methods") {
            c.methods.clear();
            for (const std::string& p : detail::split_list(val))
                c.methods.push_back(method_from_name(p));
        }
        else if (key == "auxiliary.kind") c.auxiliary.kind = aux_kind_from_name(val);
        else if (key == "auxiliary.epochs") {
            if (val.empty()) c.auxiliary.epochs.reset();
            else c.auxiliary.epochs = detail::parse_u64(val, key);
        }
        else if (key == "auxiliary.weight_decay") {
            if (val.empty()) c.auxiliary.weight_decay.reset();
            else c.auxiliary.weight_decay = detail::parse_f64(val, key);
        }
        else if (key == "policy.direction") {
            if (val == "standard") c.schedule.policy.direction = Direction::standard;
            else if (val == "inverse") c.schedule.policy.direction = Direction::inverse;
            else fail_config("config: unknown direction '", val, "'");
        }
        else if (key == "policy.constraint") {
            if (val == "intra")
                c.schedule.policy.class_constraint = ClassConstraint::intra;
            else if (val == "inter")
                c.schedule.policy.class_constraint = ClassConstraint::inter;
            else fail_config("config: unknown class constraint '", val, "'");
        }
        else if (key == "policy.lambda")
            c.schedule.policy.lambda_dist = detail::parse_dist(val, key);
        else if (key == "policy.layer") {
            if (val.empty()) c.schedule.policy.layer.reset();
            else c.schedule.policy.layer = detail::parse_u64(val, key);
        }
        else if (key == "policy.stop_partner_gradient")
            c.schedule.policy.stop_partner_gradient = detail::parse_bool(val, key);
        else if (key == "mixup.lambda")
            c.schedule.mixup_lambda = detail::parse_dist(val, key);
        else if (key == "lisa.lambda")
            c.schedule.lisa_lambda = detail::parse_dist(val, key);
        else if (key == "analysis.dynamics")
            c.analysis.dynamics = detail::parse_bool(val, key);
        else if (key == "analysis.probe") c.analysis.probe = detail::parse_bool(val, key);
        else if (key == "analysis.recall")
            c.analysis.recall = detail::parse_bool(val, key);
        else if (key == "analysis.ratio") c.analysis.ratio = detail::parse_bool(val, key);
        else if (key == "analysis.variants")
            c.analysis.variants = detail::parse_bool(val, key);
        else if (key == "analysis.layers")
            c.analysis.layers = detail::parse_bool(val, key);
        else if (key == "analysis.noise") c.analysis.noise = detail::parse_bool(val, key);
        else if (key == "analysis.prefix")
            c.analysis.prefix = detail::parse_bool(val, key);
        else if (key == "noise.fraction") c.noise_fraction = detail::parse_f64(val, key);
        else if (key == "noise.seed") c.noise_seed = detail::parse_u64(val, key);
        else if (key == "prefix.p_high") c.prefix_p_high = detail::parse_f64(val, key);
        else if (key == "prefix.p_low") c.prefix_p_low = detail::parse_f64(val, key);
        else if (key == "prefix.n") c.prefix_n = detail::parse_u64(val, key);
        else if (key == "prefix.test_n") c.prefix_test_n = detail::parse_u64(val, key);
        else if (key == "prefix.core_fidelity")
            c.prefix_core_fidelity = detail::parse_f64(val, key);
        else if (key == "prefix.core_slots")
            c.prefix_core_slots = detail::parse_u64(val, key);
        else if (key == "prefix.seed") c.prefix_seed = detail::parse_u64(val, key);
        else if (key == "layers.hidden") {
            c.layers_hidden.clear();
            for (const std::string& p : detail::split_list(val))
                c.layers_hidden.push_back(detail::parse_u64(p, key));
        }
        else if (key == "layers.indices") {
            c.layer_indices.clear();
            for (const std::string& p : detail::split_list(val))
                c.layer_indices.push_back(detail::parse_u64(p, key));
        }
        else
            fail_config("config: unknown key '", key, "' at line ", li + 1);
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_config("config: cannot open '", path, "'");
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return parse_config(text);
}

// The shipped defaults, fixed by pilot runs. The planted core (3 signal slots
// at fidelity 0.7) is noisy enough that six epochs of batch-16 SGD leave ERM
// leaning on the shortcut token while the core stays learnable through
// interpolation; longer schedules let every method converge and the
// between-method gaps collapse.
inline ExperimentConfig default_config() {
    ExperimentConfig c;
    c.generator.core_slots = 3;
    c.generator.core_fidelity = 0.7;
    c.schedule.epochs = 6;
    c.schedule.batch_size = 16;
    c.schedule.optimizer.learning_rate = 0.1;
    return c;
}

// --------------------------------------------------------------------------
// Aggregation

struct Agg {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n - 1)
    std::size_t n = 0;
    bool single_seed = false;
};

inline Agg aggregate(std::span<const double> xs) {
    if (xs.empty()) fail("aggregate: no values");
    Agg a;
    a.n = xs.size();
    double sum = 0.0;
    for (const double x : xs) sum += x;
    a.mean = sum / static_cast<double>(a.n);
    if (a.n == 1) {
        a.single_seed = true;
        a.stddev = 0.0;
    } else {
        double ss = 0.0;
        for (const double x : xs) ss += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(a.n - 1));
    }
    return a;
}

// per-seed differences a[i] - b[i]; the two lists must pair up
inline std::vector<double> paired_differences(std::span<const double> a,
                                              std::span<const double> b) {
    if (a.size() != b.size())
        fail("paired comparison: ", a.size(), " values against ", b.size());
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

// --------------------------------------------------------------------------
// Report: everything run_experiment computed, in memory.

struct RunRecord {
    std::string track;  // "main", "aux", "ratio", "variants", "layers", "noise",
                        // "prefix80", "prefix20"
    std::string label;  // method or variant name within the track
    std::uint64_t seed = 0;
    MetricsRecord metrics;
    TrainStats stats;
};

struct ProbeRow {
    std::string label;  // "erm", "interpoll", "random"
    std::uint64_t seed = 0;
    double compression = 0.0;
    double probe_accuracy = 0.0;
};

struct RecallRow {
    std::string variant;
    std::uint64_t seed = 0;
    double recall = 0.0;
};

struct Report {
    ExperimentConfig config;
    std::vector<RunRecord> runs;
    std::vector<ProbeRow> probes;
    std::vector<RecallRow> recalls;

    std::vector<const RunRecord*> select(const std::string& track,
                                         const std::string& label) const {
        std::vector<const RunRecord*> out;
        for (const RunRecord& r : runs)
            if (r.track == track && r.label == label) out.push_back(&r);
        return out;
    }

    // per-seed metric values, in the order the runs were recorded (seed order)
    std::vector<double> metric(const std::string& track, const std::string& label,
                               double MetricsRecord::* field) const {
        const auto rs = select(track, label);
        if (rs.empty()) fail("report: no runs for ", track, "/", label);
        std::vector<double> xs;
        for (const RunRecord* r : rs) xs.push_back(r->metrics.*field);
        return xs;
    }
};

// --------------------------------------------------------------------------
// The experiment runner.

namespace detail {

namespace fs = std::filesystem;

struct RunContext {
    const ExperimentConfig& cfg;
    fs::path out;
    Report* report;
    std::string* timing;
};

inline ModelConfig arch_for(const ExperimentConfig& cfg, std::size_t vocab,
                            std::uint64_t init_seed) {
    ModelConfig mc = cfg.learner;
    mc.vocab_size = vocab;
    mc.num_classes = cfg.generator.num_classes;
    mc.init_seed = init_seed;
    return mc;
}

// the architecture and schedule one main run at this seed uses; also what the
// no_auxiliary variant copies its init and data stream from
inline ModelConfig learner_arch(const ExperimentConfig& cfg, std::size_t vocab,
                                std::uint64_t seed) {
    return arch_for(cfg, vocab, derive_seed(seed, "model-init"));
}

inline TrainConfig learner_schedule(const ExperimentConfig& cfg, std::uint64_t seed) {
    TrainConfig tc = cfg.schedule;
    tc.seed = derive_seed(seed, "train");
    return tc;
}

// one training run: fresh model, train, persist metrics + checkpoint
inline void run_one(RunContext& ctx, const std::string& track, const std::string& label,
                    std::uint64_t seed, const ModelConfig& arch, const Dataset& train_set,
                    const EvalSets& evals, const TrainConfig& tc,
                    const GroupAssignment* assignment) {
    RunRecord rec;
    rec.track = track;
    rec.label = label;
    rec.seed = seed;
    try {
        Model model(arch);
        const TrainResult res = train(model, train_set, tc, assignment, evals);
        rec.metrics = res.metrics;
        rec.stats = res.stats;
        const fs::path dir = ctx.out / "runs" / track / label / msg("seed", seed);
        fs::create_directories(dir);
        save_metrics(rec.metrics, (dir / "metrics.csv").string());
        model.save((dir / "model.bin").string());
        *ctx.timing += msg(track, "/", label, "/seed", seed, " ",
                           fmt_double(rec.metrics.wall_clock_seconds), "\n");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        fail("run ", track, "/", label, " seed ", seed, ": ", e.what());
    }
    ctx.report->runs.push_back(std::move(rec));
}

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) fail("cannot open '", p.string(), "' for writing");
    out << text;
    if (!out) fail("write to '", p.string(), "' failed");
}

// csv builder for (label, seed, values...) tables with mean/std footer rows
struct TableBuilder {
    std::string text;

    explicit TableBuilder(const std::string& header) { text = header + "\n"; }

    void row(const std::string& label, const std::string& seed,
             const std::vector<double>& vals) {
        text += label;
        text += ',';
        text += seed;
        for (const double v : vals) {
            text += ',';
            text += std::isnan(v) ? "" : fmt_double(v);
        }
        text += '\n';
    }

    // per-seed block plus mean and std rows for one label
    void block(const std::string& label, std::span<const std::uint64_t> seeds,
               const std::vector<std::vector<double>>& cols) {
        for (const std::vector<double>& c : cols)
            if (c.size() != seeds.size())
                fail("table: ", c.size(), " values for ", seeds.size(), " seeds under ",
                     label);
        std::vector<double> vals(cols.size());
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            for (std::size_t c = 0; c < cols.size(); ++c) vals[c] = cols[c][i];
            row(label, msg(seeds[i]), vals);
        }
        std::vector<double> means(cols.size()), stds(cols.size());
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const Agg a = aggregate(cols[c]);
            means[c] = a.mean;
            stds[c] = a.stddev;
        }
        row(label, "mean", means);
        row(label, "std", stds);
    }
};

}  // namespace detail

inline Report run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();

    Report report;
    report.config = cfg;
    std::string timing;
    detail::RunContext ctx{cfg, fs::path(cfg.output_dir), &report, &timing};
    fs::create_directories(ctx.out / "data");
    fs::create_directories(ctx.out / "analysis");
    detail::write_text(ctx.out / "config.txt", serialize_config(cfg));

    // ---- data ------------------------------------------------------------
    Dataset train_set, id_test, ood_test;
    const bool planted = cfg.generator.kind == GeneratorKind::planted;
    if (planted) {
        PlantedSplits s = gen_planted_shortcut(cfg.generator.planted());
        train_set = std::move(s.train);
        id_test = std::move(s.id_test);
        ood_test = std::move(s.ood_test);
        save_dataset(id_test, (ctx.out / "data" / "id_test.jsonl").string());
        save_dataset(ood_test, (ctx.out / "data" / "ood_test.jsonl").string());
    } else {
        PrefixSplits s = gen_prefix_shortcut(cfg.generator.prefix());
        train_set = std::move(s.train);
        ood_test = std::move(s.test);
        save_dataset(ood_test, (ctx.out / "data" / "test.jsonl").string());
    }
    save_dataset(train_set, (ctx.out / "data" / "train.jsonl").string());
    EvalSets evals;
    if (planted) evals.id_test = &id_test;
    evals.ood_test = &ood_test;

    // ---- auxiliary + minority assignment per seed ------------------------
    const std::string aux_name = aux_kind_name(cfg.auxiliary.kind);
    std::map<std::uint64_t, GroupAssignment> assignments;
    for (const std::uint64_t seed : cfg.seeds) {
        const AuxResult aux = train_auxiliary(
            train_set, cfg.auxiliary, detail::learner_arch(cfg, train_set.vocab_size, seed),
            detail::learner_schedule(cfg, seed), seed);
        GroupAssignment a =
            infer_min_maj(aux.model, train_set, msg("aux=", aux_name, " seed=", seed));
        save_assignment(
            a, (ctx.out / "data" / msg("assignment_", aux_name, "_seed", seed, ".jsonl"))
                   .string());
        assignments.emplace(seed, std::move(a));
    }

    // ---- main runs -------------------------------------------------------
    for (const Method m : cfg.methods) {
        for (const std::uint64_t seed : cfg.seeds) {
            TrainConfig tc = detail::learner_schedule(cfg, seed);
            tc.method = m;
            detail::run_one(ctx, "main", method_name(m), seed,
                            detail::learner_arch(cfg, train_set.vocab_size, seed),
                            train_set, evals, tc,
                            m == Method::interpoll ? &assignments.at(seed) : nullptr);
        }
    }

    // ---- recall + downstream effect of each auxiliary variant ------------
    if (cfg.analysis.recall) {
        const std::vector<AuxKind> kinds = {AuxKind::tiny, AuxKind::under_trained,
                                            AuxKind::regularized, AuxKind::no_auxiliary};
        for (const AuxKind kind : kinds) {
            for (const std::uint64_t seed : cfg.seeds) {
                GroupAssignment a;
                if (kind == cfg.auxiliary.kind) {
                    a = assignments.at(seed);
                } else {
                    AuxiliaryVariant v;
                    v.kind = kind;
                    const AuxResult aux = train_auxiliary(
                        train_set, v, detail::learner_arch(cfg, train_set.vocab_size, seed),
                        detail::learner_schedule(cfg, seed), seed);
                    a = infer_min_maj(aux.model, train_set,
                                      msg("aux=", aux_kind_name(kind), " seed=", seed));
                }
                report.recalls.push_back(
                    {aux_kind_name(kind), seed, minority_recall(a, train_set)});
                if (kind == cfg.auxiliary.kind) continue;  // the main runs cover it
                TrainConfig tc = detail::learner_schedule(cfg, seed);
                tc.method = Method::interpoll;
                detail::run_one(ctx, "aux", aux_kind_name(kind), seed,
                                detail::learner_arch(cfg, train_set.vocab_size, seed),
                                train_set, evals, tc, &a);
            }
        }
    }

    // ---- mixing-ratio ablation: U(0,1) against the default U(0,0.5) ------
    if (cfg.analysis.ratio) {
        for (const std::uint64_t seed : cfg.seeds) {
            TrainConfig tc = detail::learner_schedule(cfg, seed);
            tc.method = Method::interpoll;
            tc.policy.lambda_dist = {LambdaKind::uniform, 0.0, 1.0};
            detail::run_one(ctx, "ratio", "u_full", seed,
                            detail::learner_arch(cfg, train_set.vocab_size, seed),
                            train_set, evals, tc, &assignments.at(seed));
        }
    }

    // ---- policy variants: inverse direction, inter-class partners --------
    if (cfg.analysis.variants) {
        InterpolationPolicy inverse = cfg.schedule.policy;
        inverse.direction = Direction::inverse;
        InterpolationPolicy inter = cfg.schedule.policy;
        inter.class_constraint = ClassConstraint::inter;
        const std::vector<std::pair<std::string, InterpolationPolicy>> variants = {
            {"inverse", inverse}, {"inter", inter}};
        for (const auto& [label, policy] : variants) {
            for (const std::uint64_t seed : cfg.seeds) {
                TrainConfig tc = detail::learner_schedule(cfg, seed);
                tc.method = Method::interpoll;
                tc.policy = policy;
                detail::run_one(ctx, "variants", label, seed,
                                detail::learner_arch(cfg, train_set.vocab_size, seed),
                                train_set, evals, tc, &assignments.at(seed));
            }
        }
    }

    // ---- interpolation depth sweep on a deeper encoder -------------------
    if (cfg.analysis.layers) {
        for (const std::size_t layer : cfg.layer_indices) {
            for (const std::uint64_t seed : cfg.seeds) {
                TrainConfig tc = detail::learner_schedule(cfg, seed);
                tc.method = Method::interpoll;
                tc.policy.layer = layer;
                ModelConfig arch = detail::arch_for(cfg, train_set.vocab_size,
                                                    derive_seed(seed, "deep-init"));
                arch.hidden_dims = cfg.layers_hidden;
                detail::run_one(ctx, "layers", msg("layer", layer), seed, arch, train_set,
                                evals, tc, &assignments.at(seed));
            }
        }
    }

    // ---- label noise -----------------------------------------------------
    if (cfg.analysis.noise) {
        const Dataset noisy =
            inject_label_noise(train_set, cfg.noise_fraction, cfg.noise_seed);
        save_dataset(noisy, (ctx.out / "data" / "train_noisy.jsonl").string());
        for (const std::uint64_t seed : cfg.seeds) {
            const AuxResult aux = train_auxiliary(
                noisy, cfg.auxiliary, detail::learner_arch(cfg, noisy.vocab_size, seed),
                detail::learner_schedule(cfg, seed), derive_seed(seed, "noise-aux"));
            const GroupAssignment a =
                infer_min_maj(aux.model, noisy, msg("aux=", aux_name, " noisy seed=", seed));
            for (const Method m : {Method::erm, Method::interpoll}) {
                TrainConfig tc = detail::learner_schedule(cfg, seed);
                tc.method = m;
                detail::run_one(ctx, "noise", method_name(m), seed,
                                detail::learner_arch(cfg, noisy.vocab_size, seed), noisy,
                                evals, tc, m == Method::interpoll ? &a : nullptr);
            }
        }
    }

    // ---- indicator-token generator at strong and weak correlation --------
    if (cfg.analysis.prefix) {
        const std::vector<std::pair<std::string, double>> settings = {
            {"prefix80", cfg.prefix_p_high}, {"prefix20", cfg.prefix_p_low}};
        for (const auto& [tag, p] : settings) {
            PrefixConfig pc = cfg.prefix_track(p);
            pc.seed = derive_seed(cfg.prefix_seed, tag);
            PrefixSplits s = gen_prefix_shortcut(pc);
            save_dataset(s.train, (ctx.out / "data" / msg(tag, "_train.jsonl")).string());
            save_dataset(s.test, (ctx.out / "data" / msg(tag, "_test.jsonl")).string());
            EvalSets pevals;
            pevals.ood_test = &s.test;
            for (const std::uint64_t seed : cfg.seeds) {
                const AuxResult aux = train_auxiliary(
                    s.train, cfg.auxiliary,
                    detail::learner_arch(cfg, s.train.vocab_size, seed),
                    detail::learner_schedule(cfg, seed), derive_seed(seed, tag));
                const GroupAssignment a = infer_min_maj(
                    aux.model, s.train, msg("aux=", aux_name, " ", tag, " seed=", seed));
                for (const Method m : {Method::erm, Method::interpoll}) {
                    TrainConfig tc = detail::learner_schedule(cfg, seed);
                    tc.method = m;
                    detail::run_one(ctx, tag, method_name(m), seed,
                                    detail::learner_arch(cfg, s.train.vocab_size, seed),
                                    s.train, pevals, tc,
                                    m == Method::interpoll ? &a : nullptr);
                }
            }
        }
    }

    // ---- how much shortcut information survives in the representation ----
    if (cfg.analysis.probe) {
        for (const std::uint64_t seed : cfg.seeds) {
            for (const std::string label : {"erm", "interpoll"}) {
                const Model model = Model::load(
                    (ctx.out / "runs" / "main" / label / msg("seed", seed) / "model.bin")
                        .string());
                const ProbeTask task =
                    shortcut_probe_task(model, ood_test, derive_seed(seed, "probe"));
                const ProbeResult res = mdl_probe(task);
                report.probes.push_back({label, seed, res.compression, res.probe_accuracy});
            }
            // matched-shape gaussian representations: the no-information floor
            {
                const Model model = Model::load(
                    (ctx.out / "runs" / "main" / "erm" / msg("seed", seed) / "model.bin")
                        .string());
                ProbeTask task =
                    shortcut_probe_task(model, ood_test, derive_seed(seed, "probe"));
                Rng rng(derive_seed(seed, "random-reps"));
                for (auto& row : task.representations)
                    for (double& v : row) v = rng.normal();
                const ProbeResult res = mdl_probe(task);
                report.probes.push_back(
                    {"random", seed, res.compression, res.probe_accuracy});
            }
        }
    }

    // ---- analysis tables -------------------------------------------------
    const std::span<const std::uint64_t> seeds(cfg.seeds);
    const auto col = [&](const std::string& track, const std::string& label,
                         double MetricsRecord::* field) {
        return report.metric(track, label, field);
    };

    {
        detail::TableBuilder t(
            "method,seed,id_test_acc,ood_test_acc,minority_test_acc,majority_test_acc");
        for (const Method m : cfg.methods) {
            const std::string label = method_name(m);
            t.block(label, seeds,
                    {col("main", label, &MetricsRecord::id_test_acc),
                     col("main", label, &MetricsRecord::ood_test_acc),
                     col("main", label, &MetricsRecord::minority_test_acc),
                     col("main", label, &MetricsRecord::majority_test_acc)});
        }
        detail::write_text(ctx.out / "analysis" / "table1_main.csv", t.text);
    }

    if (cfg.analysis.dynamics) {
        // per-epoch train accuracy by group, averaged over seeds
        detail::TableBuilder t(
            "epoch,agg,erm_minority,erm_majority,interpoll_minority,interpoll_majority");
        const auto curve = [&](const std::string& label, std::size_t epoch_idx,
                               double EpochStats::* field) {
            std::vector<double> xs;
            for (const RunRecord* r : report.select("main", label)) {
                if (epoch_idx >= r->metrics.epochs.size())
                    fail("dynamics: run ", label, "/seed", r->seed, " lacks epoch ",
                         epoch_idx + 1);
                xs.push_back(r->metrics.epochs[epoch_idx].*field);
            }
            return aggregate(xs).mean;
        };
        for (std::size_t e = 0; e < cfg.schedule.epochs; ++e) {
            t.row(msg(e + 1), "mean",
                  {curve("erm", e, &EpochStats::train_acc_minority),
                   curve("erm", e, &EpochStats::train_acc_majority),
                   curve("interpoll", e, &EpochStats::train_acc_minority),
                   curve("interpoll", e, &EpochStats::train_acc_majority)});
        }
        detail::write_text(ctx.out / "analysis" / "fig5_dynamics.csv", t.text);
    }

    if (cfg.analysis.recall) {
        detail::TableBuilder t8("variant,seed,recall");
        detail::TableBuilder t4("variant,seed,id_test_acc,minority_test_acc");
        for (const std::string variant :
             {"tiny", "under_trained", "regularized", "no_auxiliary"}) {
            std::vector<double> rec;
            for (const RecallRow& r : report.recalls)
                if (r.variant == variant) rec.push_back(r.recall);
            t8.block(variant, seeds, {rec});
            const std::string track = variant == aux_name ? "main" : "aux";
            const std::string label = variant == aux_name ? "interpoll" : variant;
            t4.block(variant, seeds,
                     {col(track, label, &MetricsRecord::id_test_acc),
                      col(track, label, &MetricsRecord::minority_test_acc)});
        }
        detail::write_text(ctx.out / "analysis" / "table8_recall.csv", t8.text);
        detail::write_text(ctx.out / "analysis" / "table4_auxiliary.csv", t4.text);
    }

    if (cfg.analysis.ratio) {
        detail::TableBuilder t("policy,seed,id_test_acc,minority_test_acc");
        t.block("u_half", seeds,
                {col("main", "interpoll", &MetricsRecord::id_test_acc),
                 col("main", "interpoll", &MetricsRecord::minority_test_acc)});
        t.block("u_full", seeds,
                {col("ratio", "u_full", &MetricsRecord::id_test_acc),
                 col("ratio", "u_full", &MetricsRecord::minority_test_acc)});
        detail::write_text(ctx.out / "analysis" / "fig3_ratio.csv", t.text);
    }

    if (cfg.analysis.variants) {
        detail::TableBuilder t(
            "variant,seed,id_test_acc,minority_test_acc,majority_test_acc");
        t.block("standard", seeds,
                {col("main", "interpoll", &MetricsRecord::id_test_acc),
                 col("main", "interpoll", &MetricsRecord::minority_test_acc),
                 col("main", "interpoll", &MetricsRecord::majority_test_acc)});
        for (const std::string label : {"inverse", "inter"})
            t.block(label, seeds,
                    {col("variants", label, &MetricsRecord::id_test_acc),
                     col("variants", label, &MetricsRecord::minority_test_acc),
                     col("variants", label, &MetricsRecord::majority_test_acc)});
        detail::write_text(ctx.out / "analysis" / "fig4_variants.csv", t.text);
    }

    if (cfg.analysis.layers) {
        detail::TableBuilder t("layer,seed,id_test_acc,minority_test_acc");
        for (const std::size_t layer : cfg.layer_indices) {
            const std::string label = msg("layer", layer);
            t.block(label, seeds,
                    {col("layers", label, &MetricsRecord::id_test_acc),
                     col("layers", label, &MetricsRecord::minority_test_acc)});
        }
        detail::write_text(ctx.out / "analysis" / "fig6_layers.csv", t.text);
    }

    if (cfg.analysis.noise) {
        detail::TableBuilder t("method,seed,clean_minority,noisy_minority,drop");
        for (const std::string label : {"erm", "interpoll"}) {
            const auto clean = col("main", label, &MetricsRecord::minority_test_acc);
            const auto noisy = col("noise", label, &MetricsRecord::minority_test_acc);
            t.block(label, seeds, {clean, noisy, paired_differences(clean, noisy)});
        }
        detail::write_text(ctx.out / "analysis" / "table6_noise.csv", t.text);
    }

    if (cfg.analysis.prefix) {
        detail::TableBuilder t("p,method,seed,test_acc");
        const std::vector<std::pair<std::string, double>> settings = {
            {"prefix80", cfg.prefix_p_high}, {"prefix20", cfg.prefix_p_low}};
        for (const auto& [tag, p] : settings) {
            for (const std::string label : {"erm", "interpoll"}) {
                const auto accs = col(tag, label, &MetricsRecord::ood_test_acc);
                for (std::size_t i = 0; i < seeds.size(); ++i)
                    t.row(fmt_double(p), msg(label, ",", seeds[i]), {accs[i]});
                const Agg a = aggregate(accs);
                t.row(fmt_double(p), msg(label, ",mean"), {a.mean});
                t.row(fmt_double(p), msg(label, ",std"), {a.stddev});
            }
        }
        detail::write_text(ctx.out / "analysis" / "table11_prefix.csv", t.text);
    }

    if (cfg.analysis.probe) {
        detail::TableBuilder t("representation,seed,compression,probe_accuracy");
        for (const std::string label : {"erm", "interpoll", "random"}) {
            std::vector<double> comp, acc;
            for (const ProbeRow& r : report.probes)
                if (r.label == label) {
                    comp.push_back(r.compression);
                    acc.push_back(r.probe_accuracy);
                }
            t.block(label, seeds, {comp, acc});
        }
        detail::write_text(ctx.out / "analysis" / "table5_probe.csv", t.text);
    }

    detail::write_text(ctx.out / "timing.txt", timing);
    return report;
}

// --------------------------------------------------------------------------
// Re-aggregation from the raw per-seed files on disk (the `report` CLI path,
// and the check that aggregates are recomputable from what was written).

inline std::string aggregate_main_from_disk(const std::string& out_dir) {
    namespace fs = std::filesystem;
    const fs::path main_dir = fs::path(out_dir) / "runs" / "main";
    if (!fs::is_directory(main_dir))
        fail("report: '", main_dir.string(), "' is not a directory");
    std::vector<std::string> labels;
    for (const auto& e : fs::directory_iterator(main_dir))
        if (e.is_directory()) labels.push_back(e.path().filename().string());
    std::sort(labels.begin(), labels.end());
    if (labels.empty())
        fail("report: no method directories under '", main_dir.string(), "'");

    detail::TableBuilder t(
        "method,seed,id_test_acc,ood_test_acc,minority_test_acc,majority_test_acc");
    std::optional<std::vector<std::uint64_t>> seed_set;
    for (const std::string& label : labels) {
        std::vector<std::uint64_t> label_seeds;
        for (const auto& e : fs::directory_iterator(main_dir / label)) {
            const std::string name = e.path().filename().string();
            if (e.is_directory() && name.rfind("seed", 0) == 0)
                label_seeds.push_back(detail::parse_u64(name.substr(4), "seed directory"));
        }
        std::sort(label_seeds.begin(), label_seeds.end());
        if (seed_set && *seed_set != label_seeds)
            fail("report: method '", label, "' has a different seed set");
        seed_set = label_seeds;
        std::vector<double> id, ood, mino, majo;
        for (const std::uint64_t s : label_seeds) {
            const MetricsRecord m =
                load_metrics((main_dir / label / msg("seed", s) / "metrics.csv").string());
            id.push_back(m.id_test_acc);
            ood.push_back(m.ood_test_acc);
            mino.push_back(m.minority_test_acc);
            majo.push_back(m.majority_test_acc);
        }
        t.block(label, *seed_set, {id, ood, mino, majo});
    }
    return t.text;
}

}  // namespace interpoll
