#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"

namespace interpoll {

enum class Split : std::uint8_t { train, id_test, ood_test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::id_test: return "id_test";
        case Split::ood_test: return "ood_test";
    }
    return "?";
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "id_test") return Split::id_test;
    if (s == "ood_test") return Split::ood_test;
    fail("unknown split name '", s, "'");
}

// Ground-truth group tag: majority examples are the ones whose planted
// shortcut token agrees with their label.
enum class Group : std::uint8_t { majority, minority };

inline const char* group_name(Group g) {
    return g == Group::majority ? "majority" : "minority";
}

struct Example {
    std::int64_t id = 0;
    std::vector<std::int32_t> tokens;
    std::int32_t label = 0;
    std::optional<Group> group;
    std::optional<bool> shortcut_aligned;

    bool operator==(const Example&) const = default;
};

struct Dataset {
    std::vector<Example> examples;
    std::size_t vocab_size = 0;
    std::size_t num_classes = 0;
    Split split = Split::train;
    std::string provenance;

    std::size_t size() const { return examples.size(); }

    bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------
// Planted-shortcut generator: each example carries weakly predictive "core"
// tokens plus exactly one shortcut token that either agrees with the label
// (majority) or encodes a different class (minority). The core signal is
// deliberately noisier than the shortcut so that plain ERM latches onto the
// shortcut first.

struct PlantedConfig {
    std::size_t n = 10000;
    double majority_fraction = 0.95;  // rho, in (0.5, 1)
    std::size_t core_tokens_per_class = 40;
    std::size_t shortcut_tokens_per_class = 1;
    std::size_t sequence_length = 12;
    std::uint64_t seed = 0;
    // texture knobs with workable defaults
    std::size_t num_classes = 3;
    std::size_t test_n = 2000;
    std::size_t core_slots = 5;      // how many of the base slots carry signal
    double core_fidelity = 0.85;     // chance a signal slot draws from the true class pool
    std::size_t noise_tokens = 60;   // shared pool for the remaining slots
};

// Token-id geometry of a planted vocabulary: core pools per class, then
// shortcut pools per class, then the shared noise pool.
struct PlantedLayout {
    std::size_t num_classes = 0;
    std::size_t core_per_class = 0;
    std::size_t shortcut_per_class = 0;
    std::size_t noise_tokens = 0;

    static PlantedLayout from(const PlantedConfig& cfg) {
        return {cfg.num_classes, cfg.core_tokens_per_class, cfg.shortcut_tokens_per_class,
                cfg.noise_tokens};
    }

    std::size_t core_count() const { return num_classes * core_per_class; }
    std::size_t shortcut_begin() const { return core_count(); }
    std::size_t shortcut_count() const { return num_classes * shortcut_per_class; }
    std::size_t noise_begin() const { return shortcut_begin() + shortcut_count(); }
    std::size_t vocab_size() const { return noise_begin() + noise_tokens; }

    std::int32_t core_token(std::size_t cls, std::size_t i) const {
        return static_cast<std::int32_t>(cls * core_per_class + i);
    }
    std::int32_t shortcut_token(std::size_t cls, std::size_t i) const {
        return static_cast<std::int32_t>(shortcut_begin() + cls * shortcut_per_class + i);
    }
    bool is_shortcut(std::int32_t t) const {
        const auto u = static_cast<std::size_t>(t);
        return t >= 0 && u >= shortcut_begin() && u < noise_begin();
    }
    std::int32_t shortcut_class(std::int32_t t) const {
        if (!is_shortcut(t)) fail("token ", t, " is not a shortcut token");
        return static_cast<std::int32_t>((static_cast<std::size_t>(t) - shortcut_begin()) /
                                         shortcut_per_class);
    }
};

// The class encoded by an example's (unique) shortcut token; the probing
// target for planted datasets.
inline std::int32_t shortcut_target(const Example& ex, const PlantedLayout& layout) {
    std::int32_t found = -1;
    for (std::int32_t t : ex.tokens) {
        if (!layout.is_shortcut(t)) continue;
        if (found >= 0) fail("example ", ex.id, " carries more than one shortcut token");
        found = layout.shortcut_class(t);
    }
    if (found < 0) fail("example ", ex.id, " carries no shortcut token");
    return found;
}

struct PlantedSplits {
    Dataset train, id_test, ood_test;
};

namespace detail {

inline std::vector<std::size_t> balanced_class_sizes(std::size_t n, std::size_t k) {
    std::vector<std::size_t> sizes(k, n / k);
    for (std::size_t c = 0; c < n % k; ++c) ++sizes[c];
    return sizes;
}

struct Slot {
    std::int32_t label;
    bool aligned;
};

inline Dataset planted_split(const PlantedConfig& cfg, const PlantedLayout& layout, Rng& rng,
                             Split split, std::size_t count, std::int64_t id_base,
                             bool ood_rate) {
    const std::size_t k = cfg.num_classes;
    std::vector<Slot> slots;
    slots.reserve(count);
    const auto sizes = balanced_class_sizes(count, k);
    for (std::size_t c = 0; c < k; ++c) {
        const double rate = ood_rate ? 1.0 / static_cast<double>(k) : cfg.majority_fraction;
        const auto aligned =
            static_cast<std::size_t>(std::llround(rate * static_cast<double>(sizes[c])));
        for (std::size_t i = 0; i < sizes[c]; ++i)
            slots.push_back({static_cast<std::int32_t>(c), i < aligned});
    }
    rng.shuffle(slots);

    Dataset d;
    d.vocab_size = layout.vocab_size();
    d.num_classes = k;
    d.split = split;
    d.examples.reserve(count);
    const std::size_t filler = cfg.sequence_length - 1 - cfg.core_slots;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto [label, aligned] = slots[i];
        Example ex;
        ex.id = id_base + static_cast<std::int64_t>(i);
        ex.label = label;
        ex.group = aligned ? Group::majority : Group::minority;
        ex.shortcut_aligned = aligned;
        ex.tokens.reserve(cfg.sequence_length);
        for (std::size_t s = 0; s < cfg.core_slots; ++s) {
            if (rng.next_unit() < cfg.core_fidelity)
                ex.tokens.push_back(layout.core_token(static_cast<std::size_t>(label),
                                                      rng.below(layout.core_per_class)));
            else
                ex.tokens.push_back(static_cast<std::int32_t>(rng.below(layout.core_count())));
        }
        for (std::size_t s = 0; s < filler; ++s)
            ex.tokens.push_back(
                static_cast<std::int32_t>(layout.noise_begin() + rng.below(layout.noise_tokens)));
        std::size_t shortcut_cls;
        if (aligned) {
            shortcut_cls = static_cast<std::size_t>(label);
        } else {
            shortcut_cls = rng.below(k - 1);
            if (shortcut_cls >= static_cast<std::size_t>(label)) ++shortcut_cls;
        }
        ex.tokens.push_back(layout.shortcut_token(shortcut_cls, rng.below(layout.shortcut_per_class)));
        d.examples.push_back(std::move(ex));
    }
    return d;
}

}  // namespace detail

inline std::string planted_provenance(const PlantedConfig& cfg) {
    return msg("planted n=", cfg.n, " test_n=", cfg.test_n, " K=", cfg.num_classes,
               " rho=", fmt_double(cfg.majority_fraction), " core=", cfg.core_tokens_per_class,
               " shortcut=", cfg.shortcut_tokens_per_class, " seq=", cfg.sequence_length,
               " slots=", cfg.core_slots, " fidelity=", fmt_double(cfg.core_fidelity),
               " noise=", cfg.noise_tokens, " seed=", cfg.seed);
}

inline void validate(const PlantedConfig& cfg) {
    if (!(cfg.majority_fraction > 0.5 && cfg.majority_fraction < 1.0))
        fail_config("planted: majority_fraction must lie in (0.5, 1), got ",
                    cfg.majority_fraction);
    if (cfg.n == 0 || cfg.test_n == 0) fail_config("planted: empty split requested");
    if (cfg.num_classes < 2) fail_config("planted: need at least 2 classes");
    if (cfg.core_tokens_per_class == 0 || cfg.shortcut_tokens_per_class == 0)
        fail_config("planted: token pools must be non-empty");
    if (cfg.sequence_length < cfg.core_slots + 1)
        fail_config("planted: sequence_length ", cfg.sequence_length,
                    " too short for ", cfg.core_slots, " core slots plus a shortcut token");
    if (cfg.sequence_length - 1 - cfg.core_slots > 0 && cfg.noise_tokens == 0)
        fail_config("planted: filler slots exist but the noise pool is empty");
    if (!(cfg.core_fidelity >= 0.0 && cfg.core_fidelity <= 1.0))
        fail_config("planted: core_fidelity must lie in [0, 1], got ", cfg.core_fidelity);
}

inline PlantedSplits gen_planted_shortcut(const PlantedConfig& cfg) {
    validate(cfg);
    const PlantedLayout layout = PlantedLayout::from(cfg);
    Rng rng(derive_seed(cfg.seed, "planted"));
    PlantedSplits out;
    const auto n = static_cast<std::int64_t>(cfg.n);
    const auto t = static_cast<std::int64_t>(cfg.test_n);
    out.train = detail::planted_split(cfg, layout, rng, Split::train, cfg.n, 0, false);
    out.id_test = detail::planted_split(cfg, layout, rng, Split::id_test, cfg.test_n, n, false);
    out.ood_test =
        detail::planted_split(cfg, layout, rng, Split::ood_test, cfg.test_n, n + t, true);
    const std::string prov = planted_provenance(cfg);
    out.train.provenance = prov;
    out.id_test.provenance = prov;
    out.ood_test.provenance = prov;
    return out;
}

// ---------------------------------------------------------------------------
// Prefix-shortcut generator: position 0 holds a label-indicator token that
// matches the true label with probability p during training and is uniform at
// test time. The rest of the sequence reuses the core/noise construction.

struct PrefixConfig {
    std::size_t n = 10000;
    double p = 0.8;
    std::size_t num_classes = 3;
    std::uint64_t seed = 0;
    // texture knobs
    std::size_t test_n = 2000;
    std::size_t sequence_length = 12;
    std::size_t core_tokens_per_class = 40;
    std::size_t core_slots = 5;
    double core_fidelity = 0.85;
    std::size_t noise_tokens = 60;
};

// Vocabulary: K indicator tokens first, then core pools, then noise.
struct PrefixLayout {
    std::size_t num_classes = 0;
    std::size_t core_per_class = 0;
    std::size_t noise_tokens = 0;

    static PrefixLayout from(const PrefixConfig& cfg) {
        return {cfg.num_classes, cfg.core_tokens_per_class, cfg.noise_tokens};
    }

    std::size_t core_begin() const { return num_classes; }
    std::size_t core_count() const { return num_classes * core_per_class; }
    std::size_t noise_begin() const { return core_begin() + core_count(); }
    std::size_t vocab_size() const { return noise_begin() + noise_tokens; }

    std::int32_t core_token(std::size_t cls, std::size_t i) const {
        return static_cast<std::int32_t>(core_begin() + cls * core_per_class + i);
    }
};

// The indicator class at position 0; the probing target for prefix datasets.
inline std::int32_t prefix_target(const Example& ex, std::size_t num_classes) {
    if (ex.tokens.empty() || ex.tokens[0] < 0 ||
        static_cast<std::size_t>(ex.tokens[0]) >= num_classes)
        fail("example ", ex.id, " has no prefix indicator token");
    return ex.tokens[0];
}

struct PrefixSplits {
    Dataset train, test;
};

inline std::string prefix_provenance(const PrefixConfig& cfg) {
    return msg("prefix n=", cfg.n, " test_n=", cfg.test_n, " K=", cfg.num_classes,
               " p=", fmt_double(cfg.p), " seq=", cfg.sequence_length,
               " core=", cfg.core_tokens_per_class, " slots=", cfg.core_slots,
               " fidelity=", fmt_double(cfg.core_fidelity), " noise=", cfg.noise_tokens,
               " seed=", cfg.seed);
}

inline void validate(const PrefixConfig& cfg) {
    if (!(cfg.p >= 0.0 && cfg.p <= 1.0))
        fail_config("prefix: p must lie in [0, 1], got ", cfg.p);
    if (cfg.n == 0 || cfg.test_n == 0) fail_config("prefix: empty split requested");
    if (cfg.num_classes < 2) fail_config("prefix: need at least 2 classes");
    if (cfg.core_tokens_per_class == 0) fail_config("prefix: core pool must be non-empty");
    if (cfg.sequence_length < cfg.core_slots + 1)
        fail_config("prefix: sequence_length ", cfg.sequence_length, " too short for ",
                    cfg.core_slots, " core slots plus the indicator");
    if (cfg.sequence_length - 1 - cfg.core_slots > 0 && cfg.noise_tokens == 0)
        fail_config("prefix: filler slots exist but the noise pool is empty");
    if (!(cfg.core_fidelity >= 0.0 && cfg.core_fidelity <= 1.0))
        fail_config("prefix: core_fidelity must lie in [0, 1], got ", cfg.core_fidelity);
}

namespace detail {

inline Dataset prefix_split(const PrefixConfig& cfg, const PrefixLayout& layout, Rng& rng,
                            Split split, std::size_t count, std::int64_t id_base,
                            bool test_time) {
    const std::size_t k = cfg.num_classes;
    std::vector<std::int32_t> labels;
    labels.reserve(count);
    const auto sizes = balanced_class_sizes(count, k);
    for (std::size_t c = 0; c < k; ++c)
        labels.insert(labels.end(), sizes[c], static_cast<std::int32_t>(c));
    rng.shuffle(labels);

    Dataset d;
    d.vocab_size = layout.vocab_size();
    d.num_classes = k;
    d.split = split;
    d.examples.reserve(count);
    const std::size_t filler = cfg.sequence_length - 1 - cfg.core_slots;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::int32_t label = labels[i];
        Example ex;
        ex.id = id_base + static_cast<std::int64_t>(i);
        ex.label = label;
        std::int32_t indicator;
        if (!test_time && rng.next_unit() < cfg.p)
            indicator = label;
        else
            indicator = static_cast<std::int32_t>(rng.below(k));
        ex.tokens.reserve(cfg.sequence_length);
        ex.tokens.push_back(indicator);
        for (std::size_t s = 0; s < cfg.core_slots; ++s) {
            if (rng.next_unit() < cfg.core_fidelity)
                ex.tokens.push_back(layout.core_token(static_cast<std::size_t>(label),
                                                      rng.below(layout.core_per_class)));
            else
                ex.tokens.push_back(static_cast<std::int32_t>(layout.core_begin() +
                                                              rng.below(layout.core_count())));
        }
        for (std::size_t s = 0; s < filler; ++s)
            ex.tokens.push_back(
                static_cast<std::int32_t>(layout.noise_begin() + rng.below(layout.noise_tokens)));
        const bool aligned = indicator == label;
        ex.shortcut_aligned = aligned;
        ex.group = aligned ? Group::majority : Group::minority;
        d.examples.push_back(std::move(ex));
    }
    return d;
}

}  // namespace detail

inline PrefixSplits gen_prefix_shortcut(const PrefixConfig& cfg) {
    validate(cfg);
    const PrefixLayout layout = PrefixLayout::from(cfg);
    Rng rng(derive_seed(cfg.seed, "prefix"));
    PrefixSplits out;
    out.train = detail::prefix_split(cfg, layout, rng, Split::train, cfg.n, 0, false);
    out.test = detail::prefix_split(cfg, layout, rng, Split::ood_test, cfg.test_n,
                                    static_cast<std::int64_t>(cfg.n), true);
    const std::string prov = prefix_provenance(cfg);
    out.train.provenance = prov;
    out.test.provenance = prov;
    return out;
}

// ---------------------------------------------------------------------------
// Transformations

// Flips the labels of exactly round(fraction*n) examples, chosen uniformly
// without replacement, each to a uniformly random different class. Group and
// alignment tags are left as generated.
inline Dataset inject_label_noise(const Dataset& d, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        fail_config("inject_label_noise: fraction must lie in [0, 1], got ", fraction);
    Dataset out = d;
    const std::size_t n = d.size();
    const auto flips =
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (flips == 0) return out;
    if (d.num_classes < 2)
        fail("inject_label_noise: cannot flip labels with fewer than 2 classes");
    Rng rng(derive_seed(seed, "label-noise"));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < flips; ++i) {
        const std::size_t j = i + rng.below(n - i);
        std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = 0; i < flips; ++i) {
        Example& ex = out.examples[idx[i]];
        auto alt = static_cast<std::int32_t>(rng.below(d.num_classes - 1));
        if (alt >= ex.label) ++alt;
        ex.label = alt;
    }
    out.provenance =
        msg(d.provenance, " label_noise=", fmt_double(fraction), " label_noise_seed=", seed);
    return out;
}

struct FilterResult {
    Dataset dataset;
    std::size_t kept = 0;
    std::size_t dropped = 0;
};

// ---------------------------------------------------------------------------
// Provenance strings are "generator k=v k=v ..."; parsing them back recovers
// enough of the config to reconstruct token layouts (e.g. for probing a
// dataset loaded from disk).

namespace detail {

inline std::vector<std::pair<std::string, std::string>> provenance_pairs(
    const std::string& prov, const std::string& expect_name) {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::istringstream in(prov);
    std::string word;
    if (!(in >> word) || word != expect_name)
        fail("provenance '", prov, "' does not start with generator name '", expect_name, "'");
    while (in >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos || eq == 0)
            fail("provenance '", prov, "': malformed pair '", word, "'");
        pairs.emplace_back(word.substr(0, eq), word.substr(eq + 1));
    }
    return pairs;
}

inline std::size_t to_count(const std::string& v) { return std::stoull(v); }
inline double to_real(const std::string& v) { return std::strtod(v.c_str(), nullptr); }

}  // namespace detail

inline PlantedConfig parse_planted_provenance(const std::string& prov) {
    PlantedConfig cfg;
    for (const auto& [k, v] : detail::provenance_pairs(prov, "planted")) {
        if (k == "n") cfg.n = detail::to_count(v);
        else if (k == "test_n") cfg.test_n = detail::to_count(v);
        else if (k == "K") cfg.num_classes = detail::to_count(v);
        else if (k == "rho") cfg.majority_fraction = detail::to_real(v);
        else if (k == "core") cfg.core_tokens_per_class = detail::to_count(v);
        else if (k == "shortcut") cfg.shortcut_tokens_per_class = detail::to_count(v);
        else if (k == "seq") cfg.sequence_length = detail::to_count(v);
        else if (k == "slots") cfg.core_slots = detail::to_count(v);
        else if (k == "fidelity") cfg.core_fidelity = detail::to_real(v);
        else if (k == "noise") cfg.noise_tokens = detail::to_count(v);
        else if (k == "seed") cfg.seed = std::stoull(v);
        // transformation suffixes (label_noise=...) are descriptive; skip
    }
    return cfg;
}

inline PrefixConfig parse_prefix_provenance(const std::string& prov) {
    PrefixConfig cfg;
    for (const auto& [k, v] : detail::provenance_pairs(prov, "prefix")) {
        if (k == "n") cfg.n = detail::to_count(v);
        else if (k == "test_n") cfg.test_n = detail::to_count(v);
        else if (k == "K") cfg.num_classes = detail::to_count(v);
        else if (k == "p") cfg.p = detail::to_real(v);
        else if (k == "seq") cfg.sequence_length = detail::to_count(v);
        else if (k == "core") cfg.core_tokens_per_class = detail::to_count(v);
        else if (k == "slots") cfg.core_slots = detail::to_count(v);
        else if (k == "fidelity") cfg.core_fidelity = detail::to_real(v);
        else if (k == "noise") cfg.noise_tokens = detail::to_count(v);
        else if (k == "seed") cfg.seed = std::stoull(v);
    }
    return cfg;
}

// Drops every example whose shortcut token agrees with its label. Untagged
// examples pass through; a dataset with no tags at all is rejected.
inline FilterResult filter_aligned_majority(const Dataset& d) {
    bool any_tag = false;
    for (const Example& ex : d.examples) any_tag |= ex.shortcut_aligned.has_value();
    if (!any_tag)
        fail("filter_aligned_majority: dataset '", d.provenance,
             "' carries no shortcut_aligned tags");
    FilterResult res;
    res.dataset = d;
    res.dataset.examples.clear();
    for (const Example& ex : d.examples) {
        if (ex.shortcut_aligned.has_value() && *ex.shortcut_aligned) {
            ++res.dropped;
            continue;
        }
        res.dataset.examples.push_back(ex);
        ++res.kept;
    }
    return res;
}

}  // namespace interpoll
