#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"

namespace interpoll {

// Inferred group membership: true means the auxiliary model misclassified the
// example, i.e. inferred minority. Keyed by example id; the map keeps ids
// sorted so serialization order is stable.
struct GroupAssignment {
    std::map<std::int64_t, bool> flags;
    std::string source;  // which auxiliary produced this

    bool inferred_minority(std::int64_t id) const {
        const auto it = flags.find(id);
        if (it == flags.end()) fail("group assignment has no flag for example ", id);
        return it->second;
    }

    std::size_t minority_count() const {
        std::size_t n = 0;
        for (const auto& [id, m] : flags) n += m ? 1 : 0;
        return n;
    }
};

enum class AuxKind : std::uint8_t { tiny, under_trained, regularized, no_auxiliary };

inline const char* aux_kind_name(AuxKind k) {
    switch (k) {
        case AuxKind::tiny: return "tiny";
        case AuxKind::under_trained: return "under_trained";
        case AuxKind::regularized: return "regularized";
        case AuxKind::no_auxiliary: return "no_auxiliary";
    }
    return "?";
}

inline AuxKind aux_kind_from_name(const std::string& s) {
    if (s == "tiny") return AuxKind::tiny;
    if (s == "under_trained") return AuxKind::under_trained;
    if (s == "regularized") return AuxKind::regularized;
    if (s == "no_auxiliary") return AuxKind::no_auxiliary;
    fail_config("unknown auxiliary kind '", s, "'");
}

// How the auxiliary model is built and trained. The defaults per kind:
//   tiny          -> small linear-encoder architecture, full ERM schedule
//   under_trained -> learner-sized architecture, exactly 3 epochs
//   regularized   -> learner-sized architecture, weight decay 1.0
//   no_auxiliary  -> the learner itself (same init), trained 2 epochs
struct AuxiliaryVariant {
    AuxKind kind = AuxKind::tiny;
    std::optional<std::size_t> epochs = {};   // overrides the kind's schedule
    std::optional<double> weight_decay = {};  // regularized only; default 1.0
    std::size_t tiny_embed_dim = 4;          // tiny architecture knobs
    std::vector<std::size_t> tiny_hidden_dims = {};

    std::string describe() const {
        std::string s = msg("aux kind=", aux_kind_name(kind));
        if (epochs) s += msg(" epochs=", *epochs);
        if (weight_decay) s += msg(" weight_decay=", fmt_double(*weight_decay));
        if (kind == AuxKind::tiny) {
            s += msg(" embed=", tiny_embed_dim, " hidden=[");
            for (std::size_t i = 0; i < tiny_hidden_dims.size(); ++i)
                s += msg(i ? "," : "", tiny_hidden_dims[i]);
            s += "]";
        }
        return s;
    }

    bool operator==(const AuxiliaryVariant&) const = default;
};

// Algorithm's first step: an example is inferred minority iff the frozen
// auxiliary misclassifies it.
inline GroupAssignment infer_min_maj(const Model& aux, const Dataset& d,
                                     const std::string& source = "") {
    if (aux.config().vocab_size != d.vocab_size)
        fail("infer_min_maj: auxiliary vocab ", aux.config().vocab_size,
             " does not match dataset vocab ", d.vocab_size);
    if (aux.config().num_classes != d.num_classes)
        fail("infer_min_maj: auxiliary has ", aux.config().num_classes,
             " classes, dataset has ", d.num_classes);
    GroupAssignment a;
    a.source = source;
    for (const Example& ex : d.examples) {
        const auto [it, inserted] = a.flags.emplace(ex.id, aux.predict(ex.tokens) != ex.label);
        if (!inserted) fail("infer_min_maj: duplicate example id ", ex.id);
    }
    return a;
}

// Fraction of ground-truth minority examples that inference flagged as
// minority. An empty ground-truth minority set scores 0 by convention.
inline double minority_recall(const GroupAssignment& a, const Dataset& d) {
    std::size_t gt = 0, hit = 0;
    for (const Example& ex : d.examples) {
        if (!ex.group)
            fail("minority_recall: example ", ex.id, " carries no ground-truth group tag");
        if (*ex.group != Group::minority) continue;
        ++gt;
        if (a.inferred_minority(ex.id)) ++hit;
    }
    if (gt == 0) return 0.0;
    return static_cast<double>(hit) / static_cast<double>(gt);
}

// Partner-sampling pools derived from one assignment over one dataset, as
// index lists into the dataset's example vector (dataset order, so pool
// construction is deterministic).
struct GroupPools {
    std::vector<std::vector<std::size_t>> minority_by_class;
    std::vector<std::vector<std::size_t>> majority_by_class;
    // pools indexed by the *anchor's* class for inter-class sampling
    std::vector<std::vector<std::size_t>> minority_other_class;
    std::vector<std::vector<std::size_t>> majority_other_class;

    static GroupPools build(const Dataset& d, const GroupAssignment& a) {
        const std::size_t k = d.num_classes;
        GroupPools p;
        p.minority_by_class.resize(k);
        p.majority_by_class.resize(k);
        p.minority_other_class.resize(k);
        p.majority_other_class.resize(k);
        for (std::size_t i = 0; i < d.examples.size(); ++i) {
            const Example& ex = d.examples[i];
            const auto cls = static_cast<std::size_t>(ex.label);
            if (cls >= k) fail("example ", ex.id, " has label ", ex.label, " outside K=", k);
            if (a.inferred_minority(ex.id)) {
                p.minority_by_class[cls].push_back(i);
                for (std::size_t c = 0; c < k; ++c)
                    if (c != cls) p.minority_other_class[c].push_back(i);
            } else {
                p.majority_by_class[cls].push_back(i);
                for (std::size_t c = 0; c < k; ++c)
                    if (c != cls) p.majority_other_class[c].push_back(i);
            }
        }
        return p;
    }

    bool minority_empty() const {
        for (const auto& v : minority_by_class)
            if (!v.empty()) return false;
        return true;
    }
};

}  // namespace interpoll
