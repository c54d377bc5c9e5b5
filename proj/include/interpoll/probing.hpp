#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "data.hpp"
#include "model.hpp"

namespace interpoll {

// --------------------------------------------------------------------------
// Online-coding probe: how many bits does a linear readout need to transmit
// the targets given the representations, learning as it goes? Small
// codelength relative to the uniform code means the information is easy to
// extract.

struct ProbeTask {
    std::vector<std::vector<double>> representations;  // n rows, equal width
    std::vector<std::int32_t> targets;                 // n values in [0, C)
    std::size_t num_classes = 0;
    std::vector<std::size_t> schedule;  // strictly increasing, ends at n
    std::uint64_t seed = 0;             // drives the held-out accuracy split

    void validate() const {
        const std::size_t n = representations.size();
        if (n == 0) fail_config("probe: no representations");
        if (targets.size() != n)
            fail_config("probe: ", targets.size(), " targets for ", n, " representations");
        if (num_classes < 2) fail_config("probe: need at least 2 classes");
        const std::size_t d = representations.front().size();
        if (d == 0) fail_config("probe: zero-width representations");
        for (std::size_t i = 0; i < n; ++i) {
            if (representations[i].size() != d)
                fail_config("probe: row ", i, " has width ", representations[i].size(),
                            ", expected ", d);
            if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= num_classes)
                fail_config("probe: target ", targets[i], " at row ", i, " outside [0, ",
                            num_classes, ")");
        }
        if (schedule.empty()) fail_config("probe: empty schedule");
        if (schedule.front() < num_classes)
            fail_config("probe: first block ", schedule.front(), " smaller than ",
                        num_classes, " classes");
        for (std::size_t i = 1; i < schedule.size(); ++i)
            if (schedule[i] <= schedule[i - 1])
                fail_config("probe: schedule must increase strictly, got ", schedule[i - 1],
                            " then ", schedule[i]);
        if (schedule.back() != n)
            fail_config("probe: schedule ends at ", schedule.back(), ", dataset has ", n);
    }
};

struct ProbeResult {
    double uniform_bits = 0.0;
    double online_bits = 0.0;
    double compression = 0.0;  // uniform / online
    double probe_accuracy = 0.0;
    std::vector<std::size_t> schedule;
    std::vector<double> block_bits;  // first entry is the uniform-coded seed block
};

// geometric doubling from max(2C, 32) up to n
inline std::vector<std::size_t> default_schedule(std::size_t n, std::size_t num_classes) {
    if (n < num_classes) fail_config("probe: ", n, " examples cannot seed ", num_classes,
                                     " classes");
    std::vector<std::size_t> s;
    std::size_t t = std::max<std::size_t>(2 * num_classes, 32);
    while (t < n) {
        s.push_back(t);
        t *= 2;
    }
    if (s.empty() || s.back() != n) s.push_back(n);
    return s;
}

namespace detail {

// zero-initialized linear softmax readout fit by monotone full-batch descent
struct LinearProbe {
    std::size_t dim = 0, classes = 0;
    std::vector<double> w;  // dim x classes, row-major
    std::vector<double> b;

    std::vector<double> logits(const std::vector<double>& x) const {
        std::vector<double> z(b);
        for (std::size_t i = 0; i < dim; ++i) {
            const double xi = x[i];
            const double* row = w.data() + i * classes;
            for (std::size_t c = 0; c < classes; ++c) z[c] += xi * row[c];
        }
        return z;
    }

    // codelength of one observation, in bits: log2-loss of the softmax
    double bits(const std::vector<double>& x, std::int32_t y) const {
        const std::vector<double> z = logits(x);
        double zmax = z[0];
        for (const double v : z) zmax = std::max(zmax, v);
        double lse = 0.0;
        for (const double v : z) lse += std::exp(v - zmax);
        return (std::log(lse) + zmax - z[static_cast<std::size_t>(y)]) / std::numbers::ln2;
    }

    std::int32_t predict(const std::vector<double>& x) const {
        const std::vector<double> z = logits(x);
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (z[c] > z[best]) best = c;
        return static_cast<std::int32_t>(best);
    }
};

// mean cross-entropy (nats) and its gradient over the indexed subset
inline double probe_loss_grad(const LinearProbe& p, const ProbeTask& task,
                              std::span<const std::size_t> idx, std::vector<double>* gw,
                              std::vector<double>* gb) {
    if (gw) {
        std::fill(gw->begin(), gw->end(), 0.0);
        std::fill(gb->begin(), gb->end(), 0.0);
    }
    double loss = 0.0;
    std::vector<double> prob(p.classes);
    for (const std::size_t i : idx) {
        const std::vector<double>& x = task.representations[i];
        const std::vector<double> z = p.logits(x);
        double zmax = z[0];
        for (const double v : z) zmax = std::max(zmax, v);
        double lse = 0.0;
        for (std::size_t c = 0; c < p.classes; ++c) {
            prob[c] = std::exp(z[c] - zmax);
            lse += prob[c];
        }
        const auto y = static_cast<std::size_t>(task.targets[i]);
        loss += std::log(lse) + zmax - z[y];
        if (gw) {
            for (std::size_t c = 0; c < p.classes; ++c) prob[c] /= lse;
            prob[y] -= 1.0;
            for (std::size_t dd = 0; dd < p.dim; ++dd) {
                const double xi = x[dd];
                double* row = gw->data() + dd * p.classes;
                for (std::size_t c = 0; c < p.classes; ++c) row[c] += xi * prob[c];
            }
            for (std::size_t c = 0; c < p.classes; ++c) (*gb)[c] += prob[c];
        }
    }
    const double inv = 1.0 / static_cast<double>(idx.size());
    if (gw) {
        for (double& v : *gw) v *= inv;
        for (double& v : *gb) v *= inv;
    }
    return loss * inv;
}

inline LinearProbe fit_probe(const ProbeTask& task, std::span<const std::size_t> idx) {
    if (idx.empty()) fail("probe: cannot fit on an empty subset");
    LinearProbe p;
    p.dim = task.representations.front().size();
    p.classes = task.num_classes;
    p.w.assign(p.dim * p.classes, 0.0);
    p.b.assign(p.classes, 0.0);

    std::vector<double> gw(p.w.size()), gb(p.b.size());
    double lr = 0.5;
    double prev = probe_loss_grad(p, task, idx, &gw, &gb);
    LinearProbe trial = p;
    for (int iter = 0; iter < 2000; ++iter) {
        for (std::size_t i = 0; i < p.w.size(); ++i) trial.w[i] = p.w[i] - lr * gw[i];
        for (std::size_t i = 0; i < p.b.size(); ++i) trial.b[i] = p.b[i] - lr * gb[i];
        const double cur = probe_loss_grad(trial, task, idx, nullptr, nullptr);
        if (cur > prev) {
            // overshoot on a convex objective: shrink and retry
            lr *= 0.5;
            if (lr < 1e-12) break;
            continue;
        }
        p.w.swap(trial.w);
        p.b.swap(trial.b);
        const bool converged = prev - cur <= 1e-6 * std::max(1.0, std::abs(prev));
        prev = cur;
        if (converged) break;
        prev = probe_loss_grad(p, task, idx, &gw, &gb);
    }
    return p;
}

}  // namespace detail

inline ProbeResult mdl_probe(const ProbeTask& task) {
    task.validate();
    const std::size_t n = task.representations.size();
    const double log2c = std::log2(static_cast<double>(task.num_classes));

    ProbeResult res;
    res.schedule = task.schedule;
    res.uniform_bits = static_cast<double>(n) * log2c;

    // the first block is transmitted under the uniform code
    const double first = static_cast<double>(task.schedule.front()) * log2c;
    res.block_bits.push_back(first);
    res.online_bits = first;

    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    for (std::size_t bi = 0; bi + 1 < task.schedule.size(); ++bi) {
        const std::size_t fit_to = task.schedule[bi];
        const std::size_t up_to = task.schedule[bi + 1];
        const detail::LinearProbe probe =
            detail::fit_probe(task, std::span(all).subspan(0, fit_to));
        double bits = 0.0;
        for (std::size_t i = fit_to; i < up_to; ++i)
            bits += probe.bits(task.representations[i], task.targets[i]);
        res.block_bits.push_back(bits);
        res.online_bits += bits;
    }
    res.compression = res.uniform_bits / res.online_bits;

    // held-out readout accuracy on a seeded 80/20 split
    std::vector<std::size_t> order(all);
    Rng rng(derive_seed(task.seed, "probe-eval"));
    rng.shuffle(order);
    const std::size_t train_n = std::max<std::size_t>(1, (n * 8) / 10);
    if (train_n >= n) fail("probe: ", n, " examples leave no held-out split");
    const detail::LinearProbe probe =
        detail::fit_probe(task, std::span(order).subspan(0, train_n));
    std::size_t hit = 0;
    for (std::size_t i = train_n; i < n; ++i) {
        const std::size_t j = order[i];
        hit += probe.predict(task.representations[j]) == task.targets[j];
    }
    res.probe_accuracy = static_cast<double>(hit) / static_cast<double>(n - train_n);
    return res;
}

// --------------------------------------------------------------------------
// Task builders against a trained encoder.

// how much does the encoder still know about the planted shortcut token?
inline ProbeTask shortcut_probe_task(const Model& model, const Dataset& d,
                                     std::uint64_t seed,
                                     std::optional<std::size_t> layer = {}) {
    if (model.config().vocab_size != d.vocab_size)
        fail("probe: model vocab ", model.config().vocab_size, " does not match dataset ",
             d.vocab_size);
    const PlantedConfig cfg = parse_planted_provenance(d.provenance);
    const PlantedLayout layout = PlantedLayout::from(cfg);
    const std::size_t cut = layer ? *layer + 1 : model.num_layers();
    if (cut > model.num_layers())
        fail_config("probe: layer ", *layer, " exceeds encoder depth ", model.num_layers());

    ProbeTask task;
    task.num_classes = cfg.num_classes;
    task.seed = seed;
    task.representations.reserve(d.size());
    task.targets.reserve(d.size());
    for (const Example& ex : d.examples) {
        task.representations.push_back(model.representation(ex.tokens, cut));
        task.targets.push_back(shortcut_target(ex, layout));
    }
    task.schedule = default_schedule(d.size(), task.num_classes);
    return task;
}

}  // namespace interpoll
