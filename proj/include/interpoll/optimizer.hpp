#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace interpoll {

enum class OptimizerKind : std::uint8_t { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double learning_rate = 0.1;
    double weight_decay = 0.0;  // coupled L2: grad += wd * param before the update
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const OptimizerConfig&) const = default;
};

// Updates parameters in the order the caller passes them and clears their
// gradients afterwards. Adam keeps first/second moment buffers per tensor.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
        if (!(cfg_.learning_rate > 0.0))
            fail("optimizer: learning rate must be positive, got ", cfg_.learning_rate);
        if (cfg_.weight_decay < 0.0)
            fail("optimizer: weight decay must be non-negative, got ", cfg_.weight_decay);
    }

    const OptimizerConfig& config() const { return cfg_; }
    std::uint64_t step_count() const { return steps_; }

    void step(std::span<Tensor* const> params) {
        for (const Tensor* p : params)
            if (!p->has_grad())
                fail("optimizer: parameter of shape ", shape_str(p->shape()),
                     " has no gradient; run backward before step");
        ++steps_;
        for (Tensor* p : params) {
            auto& g = p->grad();
            auto& v = p->values();
            if (cfg_.weight_decay > 0.0)
                for (std::size_t i = 0; i < v.size(); ++i) g[i] += cfg_.weight_decay * v[i];
            switch (cfg_.kind) {
                case OptimizerKind::sgd:
                    for (std::size_t i = 0; i < v.size(); ++i)
                        v[i] -= cfg_.learning_rate * g[i];
                    break;
                case OptimizerKind::adam: {
                    Moments& st = moments_[p];
                    if (st.m.empty()) {
                        st.m.assign(v.size(), 0.0);
                        st.v.assign(v.size(), 0.0);
                    }
                    st.t += 1;
                    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
                    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
                    for (std::size_t i = 0; i < v.size(); ++i) {
                        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
                        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                        const double mhat = st.m[i] / c1;
                        const double vhat = st.v[i] / c2;
                        v[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
                    }
                    break;
                }
            }
            p->clear_grad();
        }
    }

private:
    struct Moments {
        std::vector<double> m, v;
        std::uint64_t t = 0;
    };

    OptimizerConfig cfg_;
    std::unordered_map<Tensor*, Moments> moments_;
    std::uint64_t steps_ = 0;
};

}  // namespace interpoll
