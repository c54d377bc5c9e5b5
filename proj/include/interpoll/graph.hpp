#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace interpoll {

using NodeId = std::int32_t;

enum class OpKind : std::uint8_t {
    parameter,
    input,
    matmul,
    add,
    tanh_op,
    scale,
    embed_mean,
    convex_combine,
    softmax_ce,
    sum,
    mean,
};

// One training step records its whole forward computation on a Graph, calls
// backward() once from the scalar loss, and the graph flushes leaf gradients
// into the bound parameter tensors (accumulating with +=). Nodes are created
// in evaluation order, so walking ids backwards is already a reverse
// topological order.
class Graph {
public:
    struct Node {
        OpKind op;
        Tensor value;
        std::vector<double> grad;       // allocated during backward
        std::vector<double> aux;        // softmax probabilities
        std::vector<NodeId> inputs;
        std::vector<std::int32_t> tokens;  // embed_mean lookups
        double coeff = 0.0;             // scale factor / mix weight
        std::int32_t label = -1;        // softmax_ce target
        Tensor* param = nullptr;        // leaf binding
    };

    void reset() {
        nodes_.clear();
        backward_done_ = false;
    }

    std::size_t node_count() const { return nodes_.size(); }

    const Tensor& value(NodeId id) const { return node(id).value; }

    std::span<const double> grad_of(NodeId id) const { return node(id).grad; }

    // Binds a parameter tensor as a leaf. Binding the same tensor twice on one
    // graph returns the original node so its gradient accumulates in one place.
    NodeId parameter(Tensor& t) {
        for (NodeId i = 0; i < static_cast<NodeId>(nodes_.size()); ++i)
            if (nodes_[i].param == &t) return i;
        Node n;
        n.op = OpKind::parameter;
        n.value = t;
        n.param = &t;
        return push(std::move(n));
    }

    // Constant leaf; no gradient is propagated to the caller.
    NodeId input(Tensor t) {
        Node n;
        n.op = OpKind::input;
        n.value = std::move(t);
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& ta = node(a).value;
        const Tensor& tb = node(b).value;
        if (tb.rank() != 2)
            fail("matmul: right operand must be rank 2, got ", shape_str(tb.shape()));
        Node n;
        n.op = OpKind::matmul;
        n.inputs = {a, b};
        if (ta.rank() == 1) {
            if (ta.dim(0) != tb.dim(0))
                fail("matmul: inner dimensions disagree, ", shape_str(ta.shape()), " vs ",
                     shape_str(tb.shape()));
            const std::size_t k = tb.dim(0), cols = tb.dim(1);
            Tensor out({cols});
            for (std::size_t c = 0; c < cols; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < k; ++i) acc += ta[i] * tb.at(i, c);
                out[c] = acc;
            }
            n.value = std::move(out);
        } else {
            if (ta.dim(1) != tb.dim(0))
                fail("matmul: inner dimensions disagree, ", shape_str(ta.shape()), " vs ",
                     shape_str(tb.shape()));
            const std::size_t rows = ta.dim(0), k = ta.dim(1), cols = tb.dim(1);
            Tensor out({rows, cols});
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < k; ++i) acc += ta.at(r, i) * tb.at(i, c);
                    out.at(r, c) = acc;
                }
            n.value = std::move(out);
        }
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor& ta = node(a).value;
        const Tensor& tb = node(b).value;
        if (!ta.same_shape(tb))
            fail("add: shapes disagree, ", shape_str(ta.shape()), " vs ", shape_str(tb.shape()));
        Node n;
        n.op = OpKind::add;
        n.inputs = {a, b};
        Tensor out = Tensor::zeros_like(ta);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId tanh(NodeId a) {
        const Tensor& ta = node(a).value;
        Node n;
        n.op = OpKind::tanh_op;
        n.inputs = {a};
        Tensor out = Tensor::zeros_like(ta);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(ta[i]);
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId scale(NodeId a, double c) {
        const Tensor& ta = node(a).value;
        Node n;
        n.op = OpKind::scale;
        n.inputs = {a};
        n.coeff = c;
        if (c == 1.0) {
            n.value = ta;  // bitwise copy
        } else if (c == 0.0) {
            n.value = Tensor::zeros_like(ta);
        } else {
            Tensor out = Tensor::zeros_like(ta);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * ta[i];
            n.value = std::move(out);
        }
        return push(std::move(n));
    }

    // Mean of the embedding rows selected by `tokens`.
    NodeId embed_mean(NodeId table, std::span<const std::int32_t> tokens) {
        const Tensor& tt = node(table).value;
        if (tt.rank() != 2)
            fail("embed_mean: table must be rank 2, got ", shape_str(tt.shape()));
        if (tokens.empty()) fail("embed_mean: empty token sequence");
        const auto vocab = static_cast<std::int32_t>(tt.dim(0));
        for (std::int32_t t : tokens)
            if (t < 0 || t >= vocab)
                fail("embed_mean: token id ", t, " outside vocabulary of size ", vocab);
        const std::size_t d = tt.dim(1);
        const auto count = static_cast<double>(tokens.size());
        Node n;
        n.op = OpKind::embed_mean;
        n.inputs = {table};
        n.tokens.assign(tokens.begin(), tokens.end());
        Tensor out({d});
        for (std::int32_t t : tokens)
            for (std::size_t j = 0; j < d; ++j) out[j] += tt.at(static_cast<std::size_t>(t), j);
        for (std::size_t j = 0; j < d; ++j) out[j] /= count;
        n.value = std::move(out);
        return push(std::move(n));
    }

    // (1-lambda)*a + lambda*b. The endpoints are special-cased to bitwise
    // copies so that a degenerate lambda of exactly 0 reproduces plain
    // training down to the last bit.
    NodeId convex_combine(NodeId a, NodeId b, double lambda) {
        const Tensor& ta = node(a).value;
        const Tensor& tb = node(b).value;
        if (!ta.same_shape(tb))
            fail("convex_combine: shapes disagree, ", shape_str(ta.shape()), " vs ",
                 shape_str(tb.shape()));
        if (!(lambda >= 0.0 && lambda <= 1.0))
            fail("convex_combine: lambda must lie in [0, 1], got ", lambda);
        Node n;
        n.op = OpKind::convex_combine;
        n.inputs = {a, b};
        n.coeff = lambda;
        if (lambda == 0.0) {
            n.value = ta;
        } else if (lambda == 1.0) {
            n.value = tb;
        } else {
            Tensor out = Tensor::zeros_like(ta);
            const double w = 1.0 - lambda;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = w * ta[i] + lambda * tb[i];
            n.value = std::move(out);
        }
        return push(std::move(n));
    }

    // Numerically stable cross-entropy of softmax(logits) against `label`.
    NodeId softmax_cross_entropy(NodeId logits, std::int32_t label) {
        const Tensor& tl = node(logits).value;
        if (tl.rank() != 1)
            fail("softmax_cross_entropy: logits must be rank 1, got ", shape_str(tl.shape()));
        const auto classes = static_cast<std::int32_t>(tl.dim(0));
        if (label < 0 || label >= classes)
            fail("softmax_cross_entropy: label ", label, " outside [0, ", classes, ")");
        double m = tl[0];
        for (std::size_t i = 1; i < tl.size(); ++i) m = std::max(m, tl[i]);
        double denom = 0.0;
        Node n;
        n.op = OpKind::softmax_ce;
        n.inputs = {logits};
        n.label = label;
        n.aux.resize(tl.size());
        for (std::size_t i = 0; i < tl.size(); ++i) {
            n.aux[i] = std::exp(tl[i] - m);
            denom += n.aux[i];
        }
        for (double& p : n.aux) p /= denom;
        n.value = Tensor::scalar(std::log(denom) - (tl[static_cast<std::size_t>(label)] - m));
        return push(std::move(n));
    }

    NodeId sum(NodeId a) {
        const Tensor& ta = node(a).value;
        double acc = 0.0;
        for (std::size_t i = 0; i < ta.size(); ++i) acc += ta[i];
        Node n;
        n.op = OpKind::sum;
        n.inputs = {a};
        n.value = Tensor::scalar(acc);
        return push(std::move(n));
    }

    // Mean of scalar nodes; the usual reduction from per-example losses to the
    // batch objective.
    NodeId mean(std::span<const NodeId> xs) {
        if (xs.empty()) fail("mean: no inputs");
        Node n;
        n.op = OpKind::mean;
        double acc = 0.0;
        for (NodeId id : xs) {
            const Tensor& tx = node(id).value;
            if (tx.size() != 1)
                fail("mean: input node ", id, " is not scalar, shape ", shape_str(tx.shape()));
            acc += tx[0];
            n.inputs.push_back(id);
        }
        n.value = Tensor::scalar(acc / static_cast<double>(xs.size()));
        return push(std::move(n));
    }

    // Reverse sweep from a scalar root, then flush leaf gradients into the
    // bound parameter tensors in binding order. A second call on the same
    // recorded graph is rejected.
    void backward(NodeId root) {
        Node& r = node(root);
        if (r.value.size() != 1)
            fail("backward: root must be scalar, got shape ", shape_str(r.value.shape()));
        if (backward_done_) fail("backward: graph already differentiated; reset() first");
        backward_done_ = true;
        for (NodeId i = 0; i <= root; ++i) nodes_[i].grad.assign(nodes_[i].value.size(), 0.0);
        r.grad[0] = 1.0;
        for (NodeId i = root; i >= 0; --i) propagate(nodes_[i]);
        for (NodeId i = 0; i <= root; ++i) {
            Node& n = nodes_[i];
            if (!n.param) continue;
            auto& g = n.param->grad();
            for (std::size_t j = 0; j < n.grad.size(); ++j) g[j] += n.grad[j];
        }
    }

private:
    Node& node(NodeId id) {
        if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
            fail("graph: invalid node id ", id);
        return nodes_[static_cast<std::size_t>(id)];
    }
    const Node& node(NodeId id) const { return const_cast<Graph*>(this)->node(id); }

    NodeId push(Node&& n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void propagate(Node& n) {
        switch (n.op) {
            case OpKind::parameter:
            case OpKind::input:
                break;
            case OpKind::matmul: {
                Node& a = nodes_[n.inputs[0]];
                Node& b = nodes_[n.inputs[1]];
                const Tensor& ta = a.value;
                const Tensor& tb = b.value;
                if (ta.rank() == 1) {
                    const std::size_t k = tb.dim(0), cols = tb.dim(1);
                    for (std::size_t i = 0; i < k; ++i) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < cols; ++c) acc += n.grad[c] * tb.at(i, c);
                        a.grad[i] += acc;
                    }
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t c = 0; c < cols; ++c)
                            b.grad[i * cols + c] += ta[i] * n.grad[c];
                } else {
                    const std::size_t rows = ta.dim(0), k = ta.dim(1), cols = tb.dim(1);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t i = 0; i < k; ++i) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < cols; ++c)
                                acc += n.grad[r * cols + c] * tb.at(i, c);
                            a.grad[r * k + i] += acc;
                        }
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t c = 0; c < cols; ++c) {
                            double acc = 0.0;
                            for (std::size_t r = 0; r < rows; ++r)
                                acc += ta.at(r, i) * n.grad[r * cols + c];
                            b.grad[i * cols + c] += acc;
                        }
                }
                break;
            }
            case OpKind::add: {
                Node& a = nodes_[n.inputs[0]];
                Node& b = nodes_[n.inputs[1]];
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    a.grad[i] += n.grad[i];
                    b.grad[i] += n.grad[i];
                }
                break;
            }
            case OpKind::tanh_op: {
                Node& a = nodes_[n.inputs[0]];
                for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    const double v = n.value[i];
                    a.grad[i] += n.grad[i] * (1.0 - v * v);
                }
                break;
            }
            case OpKind::scale: {
                Node& a = nodes_[n.inputs[0]];
                if (n.coeff == 1.0) {
                    for (std::size_t i = 0; i < n.grad.size(); ++i) a.grad[i] += n.grad[i];
                } else {
                    for (std::size_t i = 0; i < n.grad.size(); ++i)
                        a.grad[i] += n.coeff * n.grad[i];
                }
                break;
            }
            case OpKind::embed_mean: {
                Node& a = nodes_[n.inputs[0]];
                const std::size_t d = a.value.dim(1);
                const auto count = static_cast<double>(n.tokens.size());
                for (std::int32_t t : n.tokens) {
                    const auto row = static_cast<std::size_t>(t) * d;
                    for (std::size_t j = 0; j < d; ++j) a.grad[row + j] += n.grad[j] / count;
                }
                break;
            }
            case OpKind::convex_combine: {
                Node& a = nodes_[n.inputs[0]];
                Node& b = nodes_[n.inputs[1]];
                const double wa = 1.0 - n.coeff;
                if (wa == 1.0) {
                    for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        a.grad[i] += n.grad[i];
                        b.grad[i] += n.coeff * n.grad[i];
                    }
                } else {
                    for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        a.grad[i] += wa * n.grad[i];
                        b.grad[i] += n.coeff * n.grad[i];
                    }
                }
                break;
            }
            case OpKind::softmax_ce: {
                Node& a = nodes_[n.inputs[0]];
                const double g = n.grad[0];
                for (std::size_t i = 0; i < n.aux.size(); ++i) {
                    const double indicator =
                        (static_cast<std::int32_t>(i) == n.label) ? 1.0 : 0.0;
                    a.grad[i] += g * (n.aux[i] - indicator);
                }
                break;
            }
            case OpKind::sum: {
                Node& a = nodes_[n.inputs[0]];
                for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += n.grad[0];
                break;
            }
            case OpKind::mean: {
                const double share = n.grad[0] / static_cast<double>(n.inputs.size());
                for (NodeId id : n.inputs) nodes_[id].grad[0] += share;
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace interpoll
