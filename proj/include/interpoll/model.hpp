#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "graph.hpp"
#include "rng.hpp"

namespace interpoll {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;
    std::uint64_t init_seed = 0;

    bool operator==(const ModelConfig&) const = default;
};

// Bag-of-tokens classifier: mean-pooled embedding, a stack of tanh layers, and
// a linear head. The encoder output after layer L (the last hidden layer, or
// the pooled embedding when there are none) is "the representation"; training
// code may also cut the stack at any earlier layer and resume it, which is how
// representation interpolation at a chosen depth is implemented.
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.vocab_size == 0) fail("model: vocab_size must be positive");
        if (cfg_.embed_dim == 0) fail("model: embed_dim must be positive");
        if (cfg_.num_classes < 2) fail("model: need at least 2 classes, got ", cfg_.num_classes);
        for (std::size_t d : cfg_.hidden_dims)
            if (d == 0) fail("model: zero-width hidden layer");

        Rng rng(cfg_.init_seed);
        embed_ = glorot(rng, cfg_.vocab_size, cfg_.embed_dim, /*rows=*/cfg_.vocab_size,
                        /*cols=*/cfg_.embed_dim);
        std::size_t in = cfg_.embed_dim;
        layer_w_.reserve(cfg_.hidden_dims.size());
        layer_b_.reserve(cfg_.hidden_dims.size());
        for (std::size_t out : cfg_.hidden_dims) {
            layer_w_.push_back(glorot(rng, in, out, in, out));
            layer_b_.push_back(glorot(rng, in, out, out, 0));
            in = out;
        }
        head_w_ = glorot(rng, in, cfg_.num_classes, in, cfg_.num_classes);
        head_b_ = glorot(rng, in, cfg_.num_classes, cfg_.num_classes, 0);
    }

    const ModelConfig& config() const { return cfg_; }

    std::size_t num_layers() const { return layer_w_.size(); }

    std::size_t representation_dim(std::size_t upto_layer) const {
        check_layer(upto_layer);
        return upto_layer == 0 ? cfg_.embed_dim : cfg_.hidden_dims[upto_layer - 1];
    }

    std::size_t representation_dim() const { return representation_dim(num_layers()); }

    // Fixed order: embedding, then (weight, bias) per hidden layer, then head.
    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> ps;
        ps.push_back(&embed_);
        for (std::size_t l = 0; l < layer_w_.size(); ++l) {
            ps.push_back(&layer_w_[l]);
            ps.push_back(&layer_b_[l]);
        }
        ps.push_back(&head_w_);
        ps.push_back(&head_b_);
        return ps;
    }

    void clear_grads() {
        for (Tensor* p : parameters()) p->clear_grad();
    }

    // --- tape paths -------------------------------------------------------

    // Pooled embedding pushed through the first `upto_layer` hidden layers.
    NodeId encode(Graph& g, std::span<const std::int32_t> tokens, std::size_t upto_layer) {
        check_layer(upto_layer);
        NodeId h = g.embed_mean(g.parameter(embed_), tokens);
        for (std::size_t l = 0; l < upto_layer; ++l) h = layer_step(g, h, l);
        return h;
    }

    NodeId encode(Graph& g, std::span<const std::int32_t> tokens) {
        return encode(g, tokens, num_layers());
    }

    // Resumes the encoder stack from `from_layer` on an existing node.
    NodeId forward_from(Graph& g, NodeId rep, std::size_t from_layer) {
        check_layer(from_layer);
        for (std::size_t l = from_layer; l < layer_w_.size(); ++l) rep = layer_step(g, rep, l);
        return rep;
    }

    NodeId logits_from(Graph& g, NodeId rep) {
        return g.add(g.matmul(rep, g.parameter(head_w_)), g.parameter(head_b_));
    }

    NodeId logits(Graph& g, std::span<const std::int32_t> tokens) {
        return logits_from(g, encode(g, tokens));
    }

    // --- tapeless evaluation paths ---------------------------------------

    std::vector<double> representation(std::span<const std::int32_t> tokens,
                                       std::size_t upto_layer) const {
        check_layer(upto_layer);
        std::vector<double> h = pooled_embedding(tokens);
        for (std::size_t l = 0; l < upto_layer; ++l) h = layer_apply(h, l);
        return h;
    }

    std::vector<double> representation(std::span<const std::int32_t> tokens) const {
        return representation(tokens, num_layers());
    }

    std::vector<double> raw_logits(std::span<const std::int32_t> tokens) const {
        std::vector<double> h = representation(tokens);
        return affine(h, head_w_, head_b_);
    }

    // Softmax of the classifier head over a final-layer representation.
    std::vector<double> classify(std::span<const double> z) const {
        if (z.size() != representation_dim())
            fail("classify: representation has dimension ", z.size(), ", expected ",
                 representation_dim());
        std::vector<double> logits = affine(z, head_w_, head_b_);
        softmax_in_place(logits);
        return logits;
    }

    std::vector<double> class_probabilities(std::span<const std::int32_t> tokens) const {
        std::vector<double> z = raw_logits(tokens);
        softmax_in_place(z);
        return z;
    }

    // Argmax over logits; ties resolve to the lowest class index.
    std::int32_t predict(std::span<const std::int32_t> tokens) const {
        const std::vector<double> z = raw_logits(tokens);
        std::size_t best = 0;
        for (std::size_t i = 1; i < z.size(); ++i)
            if (z[i] > z[best]) best = i;
        return static_cast<std::int32_t>(best);
    }

    // --- checkpointing ----------------------------------------------------

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) fail("model: cannot open ", path, " for writing");
        out.write(kMagic, 4);
        write_u64(out, 1);  // format version
        write_u64(out, cfg_.vocab_size);
        write_u64(out, cfg_.embed_dim);
        write_u64(out, cfg_.hidden_dims.size());
        for (std::size_t d : cfg_.hidden_dims) write_u64(out, d);
        write_u64(out, cfg_.num_classes);
        write_u64(out, cfg_.init_seed);
        for (const Tensor* p : const_cast<Model*>(this)->parameters()) {
            write_u64(out, p->size());
            out.write(reinterpret_cast<const char*>(p->values().data()),
                      static_cast<std::streamsize>(p->size() * sizeof(double)));
        }
        if (!out) fail("model: write to ", path, " failed");
    }

    static Model load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) fail("model: cannot open ", path);
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, kMagic, 4) != 0)
            fail("model: ", path, " is not a model checkpoint");
        if (read_u64(in, path) != 1) fail("model: ", path, ": unsupported format version");
        ModelConfig cfg;
        cfg.vocab_size = read_u64(in, path);
        cfg.embed_dim = read_u64(in, path);
        cfg.hidden_dims.resize(read_u64(in, path));
        for (auto& d : cfg.hidden_dims) d = read_u64(in, path);
        cfg.num_classes = read_u64(in, path);
        cfg.init_seed = read_u64(in, path);
        Model m(cfg);
        for (Tensor* p : m.parameters()) {
            const std::uint64_t n = read_u64(in, path);
            if (n != p->size())
                fail("model: ", path, ": tensor size ", n, " does not match config (",
                     p->size(), ")");
            in.read(reinterpret_cast<char*>(p->values().data()),
                    static_cast<std::streamsize>(n * sizeof(double)));
        }
        if (!in) fail("model: ", path, " is truncated");
        return m;
    }

private:
    // Uniform on [-s, s] with s = sqrt(6 / (fan_in + fan_out)); `cols == 0`
    // marks a bias vector, which shares its layer's s.
    static Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out, std::size_t rows,
                         std::size_t cols) {
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor t = cols == 0 ? Tensor({rows}) : Tensor({rows, cols});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
        return t;
    }

    NodeId layer_step(Graph& g, NodeId h, std::size_t l) {
        return g.tanh(g.add(g.matmul(h, g.parameter(layer_w_[l])), g.parameter(layer_b_[l])));
    }

    std::vector<double> pooled_embedding(std::span<const std::int32_t> tokens) const {
        if (tokens.empty()) fail("model: empty token sequence");
        const auto vocab = static_cast<std::int32_t>(cfg_.vocab_size);
        std::vector<double> h(cfg_.embed_dim, 0.0);
        for (std::int32_t t : tokens) {
            if (t < 0 || t >= vocab)
                fail("model: token id ", t, " outside vocabulary of size ", vocab);
            for (std::size_t j = 0; j < cfg_.embed_dim; ++j)
                h[j] += embed_.at(static_cast<std::size_t>(t), j);
        }
        for (double& v : h) v /= static_cast<double>(tokens.size());
        return h;
    }

    static std::vector<double> affine(std::span<const double> x, const Tensor& w,
                                      const Tensor& b) {
        const std::size_t out = w.dim(1);
        std::vector<double> y(out);
        for (std::size_t c = 0; c < out; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w.at(i, c);
            y[c] = acc + b[c];
        }
        return y;
    }

    static void softmax_in_place(std::vector<double>& z) {
        double m = z[0];
        for (double v : z) m = std::max(m, v);
        double denom = 0.0;
        for (double& v : z) {
            v = std::exp(v - m);
            denom += v;
        }
        for (double& v : z) v /= denom;
    }

    std::vector<double> layer_apply(const std::vector<double>& x, std::size_t l) const {
        std::vector<double> y = affine(x, layer_w_[l], layer_b_[l]);
        for (double& v : y) v = std::tanh(v);
        return y;
    }

    void check_layer(std::size_t l) const {
        if (l > layer_w_.size())
            fail("model: layer index ", l, " exceeds encoder depth ", layer_w_.size());
    }

    static void write_u64(std::ofstream& out, std::uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }

    static std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) fail("model: ", path, " is truncated");
        return v;
    }

    static constexpr const char kMagic[5] = "IPOL";

    ModelConfig cfg_;
    Tensor embed_;
    std::vector<Tensor> layer_w_, layer_b_;
    Tensor head_w_, head_b_;
};

}  // namespace interpoll
