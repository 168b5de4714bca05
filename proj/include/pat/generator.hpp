#pragma once

#include <map>
#include <memory>
#include <utility>

#include "pat/model.hpp"

namespace pat::zoo {

// Generator family shared by all four architectures. The network is a grid
// of processing nodes indexed (m, n): m is the downsampling level, n the
// position along the skip pathway. Growth and feature widths follow
// k_l = 2^(l-1)*k1 and f_l = 2^(l-1)*f1 for spatial level l = m+1.
struct GeneratorConfig {
    int levels = 4; // encoder downsamplings; rows m = 0..levels
    int k1 = 12;    // base dense-block growth rate (dense archs)
    int f1 = 32;    // base feature-map count
    int in_channels = 1;
    int out_channels = 1;
    Arch arch = Arch::FDUNETPP;
    int dense_layers = 4;
    int bottleneck_mult = 4; // dense-block 1x1 width = mult * growth

    int growth_at_level(int l) const { return (1 << (l - 1)) * k1; }   // l in 1..levels+1
    int features_at_level(int l) const { return (1 << (l - 1)) * f1; }

    bool is_dense() const { return arch == Arch::FDUNET || arch == Arch::FDUNETPP; }
    bool is_nested() const { return arch == Arch::UNETPP || arch == Arch::FDUNETPP; }

    void validate() const {
        if (levels < 1) throw ConfigError(msg("generator: levels must be >= 1, got ", levels));
        if (k1 < 1 || f1 < 1) {
            throw ConfigError(msg("generator: k1/f1 must be >= 1, got ", k1, "/", f1));
        }
        if (in_channels < 1 || out_channels < 1) {
            throw ConfigError("generator: channel counts must be >= 1");
        }
        if (dense_layers < 1) throw ConfigError("generator: dense_layers must be >= 1");
    }
};

namespace detail {

// A node's compute: either a plain double conv (conv3x3-BN-ReLU twice) or a
// dense block followed by a 1x1 transition conv to the level width.
template <typename S>
struct ProcessingBlockT {
    bool dense = false;
    int in_channels = 0;
    int out_channels = 0;
    int growth = 0;

    // dense path
    std::unique_ptr<nn::DenseBlockT<S>> block;
    std::unique_ptr<nn::Conv2dT<S>> trans;
    std::unique_ptr<nn::BatchNorm2dT<S>> trans_bn;

    // plain path
    std::unique_ptr<nn::Conv2dT<S>> c1, c2;
    std::unique_ptr<nn::BatchNorm2dT<S>> b1, b2;

    static ProcessingBlockT make_dense(int in_c, int out_c, int growth, int layers,
                                       int bottleneck, Rng& rng) {
        ProcessingBlockT p;
        p.dense = true;
        p.in_channels = in_c;
        p.out_channels = out_c;
        p.growth = growth;
        p.block = std::make_unique<nn::DenseBlockT<S>>(in_c, growth, rng, layers, bottleneck);
        p.trans = std::make_unique<nn::Conv2dT<S>>(p.block->out_channels(), out_c, 1, 1, 0, rng);
        p.trans_bn = std::make_unique<nn::BatchNorm2dT<S>>(out_c);
        return p;
    }

    static ProcessingBlockT make_plain(int in_c, int out_c, Rng& rng) {
        ProcessingBlockT p;
        p.in_channels = in_c;
        p.out_channels = out_c;
        p.c1 = std::make_unique<nn::Conv2dT<S>>(in_c, out_c, 3, 1, 1, rng);
        p.b1 = std::make_unique<nn::BatchNorm2dT<S>>(out_c);
        p.c2 = std::make_unique<nn::Conv2dT<S>>(out_c, out_c, 3, 1, 1, rng);
        p.b2 = std::make_unique<nn::BatchNorm2dT<S>>(out_c);
        return p;
    }

    TensorT<S> forward(const TensorT<S>& x, bool training, bool batch_stats) {
        if (dense) {
            auto h = block->forward(x, training, batch_stats);
            return ad::relu(trans_bn->forward(trans->forward(h), training, batch_stats));
        }
        auto h = ad::relu(b1->forward(c1->forward(x), training, batch_stats));
        return ad::relu(b2->forward(c2->forward(h), training, batch_stats));
    }

    void collect(const std::string& prefix, std::vector<nn::NamedParamT<S>>& params,
                 std::vector<nn::NamedBufferT<S>>& bufs) {
        if (dense) {
            block->collect(prefix + ".dense", params);
            block->collect_buffers(prefix + ".dense", bufs);
            trans->collect(prefix + ".trans", params);
            trans_bn->collect(prefix + ".trans_bn", params);
            trans_bn->collect_buffers(prefix + ".trans_bn", bufs);
        } else {
            c1->collect(prefix + ".conv1", params);
            b1->collect(prefix + ".bn1", params);
            b1->collect_buffers(prefix + ".bn1", bufs);
            c2->collect(prefix + ".conv2", params);
            b2->collect(prefix + ".bn2", params);
            b2->collect_buffers(prefix + ".bn2", bufs);
        }
    }
};

} // namespace detail

template <typename S>
class GeneratorT : public ModelGraphT<S> {
public:
    GeneratorT(const GeneratorConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(mix_seed(init_seed, 0x67656eULL));
        const int L = cfg_.levels;

        // Encoder backbone (m, 0).
        for (int m = 0; m <= L; ++m) {
            Node node;
            node.m = m;
            node.n = 0;
            node.in_channels = m == 0 ? cfg_.in_channels : f(m - 1);
            node.block = make_block(node.in_channels, f(m), k(m), rng);
            nodes_.emplace(key(m, 0), std::move(node));
        }

        if (cfg_.is_nested()) {
            // Full nested grid {(m, n): m + n <= L}, column by column so each
            // node's up-input (m+1, n-1) already exists.
            for (int n = 1; n <= L; ++n) {
                for (int m = 0; m + n <= L; ++m) {
                    Node node;
                    node.m = m;
                    node.n = n;
                    for (int kprev = 0; kprev < n; ++kprev) {
                        node.skip_from.push_back({m, kprev});
                    }
                    node.up_from = {m + 1, n - 1};
                    node.up = std::make_unique<nn::ConvTranspose2dT<S>>(f(m + 1), f(m), rng);
                    node.in_channels = (n + 1) * f(m);
                    node.block = make_block(node.in_channels, f(m), k(m), rng);
                    nodes_.emplace(key(m, n), std::move(node));
                }
            }
        } else {
            // Plain decoder chain: one node per row, single skip connection.
            for (int m = L - 1; m >= 0; --m) {
                Node node;
                node.m = m;
                node.n = 1;
                node.skip_from.push_back({m, 0});
                node.up_from = {m + 1, m + 1 == L ? 0 : 1};
                node.up = std::make_unique<nn::ConvTranspose2dT<S>>(f(m + 1), f(m), rng);
                node.in_channels = 2 * f(m);
                node.block = make_block(node.in_channels, f(m), k(m), rng);
                nodes_.emplace(key(m, 1), std::move(node));
            }
        }

        head_ = std::make_unique<nn::Conv2dT<S>>(f(0), cfg_.out_channels, 1, 1, 0, rng);

        for (auto& [id, node] : nodes_) {
            const std::string prefix = msg("node", node.m, "_", node.n);
            if (node.up) node.up->collect(prefix + ".up", this->params_);
            node.block.collect(prefix, this->params_, this->buffers_);
        }
        head_->collect("head", this->params_);
    }

    const GeneratorConfig& config() const { return cfg_; }

    TensorT<S> forward(const TensorT<S>& x, bool training) override {
        return forward(x, training, /*batch_stats=*/true);
    }

    TensorT<S> forward(const TensorT<S>& x, bool training, bool batch_stats) {
        const Shape xs = x.shape();
        const int L = cfg_.levels;
        if (xs.c != cfg_.in_channels) {
            throw ShapeError(msg("generator: input has ", xs.c, " channels, expected ",
                                 cfg_.in_channels));
        }
        const int div = 1 << L;
        if (xs.h % div != 0 || xs.w % div != 0) {
            throw ShapeError(msg("generator: input size ", xs.h, "x", xs.w,
                                 " not divisible by 2^", L, " = ", div));
        }

        std::map<int, TensorT<S>> outs;
        for (int m = 0; m <= L; ++m) {
            auto& node = nodes_.at(key(m, 0));
            TensorT<S> in = m == 0 ? x : ad::maxpool2x2(outs.at(key(m - 1, 0)));
            outs[key(m, 0)] = node.block.forward(in, training, batch_stats);
        }
        if (cfg_.is_nested()) {
            for (int n = 1; n <= L; ++n) {
                for (int m = 0; m + n <= L; ++m) {
                    outs[key(m, n)] = run_decoder_node(m, n, outs, training, batch_stats);
                }
            }
            return ad::sigmoid(head_->forward(outs.at(key(0, L))));
        }
        for (int m = L - 1; m >= 0; --m) {
            outs[key(m, 1)] = run_decoder_node(m, 1, outs, training, batch_stats);
        }
        return ad::sigmoid(head_->forward(outs.at(key(0, 1))));
    }

    Topology topology() const override {
        Topology topo;
        for (const auto& [id, node] : nodes_) {
            TopoNode tn;
            tn.m = node.m;
            tn.n = node.n;
            tn.in_channels = node.in_channels;
            tn.out_channels = node.block.out_channels;
            tn.growth = node.block.growth;
            tn.feature_count = f(node.m);
            if (node.n == 0) {
                if (node.m == 0) {
                    tn.edges.push_back({EdgeKind::Input, -1, -1, cfg_.in_channels});
                } else {
                    tn.edges.push_back({EdgeKind::Pool, node.m - 1, 0, f(node.m - 1)});
                }
            } else {
                for (const auto& [sm, sn] : node.skip_from) {
                    tn.edges.push_back({EdgeKind::Skip, sm, sn, f(sm)});
                }
                tn.edges.push_back({EdgeKind::Up, node.up_from.first,
                                    node.up_from.second, f(node.m)});
            }
            topo.nodes.push_back(std::move(tn));
        }
        return topo; // std::map iteration is already (m, n)-sorted
    }

private:
    struct Node {
        int m = 0, n = 0;
        int in_channels = 0;
        std::vector<std::pair<int, int>> skip_from;
        std::pair<int, int> up_from{-1, -1};
        std::unique_ptr<nn::ConvTranspose2dT<S>> up;
        detail::ProcessingBlockT<S> block;
    };

    static int key(int m, int n) { return m * 1000 + n; }
    int f(int m) const { return cfg_.features_at_level(m + 1); }
    int k(int m) const { return cfg_.growth_at_level(m + 1); }

    detail::ProcessingBlockT<S> make_block(int in_c, int out_c, int growth, Rng& rng) {
        if (cfg_.is_dense()) {
            return detail::ProcessingBlockT<S>::make_dense(
                in_c, out_c, growth, cfg_.dense_layers, cfg_.bottleneck_mult * growth, rng);
        }
        return detail::ProcessingBlockT<S>::make_plain(in_c, out_c, rng);
    }

    TensorT<S> run_decoder_node(int m, int n, std::map<int, TensorT<S>>& outs,
                                bool training, bool batch_stats) {
        auto& node = nodes_.at(key(m, n));
        std::vector<TensorT<S>> parts;
        parts.reserve(node.skip_from.size() + 1);
        for (const auto& [sm, sn] : node.skip_from) parts.push_back(outs.at(key(sm, sn)));
        parts.push_back(
            node.up->forward(outs.at(key(node.up_from.first, node.up_from.second))));
        return node.block.forward(ad::concat_channels(parts), training, batch_stats);
    }

    GeneratorConfig cfg_;
    std::map<int, Node> nodes_;
    std::unique_ptr<nn::Conv2dT<S>> head_;
};

template <typename S>
std::unique_ptr<GeneratorT<S>> build_generator(const GeneratorConfig& cfg,
                                               std::uint64_t init_seed = 0) {
    return std::make_unique<GeneratorT<S>>(cfg, init_seed);
}

using Generator = GeneratorT<float>;

} // namespace pat::zoo
