#pragma once

#include <memory>

#include "pat/model.hpp"

namespace pat::zoo {

// Patch discriminator: six 4x4 convolutions, stride 2 for the first four
// and stride 1 for the last two, so each output score covers a local patch
// of the input pair rather than the whole image. Channels double per layer
// except the fifth; the last layer maps to out_channels raw scores (the
// sigmoid lives inside the loss).
struct DiscriminatorConfig {
    int num_layers = 6;
    int base_channels = 64;
    int out_channels = 3;
    int in_channels = 2; // conditioning image + candidate stacked channel-wise

    std::vector<int> channel_progression() const {
        std::vector<int> ch;
        int c = base_channels;
        for (int i = 0; i + 1 < num_layers; ++i) {
            ch.push_back(c);
            if (i < 3) c *= 2; // fifth layer keeps the width
        }
        ch.push_back(out_channels);
        return ch;
    }

    void validate() const {
        if (num_layers < 2) throw ConfigError("discriminator: num_layers must be >= 2");
        if (base_channels < 1) throw ConfigError("discriminator: base_channels must be >= 1");
        if (out_channels < 1 || in_channels < 1) {
            throw ConfigError("discriminator: channel counts must be >= 1");
        }
    }
};

template <typename S>
class DiscriminatorT : public ModelGraphT<S> {
public:
    DiscriminatorT(const DiscriminatorConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(mix_seed(init_seed, 0x64697363ULL));
        const auto ch = cfg_.channel_progression();
        int in_c = cfg_.in_channels;
        for (int i = 0; i < cfg_.num_layers; ++i) {
            Layer l;
            const int stride = i < 4 ? 2 : 1;
            l.conv = std::make_unique<nn::Conv2dT<S>>(in_c, ch[i], 4, stride, 1, rng);
            if (i + 1 < cfg_.num_layers) {
                l.norm = std::make_unique<nn::InstanceNorm2dT<S>>(ch[i]);
            }
            in_c = ch[i];
            layers_.push_back(std::move(l));
        }
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const std::string prefix = msg("layer", i + 1);
            layers_[i].conv->collect(prefix + ".conv", this->params_);
            if (layers_[i].norm) layers_[i].norm->collect(prefix + ".norm", this->params_);
        }
    }

    const DiscriminatorConfig& config() const { return cfg_; }

    TensorT<S> forward(const TensorT<S>& x, bool training) override {
        (void)training; // instance norm behaves identically in both modes
        if (x.shape().c != cfg_.in_channels) {
            throw ShapeError(msg("discriminator: input has ", x.shape().c,
                                 " channels, expected ", cfg_.in_channels));
        }
        TensorT<S> h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const Shape hs = h.shape();
            if (hs.h + 2 < 4 || hs.w + 2 < 4) {
                throw ShapeError(msg("discriminator: input spatial size too small for ",
                                     cfg_.num_layers, " layers (", x.shape().str(), ")"));
            }
            h = layers_[i].conv->forward(h);
            if (layers_[i].norm) h = ad::relu(layers_[i].norm->forward(h));
        }
        return h;
    }

    Topology topology() const override {
        Topology topo;
        const auto ch = cfg_.channel_progression();
        int in_c = cfg_.in_channels;
        for (int i = 0; i < cfg_.num_layers; ++i) {
            TopoNode tn;
            tn.m = i;
            tn.n = 0;
            tn.in_channels = in_c;
            tn.out_channels = ch[i];
            if (i == 0) {
                tn.edges.push_back({EdgeKind::Input, -1, -1, in_c});
            } else {
                tn.edges.push_back({EdgeKind::Pool, i - 1, 0, in_c});
            }
            in_c = ch[i];
            topo.nodes.push_back(std::move(tn));
        }
        return topo;
    }

private:
    struct Layer {
        std::unique_ptr<nn::Conv2dT<S>> conv;
        std::unique_ptr<nn::InstanceNorm2dT<S>> norm;
    };

    DiscriminatorConfig cfg_;
    std::vector<Layer> layers_;
};

template <typename S>
std::unique_ptr<DiscriminatorT<S>> build_discriminator(const DiscriminatorConfig& cfg,
                                                       std::uint64_t init_seed = 0) {
    return std::make_unique<DiscriminatorT<S>>(cfg, init_seed);
}

using Discriminator = DiscriminatorT<float>;

} // namespace pat::zoo
