#pragma once

#include <string>
#include <vector>

#include "pat/ops.hpp"

namespace pat::nn {

using ad::RunningStatsT;
using ad::TensorT;

template <typename S>
struct NamedParamT {
    std::string name;
    TensorT<S> tensor;
};

// Non-trainable persistent state (batch-norm running stats).
template <typename S>
struct NamedBufferT {
    std::string name;
    std::vector<S>* data = nullptr;
};

template <typename S>
struct Conv2dT {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 0, kw = 0;
    int stride = 1;
    int padding = 0;
    TensorT<S> weight; // (out, in, kh, kw)
    TensorT<S> bias;   // (1, out, 1, 1)

    Conv2dT() = default;
    Conv2dT(int in_c, int out_c, int k, int stride_, int pad_, Rng& rng)
        : in_channels(in_c), out_channels(out_c), kh(k), kw(k), stride(stride_),
          padding(pad_) {
        const S std = S(std::sqrt(2.0 / (double(in_c) * k * k)));
        weight = TensorT<S>::randn(Shape{out_c, in_c, k, k}, rng, std, true);
        bias = TensorT<S>::zeros(Shape{1, out_c, 1, 1}, true);
    }

    TensorT<S> forward(const TensorT<S>& x) const {
        return ad::conv2d(x, weight, bias, stride, padding);
    }

    void collect(const std::string& prefix, std::vector<NamedParamT<S>>& out) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename S>
struct ConvTranspose2dT {
    int in_channels = 0;
    int out_channels = 0;
    int kh = 0, kw = 0;
    int stride = 2;
    TensorT<S> weight; // (in, out, kh, kw)
    TensorT<S> bias;   // (1, out, 1, 1)

    ConvTranspose2dT() = default;
    ConvTranspose2dT(int in_c, int out_c, Rng& rng, int k = 2, int stride_ = 2)
        : in_channels(in_c), out_channels(out_c), kh(k), kw(k), stride(stride_) {
        const S std = S(std::sqrt(2.0 / (double(in_c) * k * k)));
        weight = TensorT<S>::randn(Shape{in_c, out_c, k, k}, rng, std, true);
        bias = TensorT<S>::zeros(Shape{1, out_c, 1, 1}, true);
    }

    TensorT<S> forward(const TensorT<S>& x) const {
        return ad::conv_transpose2d(x, weight, bias, stride);
    }

    void collect(const std::string& prefix, std::vector<NamedParamT<S>>& out) {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename S>
struct BatchNorm2dT {
    int channels = 0;
    TensorT<S> gamma;
    TensorT<S> beta;
    RunningStatsT<S> stats;
    double eps = 1e-5;

    BatchNorm2dT() = default;
    explicit BatchNorm2dT(int c) : channels(c) {
        gamma = TensorT<S>::filled(Shape{1, c, 1, 1}, S(1), true);
        beta = TensorT<S>::zeros(Shape{1, c, 1, 1}, true);
        stats.mean.assign(c, S(0));
        stats.var.assign(c, S(1));
    }

    // use_batch_stats selects train-mode normalization even at inference;
    // the pipeline trains with batch size 1, where running averages lag the
    // per-image statistics the network saw during training.
    TensorT<S> forward(const TensorT<S>& x, bool training, bool use_batch_stats = true) {
        if (training || use_batch_stats) {
            return ad::batch_norm(x, gamma, beta, training ? &stats : nullptr, true, eps);
        }
        return ad::batch_norm(x, gamma, beta, &stats, false, eps);
    }

    void collect(const std::string& prefix, std::vector<NamedParamT<S>>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }

    void collect_buffers(const std::string& prefix, std::vector<NamedBufferT<S>>& out) {
        out.push_back({prefix + ".running_mean", &stats.mean});
        out.push_back({prefix + ".running_var", &stats.var});
    }
};

template <typename S>
struct InstanceNorm2dT {
    int channels = 0;
    TensorT<S> gamma;
    TensorT<S> beta;
    double eps = 1e-5;

    InstanceNorm2dT() = default;
    explicit InstanceNorm2dT(int c) : channels(c) {
        gamma = TensorT<S>::filled(Shape{1, c, 1, 1}, S(1), true);
        beta = TensorT<S>::zeros(Shape{1, c, 1, 1}, true);
    }

    TensorT<S> forward(const TensorT<S>& x) const {
        return ad::instance_norm(x, gamma, beta, eps);
    }

    void collect(const std::string& prefix, std::vector<NamedParamT<S>>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// Densely connected block: layer i consumes the concatenation of the block
// input and all previous layer outputs (F + k*(i-1) channels) and emits k
// feature maps through a 1x1 bottleneck conv and a 3x3 conv, each followed
// by BN and ReLU. The block output is the input concatenated with every
// layer output: F + num_layers*k channels.
template <typename S>
struct DenseBlockT {
    int in_channels = 0;     // F
    int growth = 0;          // k_l
    int num_layers = 4;
    int bottleneck_width = 0; // 1x1 output width, default 4*k

    struct Layer {
        Conv2dT<S> conv1; // 1x1 to bottleneck_width
        BatchNorm2dT<S> bn1;
        Conv2dT<S> conv2; // 3x3 to growth
        BatchNorm2dT<S> bn2;
    };
    std::vector<Layer> layers;

    DenseBlockT() = default;
    DenseBlockT(int in_c, int growth_, Rng& rng, int num_layers_ = 4,
                int bottleneck_width_ = 0)
        : in_channels(in_c), growth(growth_), num_layers(num_layers_),
          bottleneck_width(bottleneck_width_ > 0 ? bottleneck_width_ : 4 * growth_) {
        layers.reserve(num_layers);
        for (int i = 0; i < num_layers; ++i) {
            const int fin = in_channels + growth * i;
            Layer l;
            l.conv1 = Conv2dT<S>(fin, bottleneck_width, 1, 1, 0, rng);
            l.bn1 = BatchNorm2dT<S>(bottleneck_width);
            l.conv2 = Conv2dT<S>(bottleneck_width, growth, 3, 1, 1, rng);
            l.bn2 = BatchNorm2dT<S>(growth);
            layers.push_back(std::move(l));
        }
    }

    int out_channels() const { return in_channels + num_layers * growth; }

    TensorT<S> forward(const TensorT<S>& x, bool training, bool batch_stats = true) {
        if (x.shape().c != in_channels) {
            throw ShapeError(msg("dense_block: input has ", x.shape().c,
                                 " channels, expected ", in_channels));
        }
        std::vector<TensorT<S>> feats{x};
        for (auto& l : layers) {
            auto h = feats.size() == 1 ? feats[0] : ad::concat_channels(feats);
            h = ad::relu(l.bn1.forward(l.conv1.forward(h), training, batch_stats));
            h = ad::relu(l.bn2.forward(l.conv2.forward(h), training, batch_stats));
            feats.push_back(h);
        }
        return ad::concat_channels(feats);
    }

    void collect(const std::string& prefix, std::vector<NamedParamT<S>>& out) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string lp = prefix + ".layer" + std::to_string(i + 1);
            layers[i].conv1.collect(lp + ".conv1", out);
            layers[i].bn1.collect(lp + ".bn1", out);
            layers[i].conv2.collect(lp + ".conv2", out);
            layers[i].bn2.collect(lp + ".bn2", out);
        }
    }

    void collect_buffers(const std::string& prefix, std::vector<NamedBufferT<S>>& out) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string lp = prefix + ".layer" + std::to_string(i + 1);
            layers[i].bn1.collect_buffers(lp + ".bn1", out);
            layers[i].bn2.collect_buffers(lp + ".bn2", out);
        }
    }
};

} // namespace pat::nn
