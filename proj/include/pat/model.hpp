#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pat/layers.hpp"

namespace pat::zoo {

enum class Arch { UNET, UNETPP, FDUNET, FDUNETPP };

inline const char* arch_name(Arch a) {
    switch (a) {
        case Arch::UNET: return "unet";
        case Arch::UNETPP: return "unetpp";
        case Arch::FDUNET: return "fdunet";
        case Arch::FDUNETPP: return "fdunetpp";
    }
    return "?";
}

inline Arch arch_from_name(const std::string& s) {
    if (s == "unet") return Arch::UNET;
    if (s == "unetpp") return Arch::UNETPP;
    if (s == "fdunet") return Arch::FDUNET;
    if (s == "fdunetpp") return Arch::FDUNETPP;
    throw ConfigError(msg("unknown arch '", s, "' (expected unet|unetpp|fdunet|fdunetpp)"));
}

enum class EdgeKind { Input, Pool, Skip, Up };

inline const char* edge_kind_name(EdgeKind k) {
    switch (k) {
        case EdgeKind::Input: return "input";
        case EdgeKind::Pool: return "pool";
        case EdgeKind::Skip: return "skip";
        case EdgeKind::Up: return "up";
    }
    return "?";
}

struct TopoEdge {
    EdgeKind kind = EdgeKind::Input;
    int from_m = -1; // -1 for the image input
    int from_n = -1;
    int channels = 0; // channel count delivered to the sink
};

struct TopoNode {
    int m = 0; // downsampling level (row)
    int n = 0; // position along the skip pathway
    int in_channels = 0;
    int out_channels = 0;
    int growth = 0;        // dense-block growth at this node, 0 for plain blocks
    int feature_count = 0; // f_l at this node's level
    std::vector<TopoEdge> edges;

    int in_degree() const { return int(edges.size()); }
};

// Deterministic node/edge listing, sorted by (m, n).
struct Topology {
    std::vector<TopoNode> nodes;

    const TopoNode* find(int m, int n) const {
        for (const auto& nd : nodes) {
            if (nd.m == m && nd.n == n) return &nd;
        }
        return nullptr;
    }
};

template <typename S>
class ModelGraphT {
public:
    virtual ~ModelGraphT() = default;

    virtual TensorT<S> forward(const TensorT<S>& x, bool training) = 0;
    virtual Topology topology() const = 0;

    std::vector<nn::NamedParamT<S>>& parameters() { return params_; }
    const std::vector<nn::NamedParamT<S>>& parameters() const { return params_; }
    std::vector<nn::NamedBufferT<S>>& buffers() { return buffers_; }

    std::vector<TensorT<S>> parameter_tensors() const {
        std::vector<TensorT<S>> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.tensor);
        return out;
    }

protected:
    std::vector<nn::NamedParamT<S>> params_;
    std::vector<nn::NamedBufferT<S>> buffers_;
};

// Exact count of trainable scalars: conv weights and biases plus
// normalization affine parameters. Running stats are excluded.
template <typename S>
std::int64_t count_parameters(const ModelGraphT<S>& model) {
    std::int64_t total = 0;
    for (const auto& p : model.parameters()) total += std::int64_t(p.tensor.numel());
    return total;
}

} // namespace pat::zoo
