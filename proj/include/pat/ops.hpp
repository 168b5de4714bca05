#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "pat/parallel.hpp"
#include "pat/tensor.hpp"

namespace pat::ad {

enum class OpKind {
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Conv2d,
    ConvTranspose2d,
    MaxPool2x2,
    BatchNorm,
    InstanceNorm,
    ConcatChannels,
    MeanAll,
    SumAll,
    BceWithLogitsMean,
    L1Mean,
};

struct OpAttrs {
    int stride = 1;
    int pad = 0;
    double alpha = 1.0;  // Scale factor
    double target = 0.0; // BceWithLogitsMean label (0 or 1)
    double eps = 1e-5;   // normalization epsilon
    double clamp = 30.0; // logit clamp inside the BCE loss
    bool training = true;
};

// Running statistics owned by a batch-norm layer, updated in training mode.
template <typename S>
struct RunningStatsT {
    std::vector<S> mean;
    std::vector<S> var;
    double momentum = 0.1;
};

namespace detail {

// Work threshold below which ops stay single-threaded.
constexpr std::size_t kParallelGrain = 1 << 15;

template <typename S>
bool should_record(std::initializer_list<const TensorT<S>*> inputs) {
    if (!TapeT<S>::current()) return false;
    for (const auto* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <typename S>
TapeNodeT<S>& record(const char* kind, std::initializer_list<TensorT<S>> inputs,
                     TensorT<S>& out) {
    out.var()->requires_grad = true;
    auto& n = TapeT<S>::current()->append(kind);
    n.inputs.reserve(inputs.size());
    for (const auto& t : inputs) n.inputs.push_back(t.var());
    n.output = out.var();
    return n;
}

template <typename S>
void accumulate(VariableT<S>& v, const std::vector<S>& contrib) {
    auto& g = v.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += contrib[i];
}

template <typename S>
void check_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError(msg(op, ": shape mismatch ", a.shape().str(), " vs ",
                             b.shape().str()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape("add", a, b);
    auto out = TensorT<S>::zeros(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::should_record<S>({&a, &b})) {
        auto& node = detail::record("add", {a, b}, out);
        node.backward = [](TapeNodeT<S>& nd) {
            const auto& gy = nd.output->grad;
            for (int k = 0; k < 2; ++k) {
                if (!nd.inputs[k]->requires_grad) continue;
                detail::accumulate(*nd.inputs[k], gy);
            }
        };
    }
    return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape("sub", a, b);
    auto out = TensorT<S>::zeros(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (detail::should_record<S>({&a, &b})) {
        auto& node = detail::record("sub", {a, b}, out);
        node.backward = [](TapeNodeT<S>& nd) {
            const auto& gy = nd.output->grad;
            if (nd.inputs[0]->requires_grad) detail::accumulate(*nd.inputs[0], gy);
            if (nd.inputs[1]->requires_grad) {
                auto& g = nd.inputs[1]->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= gy[i];
            }
        };
    }
    return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape("mul", a, b);
    auto out = TensorT<S>::zeros(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::should_record<S>({&a, &b})) {
        auto& node = detail::record("mul", {a, b}, out);
        node.backward = [](TapeNodeT<S>& nd) {
            const auto& gy = nd.output->grad;
            const auto& va = nd.inputs[0]->value;
            const auto& vb = nd.inputs[1]->value;
            if (nd.inputs[0]->requires_grad) {
                auto& g = nd.inputs[0]->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * vb[i];
            }
            if (nd.inputs[1]->requires_grad) {
                auto& g = nd.inputs[1]->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * va[i];
            }
        };
    }
    return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& x, double alpha) {
    auto out = TensorT<S>::zeros(x.shape());
    const S a = S(alpha);
    const S* px = x.data();
    S* po = out.data();
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = a * px[i];
    if (detail::should_record<S>({&x})) {
        auto& node = detail::record("scale", {x}, out);
        node.backward = [a](TapeNodeT<S>& nd) {
            const auto& gy = nd.output->grad;
            if (!nd.inputs[0]->requires_grad) return;
            auto& g = nd.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += a * gy[i];
        };
    }
    return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
    auto out = TensorT<S>::zeros(x.shape());
    const S* px = x.data();
    S* po = out.data();
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > S(0) ? px[i] : S(0);
    if (detail::should_record<S>({&x})) {
        auto& node = detail::record("relu", {x}, out);
        node.backward = [](TapeNodeT<S>& nd) {
            if (!nd.inputs[0]->requires_grad) return;
            const auto& gy = nd.output->grad;
            const auto& vx = nd.inputs[0]->value;
            auto& g = nd.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (vx[i] > S(0)) g[i] += gy[i];
            }
        };
    }
    return out;
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    auto out = TensorT<S>::zeros(x.shape());
    const S* px = x.data();
    S* po = out.data();
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = double(px[i]);
        po[i] = S(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                           : std::exp(v) / (1.0 + std::exp(v)));
    }
    if (detail::should_record<S>({&x})) {
        auto& node = detail::record("sigmoid", {x}, out);
        node.backward = [](TapeNodeT<S>& nd) {
            if (!nd.inputs[0]->requires_grad) return;
            const auto& gy = nd.output->grad;
            const auto& vy = nd.output->value;
            auto& g = nd.inputs[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += gy[i] * vy[i] * (S(1) - vy[i]);
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution

// x: (B, Cin, H, W), w: (Cout, Cin, KH, KW), bias: (1, Cout, 1, 1)
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias,
                  int stride, int pad) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    if (xs.c != ws.c) {
        throw ShapeError(msg("conv2d: input has ", xs.c, " channels but kernel expects ",
                             ws.c, " (input ", xs.str(), ", kernel ", ws.str(), ")"));
    }
    if (bias.shape().c != ws.b || bias.numel() != std::size_t(ws.b)) {
        throw ShapeError(msg("conv2d: bias shape ", bias.shape().str(),
                             " does not match ", ws.b, " output channels"));
    }
    const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    if (oh <= 0 || ow <= 0 || xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w) {
        throw ShapeError(msg("conv2d: non-positive output size for input ", xs.str(),
                             ", kernel ", ws.h, "x", ws.w, ", stride ", stride,
                             ", pad ", pad));
    }
    const Shape os{xs.b, ws.b, oh, ow};
    auto out = TensorT<S>::zeros(os);

    const S* px = x.data();
    const S* pw = w.data();
    const S* pb = bias.data();
    S* po = out.data();
    const int B = xs.b, Cin = xs.c, H = xs.h, W = xs.w;
    const int Cout = ws.b, KH = ws.h, KW = ws.w;

    const std::size_t macs = std::size_t(B) * Cout * Cin * KH * KW * oh * ow;
    auto run_oc = [&](int bo) {
        const int b = bo / Cout;
        const int oc = bo % Cout;
        S* yplane = po + (std::size_t(b) * Cout + oc) * oh * ow;
        const S bval = pb[oc];
        for (int i = 0; i < oh * ow; ++i) yplane[i] = bval;
        for (int ic = 0; ic < Cin; ++ic) {
            const S* xplane = px + (std::size_t(b) * Cin + ic) * H * W;
            const S* wk = pw + (std::size_t(oc) * Cin + ic) * KH * KW;
            for (int kh = 0; kh < KH; ++kh) {
                for (int kw = 0; kw < KW; ++kw) {
                    const S wv = wk[kh * KW + kw];
                    if (wv == S(0)) continue;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + kh;
                        if (iy < 0 || iy >= H) continue;
                        const S* xrow = xplane + std::size_t(iy) * W;
                        S* yrow = yplane + std::size_t(oy) * ow;
                        int ox0 = 0, ox1 = ow;
                        // Clip to the valid input column range.
                        while (ox0 < ow && ox0 * stride - pad + kw < 0) ++ox0;
                        while (ox1 > ox0 && (ox1 - 1) * stride - pad + kw >= W) --ox1;
                        const int xoff = -pad + kw;
                        if (stride == 1) {
                            const S* xr = xrow + xoff;
                            for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xr[ox];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox) {
                                yrow[ox] += wv * xrow[ox * stride + xoff];
                            }
                        }
                    }
                }
            }
        }
    };
    parallel_for_if(macs > detail::kParallelGrain, B * Cout, run_oc);

    if (detail::should_record<S>({&x, &w, &bias})) {
        auto& node = detail::record("conv2d", {x, w, bias}, out);
        node.backward = [stride, pad](TapeNodeT<S>& nd) {
            conv2d_backward(nd, stride, pad);
        };
    }
    return out;
}

template <typename S>
void conv2d_backward(TapeNodeT<S>& nd, int stride, int pad) {
    auto& xv = *nd.inputs[0];
    auto& wv = *nd.inputs[1];
    auto& bv = *nd.inputs[2];
    const auto& gy = nd.output->grad;
    const Shape xs = xv.shape, ws = wv.shape, os = nd.output->shape;
    const int B = xs.b, Cin = xs.c, H = xs.h, W = xs.w;
    const int Cout = ws.b, KH = ws.h, KW = ws.w, OH = os.h, OW = os.w;
    const std::size_t macs = std::size_t(B) * Cout * Cin * KH * KW * OH * OW;

    if (bv.requires_grad) {
        auto& gb = bv.ensure_grad();
        for (int b = 0; b < B; ++b) {
            for (int oc = 0; oc < Cout; ++oc) {
                const S* gplane = gy.data() + (std::size_t(b) * Cout + oc) * OH * OW;
                S acc = 0;
                for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
                gb[oc] += acc;
            }
        }
    }
    if (wv.requires_grad) {
        auto& gw = wv.ensure_grad();
        const S* px = xv.value.data();
        const S* pg = gy.data();
        parallel_for_if(macs > detail::kParallelGrain, Cout, [&](int oc) {
            for (int ic = 0; ic < Cin; ++ic) {
                S* gwk = gw.data() + (std::size_t(oc) * Cin + ic) * KH * KW;
                for (int kh = 0; kh < KH; ++kh) {
                    for (int kw = 0; kw < KW; ++kw) {
                        S acc = 0;
                        for (int b = 0; b < B; ++b) {
                            const S* xplane = px + (std::size_t(b) * Cin + ic) * H * W;
                            const S* gplane = pg + (std::size_t(b) * Cout + oc) * OH * OW;
                            for (int oy = 0; oy < OH; ++oy) {
                                const int iy = oy * stride - pad + kh;
                                if (iy < 0 || iy >= H) continue;
                                const S* xrow = xplane + std::size_t(iy) * W;
                                const S* grow = gplane + std::size_t(oy) * OW;
                                int ox0 = 0, ox1 = OW;
                                while (ox0 < OW && ox0 * stride - pad + kw < 0) ++ox0;
                                while (ox1 > ox0 && (ox1 - 1) * stride - pad + kw >= W) --ox1;
                                const int xoff = -pad + kw;
                                if (stride == 1) {
                                    const S* xr = xrow + xoff;
                                    for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * xr[ox];
                                } else {
                                    for (int ox = ox0; ox < ox1; ++ox) {
                                        acc += grow[ox] * xrow[ox * stride + xoff];
                                    }
                                }
                            }
                        }
                        gwk[kh * KW + kw] += acc;
                    }
                }
            }
        });
    }
    if (xv.requires_grad) {
        auto& gx = xv.ensure_grad();
        const S* pw = wv.value.data();
        const S* pg = gy.data();
        parallel_for_if(macs > detail::kParallelGrain, B * Cin, [&](int bi) {
            const int b = bi / Cin;
            const int ic = bi % Cin;
            S* gxplane = gx.data() + (std::size_t(b) * Cin + ic) * H * W;
            for (int oc = 0; oc < Cout; ++oc) {
                const S* gplane = pg + (std::size_t(b) * Cout + oc) * OH * OW;
                const S* wk = pw + (std::size_t(oc) * Cin + ic) * KH * KW;
                for (int kh = 0; kh < KH; ++kh) {
                    for (int kw = 0; kw < KW; ++kw) {
                        const S wval = wk[kh * KW + kw];
                        if (wval == S(0)) continue;
                        for (int oy = 0; oy < OH; ++oy) {
                            const int iy = oy * stride - pad + kh;
                            if (iy < 0 || iy >= H) continue;
                            S* gxrow = gxplane + std::size_t(iy) * W;
                            const S* grow = gplane + std::size_t(oy) * OW;
                            int ox0 = 0, ox1 = OW;
                            while (ox0 < OW && ox0 * stride - pad + kw < 0) ++ox0;
                            while (ox1 > ox0 && (ox1 - 1) * stride - pad + kw >= W) --ox1;
                            const int xoff = -pad + kw;
                            if (stride == 1) {
                                S* gxr = gxrow + xoff;
                                for (int ox = ox0; ox < ox1; ++ox) gxr[ox] += wval * grow[ox];
                            } else {
                                for (int ox = ox0; ox < ox1; ++ox) {
                                    gxrow[ox * stride + xoff] += wval * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
}

// x: (B, Cin, H, W), w: (Cin, Cout, KH, KW), bias: (1, Cout, 1, 1).
// Output spatial size (H-1)*stride + KH; the default 2x2/stride-2 spec
// doubles both spatial dims.
template <typename S>
TensorT<S> conv_transpose2d(const TensorT<S>& x, const TensorT<S>& w,
                            const TensorT<S>& bias, int stride) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    if (xs.c != ws.b) {
        throw ShapeError(msg("conv_transpose2d: input has ", xs.c,
                             " channels but kernel expects ", ws.b, " (input ", xs.str(),
                             ", kernel ", ws.str(), ")"));
    }
    if (bias.shape().c != ws.c || bias.numel() != std::size_t(ws.c)) {
        throw ShapeError(msg("conv_transpose2d: bias shape ", bias.shape().str(),
                             " does not match ", ws.c, " output channels"));
    }
    const int Cin = ws.b, Cout = ws.c, KH = ws.h, KW = ws.w;
    const int OH = (xs.h - 1) * stride + KH;
    const int OW = (xs.w - 1) * stride + KW;
    const Shape os{xs.b, Cout, OH, OW};
    auto out = TensorT<S>::zeros(os);

    const S* px = x.data();
    const S* pw = w.data();
    const S* pb = bias.data();
    S* po = out.data();
    const int B = xs.b, H = xs.h, W = xs.w;
    const std::size_t macs = std::size_t(B) * Cout * Cin * KH * KW * H * W;

    parallel_for_if(macs > detail::kParallelGrain, B * Cout, [&](int bo) {
        const int b = bo / Cout;
        const int oc = bo % Cout;
        S* yplane = po + (std::size_t(b) * Cout + oc) * OH * OW;
        const S bval = pb[oc];
        for (int i = 0; i < OH * OW; ++i) yplane[i] = bval;
        for (int ic = 0; ic < Cin; ++ic) {
            const S* xplane = px + (std::size_t(b) * Cin + ic) * H * W;
            const S* wk = pw + (std::size_t(ic) * Cout + oc) * KH * KW;
            for (int kh = 0; kh < KH; ++kh) {
                for (int kw = 0; kw < KW; ++kw) {
                    const S wval = wk[kh * KW + kw];
                    if (wval == S(0)) continue;
                    for (int iy = 0; iy < H; ++iy) {
                        const S* xrow = xplane + std::size_t(iy) * W;
                        S* yrow = yplane + std::size_t(iy * stride + kh) * OW + kw;
                        for (int ix = 0; ix < W; ++ix) {
                            yrow[ix * stride] += wval * xrow[ix];
                        }
                    }
                }
            }
        }
    });

    if (detail::should_record<S>({&x, &w, &bias})) {
        auto& node = detail::record("conv_transpose2d", {x, w, bias}, out);
        node.backward = [stride](TapeNodeT<S>& nd) {
            conv_transpose2d_backward(nd, stride);
        };
    }
    return out;
}

template <typename S>
void conv_transpose2d_backward(TapeNodeT<S>& nd, int stride) {
    auto& xv = *nd.inputs[0];
    auto& wv = *nd.inputs[1];
    auto& bv = *nd.inputs[2];
    const auto& gy = nd.output->grad;
    const Shape xs = xv.shape, ws = wv.shape, os = nd.output->shape;
    const int B = xs.b, Cin = xs.c, H = xs.h, W = xs.w;
    const int Cout = ws.c, KH = ws.h, KW = ws.w, OH = os.h, OW = os.w;
    const std::size_t macs = std::size_t(B) * Cout * Cin * KH * KW * H * W;

    if (bv.requires_grad) {
        auto& gb = bv.ensure_grad();
        for (int b = 0; b < B; ++b) {
            for (int oc = 0; oc < Cout; ++oc) {
                const S* gplane = gy.data() + (std::size_t(b) * Cout + oc) * OH * OW;
                S acc = 0;
                for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
                gb[oc] += acc;
            }
        }
    }
    if (wv.requires_grad) {
        auto& gw = wv.ensure_grad();
        const S* px = xv.value.data();
        const S* pg = gy.data();
        parallel_for_if(macs > detail::kParallelGrain, Cin, [&](int ic) {
            for (int oc = 0; oc < Cout; ++oc) {
                S* gwk = gw.data() + (std::size_t(ic) * Cout + oc) * KH * KW;
                for (int kh = 0; kh < KH; ++kh) {
                    for (int kw = 0; kw < KW; ++kw) {
                        S acc = 0;
                        for (int b = 0; b < B; ++b) {
                            const S* xplane = px + (std::size_t(b) * Cin + ic) * H * W;
                            const S* gplane = pg + (std::size_t(b) * Cout + oc) * OH * OW;
                            for (int iy = 0; iy < H; ++iy) {
                                const S* xrow = xplane + std::size_t(iy) * W;
                                const S* grow =
                                    gplane + std::size_t(iy * stride + kh) * OW + kw;
                                for (int ix = 0; ix < W; ++ix) {
                                    acc += xrow[ix] * grow[ix * stride];
                                }
                            }
                        }
                        gwk[kh * KW + kw] += acc;
                    }
                }
            }
        });
    }
    if (xv.requires_grad) {
        auto& gx = xv.ensure_grad();
        const S* pw = wv.value.data();
        const S* pg = gy.data();
        parallel_for_if(macs > detail::kParallelGrain, B * Cin, [&](int bi) {
            const int b = bi / Cin;
            const int ic = bi % Cin;
            S* gxplane = gx.data() + (std::size_t(b) * Cin + ic) * H * W;
            for (int oc = 0; oc < Cout; ++oc) {
                const S* gplane = pg + (std::size_t(b) * Cout + oc) * OH * OW;
                const S* wk = pw + (std::size_t(ic) * Cout + oc) * KH * KW;
                for (int kh = 0; kh < KH; ++kh) {
                    for (int kw = 0; kw < KW; ++kw) {
                        const S wval = wk[kh * KW + kw];
                        if (wval == S(0)) continue;
                        for (int iy = 0; iy < H; ++iy) {
                            S* gxrow = gxplane + std::size_t(iy) * W;
                            const S* grow =
                                gplane + std::size_t(iy * stride + kh) * OW + kw;
                            for (int ix = 0; ix < W; ++ix) {
                                gxrow[ix] += wval * grow[ix * stride];
                            }
                        }
                    }
                }
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Pooling

template <typename S>
TensorT<S> maxpool2x2(const TensorT<S>& x) {
    const Shape xs = x.shape();
    if (xs.h % 2 != 0 || xs.w % 2 != 0) {
        throw ShapeError(msg("maxpool2x2: spatial dims must be even, got ", xs.str()));
    }
    const Shape os{xs.b, xs.c, xs.h / 2, xs.w / 2};
    auto out = TensorT<S>::zeros(os);
    std::vector<std::int32_t> argmax(os.numel());

    const S* px = x.data();
    S* po = out.data();
    const int planes = xs.b * xs.c, H = xs.h, W = xs.w, OH = os.h, OW = os.w;
    for (int p = 0; p < planes; ++p) {
        const S* xplane = px + std::size_t(p) * H * W;
        S* yplane = po + std::size_t(p) * OH * OW;
        std::int32_t* aplane = argmax.data() + std::size_t(p) * OH * OW;
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                const int iy = oy * 2, ix = ox * 2;
                int best = iy * W + ix;
                S bv = xplane[best];
                const int cand[3] = {iy * W + ix + 1, (iy + 1) * W + ix,
                                     (iy + 1) * W + ix + 1};
                for (int c : cand) {
                    if (xplane[c] > bv) {
                        bv = xplane[c];
                        best = c;
                    }
                }
                yplane[oy * OW + ox] = bv;
                aplane[oy * OW + ox] = best;
            }
        }
    }

    if (detail::should_record<S>({&x})) {
        auto& node = detail::record("maxpool2x2", {x}, out);
        node.saved_i = std::move(argmax);
        node.backward = [](TapeNodeT<S>& nd) {
            if (!nd.inputs[0]->requires_grad) return;
            const auto& gy = nd.output->grad;
            auto& gx = nd.inputs[0]->ensure_grad();
            const Shape os = nd.output->shape;
            const Shape xs = nd.inputs[0]->shape;
            const int planes = os.b * os.c;
            const int ons = os.h * os.w, ins = xs.h * xs.w;
            for (int p = 0; p < planes; ++p) {
                const S* gplane = gy.data() + std::size_t(p) * ons;
                S* gxplane = gx.data() + std::size_t(p) * ins;
                const std::int32_t* aplane = nd.saved_i.data() + std::size_t(p) * ons;
                for (int i = 0; i < ons; ++i) gxplane[aplane[i]] += gplane[i];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

namespace detail {

// Shared normalization backward. Group g covers `n` contiguous elements of
// channel c; xhat and inv_std were saved at forward time.
// dx = gamma*inv_std/n * (n*gy - sum(gy) - xhat*sum(gy*xhat))
template <typename S>
void norm_backward_group(const S* gy, const S* xhat, S inv_std, S gamma, int n,
                         S* gx, S* dgamma, S* dbeta) {
    S sum_gy = 0, sum_gy_xhat = 0;
    for (int i = 0; i < n; ++i) {
        sum_gy += gy[i];
        sum_gy_xhat += gy[i] * xhat[i];
    }
    if (dgamma) *dgamma += sum_gy_xhat;
    if (dbeta) *dbeta += sum_gy;
    if (gx) {
        const S k = gamma * inv_std / S(n);
        for (int i = 0; i < n; ++i) {
            gx[i] += k * (S(n) * gy[i] - sum_gy - xhat[i] * sum_gy_xhat);
        }
    }
}

} // namespace detail

// Training mode normalizes over (batch, H, W) per channel and updates running
// stats when provided; eval mode normalizes with the stored running stats.
template <typename S>
TensorT<S> batch_norm(const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, RunningStatsT<S>* rs, bool training,
                      double eps = 1e-5) {
    const Shape xs = x.shape();
    if (int(gamma.numel()) != xs.c || int(beta.numel()) != xs.c) {
        throw ShapeError(msg("batch_norm: affine params have ", gamma.numel(),
                             "/", beta.numel(), " elements for ", xs.c, " channels"));
    }
    auto out = TensorT<S>::zeros(xs);
    const int B = xs.b, C = xs.c, HW = xs.h * xs.w;
    const int n = B * HW;
    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pbeta = beta.data();
    S* po = out.data();

    std::vector<S> xhat(x.numel());
    std::vector<S> inv_std_c(C);

    for (int c = 0; c < C; ++c) {
        S mean, var;
        if (training) {
            S sum = 0;
            for (int b = 0; b < B; ++b) {
                const S* xp = px + (std::size_t(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) sum += xp[i];
            }
            mean = sum / S(n);
            S sq = 0;
            for (int b = 0; b < B; ++b) {
                const S* xp = px + (std::size_t(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) {
                    const S d = xp[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / S(n);
            if (rs) {
                const S m = S(rs->momentum);
                rs->mean[c] = (S(1) - m) * rs->mean[c] + m * mean;
                rs->var[c] = (S(1) - m) * rs->var[c] + m * var;
            }
        } else {
            if (!rs) throw ValueError("batch_norm: eval mode requires running stats");
            mean = rs->mean[c];
            var = rs->var[c];
        }
        const S inv_std = S(1) / std::sqrt(var + S(eps));
        inv_std_c[c] = inv_std;
        for (int b = 0; b < B; ++b) {
            const S* xp = px + (std::size_t(b) * C + c) * HW;
            S* xh = xhat.data() + (std::size_t(b) * C + c) * HW;
            S* yp = po + (std::size_t(b) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
                xh[i] = (xp[i] - mean) * inv_std;
                yp[i] = pg[c] * xh[i] + pbeta[c];
            }
        }
    }

    if (detail::should_record<S>({&x, &gamma, &beta})) {
        auto& node = detail::record("batch_norm", {x, gamma, beta}, out);
        node.saved = std::move(xhat);
        node.saved.insert(node.saved.end(), inv_std_c.begin(), inv_std_c.end());
        const bool train_stats = training;
        node.backward = [train_stats](TapeNodeT<S>& nd) {
            const Shape xs = nd.inputs[0]->shape;
            const int B = xs.b, C = xs.c, HW = xs.h * xs.w;
            const auto& gy = nd.output->grad;
            const S* xhat = nd.saved.data();
            const S* inv_std = nd.saved.data() + nd.inputs[0]->value.size();
            auto& xv = *nd.inputs[0];
            auto& gv = *nd.inputs[1];
            auto& bv = *nd.inputs[2];
            S* gx = xv.requires_grad ? xv.ensure_grad().data() : nullptr;
            S* dgamma = gv.requires_grad ? gv.ensure_grad().data() : nullptr;
            S* dbeta = bv.requires_grad ? bv.ensure_grad().data() : nullptr;
            if (train_stats) {
                // Batch statistics participated in the forward pass; gather
                // each channel's slices into one contiguous group.
                std::vector<S> gyc(std::size_t(B) * HW), xhc(std::size_t(B) * HW),
                    gxc(std::size_t(B) * HW);
                for (int c = 0; c < C; ++c) {
                    for (int b = 0; b < B; ++b) {
                        const std::size_t src = (std::size_t(b) * C + c) * HW;
                        std::memcpy(gyc.data() + std::size_t(b) * HW, gy.data() + src,
                                    sizeof(S) * HW);
                        std::memcpy(xhc.data() + std::size_t(b) * HW, xhat + src,
                                    sizeof(S) * HW);
                    }
                    std::fill(gxc.begin(), gxc.end(), S(0));
                    detail::norm_backward_group(
                        gyc.data(), xhc.data(), inv_std[c], nd.inputs[1]->value[c],
                        B * HW, gx ? gxc.data() : nullptr,
                        dgamma ? dgamma + c : nullptr, dbeta ? dbeta + c : nullptr);
                    if (gx) {
                        for (int b = 0; b < B; ++b) {
                            const std::size_t dst = (std::size_t(b) * C + c) * HW;
                            const S* src = gxc.data() + std::size_t(b) * HW;
                            for (int i = 0; i < HW; ++i) gx[dst + i] += src[i];
                        }
                    }
                }
            } else {
                // Running stats are constants: dx = gy * gamma * inv_std.
                for (int c = 0; c < C; ++c) {
                    const S k = nd.inputs[1]->value[c] * inv_std[c];
                    for (int b = 0; b < B; ++b) {
                        const std::size_t off = (std::size_t(b) * C + c) * HW;
                        S sum_gy = 0, sum_gy_xhat = 0;
                        for (int i = 0; i < HW; ++i) {
                            const S g = gy[off + i];
                            sum_gy += g;
                            sum_gy_xhat += g * xhat[off + i];
                            if (gx) gx[off + i] += k * g;
                        }
                        if (dgamma) dgamma[c] += sum_gy_xhat;
                        if (dbeta) dbeta[c] += sum_gy;
                    }
                }
            }
        };
    }
    return out;
}

// Normalizes over (H, W) independently per (batch, channel) pair.
template <typename S>
TensorT<S> instance_norm(const TensorT<S>& x, const TensorT<S>& gamma,
                         const TensorT<S>& beta, double eps = 1e-5) {
    const Shape xs = x.shape();
    if (int(gamma.numel()) != xs.c || int(beta.numel()) != xs.c) {
        throw ShapeError(msg("instance_norm: affine params have ", gamma.numel(),
                             "/", beta.numel(), " elements for ", xs.c, " channels"));
    }
    auto out = TensorT<S>::zeros(xs);
    const int B = xs.b, C = xs.c, HW = xs.h * xs.w;
    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pb = beta.data();
    S* po = out.data();

    std::vector<S> xhat(x.numel());
    std::vector<S> inv_std_bc(std::size_t(B) * C);

    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const std::size_t off = (std::size_t(b) * C + c) * HW;
            const S* xp = px + off;
            S sum = 0;
            for (int i = 0; i < HW; ++i) sum += xp[i];
            const S mean = sum / S(HW);
            S sq = 0;
            for (int i = 0; i < HW; ++i) {
                const S d = xp[i] - mean;
                sq += d * d;
            }
            const S var = sq / S(HW);
            const S inv_std = S(1) / std::sqrt(var + S(eps));
            inv_std_bc[std::size_t(b) * C + c] = inv_std;
            for (int i = 0; i < HW; ++i) {
                xhat[off + i] = (xp[i] - mean) * inv_std;
                po[off + i] = pg[c] * xhat[off + i] + pb[c];
            }
        }
    }

    if (detail::should_record<S>({&x, &gamma, &beta})) {
        auto& node = detail::record("instance_norm", {x, gamma, beta}, out);
        node.saved = std::move(xhat);
        node.saved.insert(node.saved.end(), inv_std_bc.begin(), inv_std_bc.end());
        node.backward = [](TapeNodeT<S>& nd) {
            const Shape xs = nd.inputs[0]->shape;
            const int B = xs.b, C = xs.c, HW = xs.h * xs.w;
            const auto& gy = nd.output->grad;
            const S* xhat = nd.saved.data();
            const S* inv_std = nd.saved.data() + nd.inputs[0]->value.size();
            auto& xv = *nd.inputs[0];
            auto& gv = *nd.inputs[1];
            auto& bv = *nd.inputs[2];
            S* gx = xv.requires_grad ? xv.ensure_grad().data() : nullptr;
            S* dgamma = gv.requires_grad ? gv.ensure_grad().data() : nullptr;
            S* dbeta = bv.requires_grad ? bv.ensure_grad().data() : nullptr;
            for (int b = 0; b < B; ++b) {
                for (int c = 0; c < C; ++c) {
                    const std::size_t off = (std::size_t(b) * C + c) * HW;
                    detail::norm_backward_group(
                        gy.data() + off, xhat + off, inv_std[std::size_t(b) * C + c],
                        nd.inputs[1]->value[c], HW, gx ? gx + off : nullptr,
                        dgamma ? dgamma + c : nullptr, dbeta ? dbeta + c : nullptr);
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Concatenation and reductions

template <typename S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& xs) {
    if (xs.empty()) throw ValueError("concat_channels: empty input list");
    const Shape s0 = xs[0].shape();
    int total_c = 0;
    for (const auto& t : xs) {
        const Shape s = t.shape();
        if (s.b != s0.b || s.h != s0.h || s.w != s0.w) {
            throw ShapeError(msg("concat_channels: incompatible shapes ", s0.str(),
                                 " vs ", s.str()));
        }
        total_c += s.c;
    }
    const Shape os{s0.b, total_c, s0.h, s0.w};
    auto out = TensorT<S>::zeros(os);
    const int HW = s0.h * s0.w;
    S* po = out.data();
    for (int b = 0; b < s0.b; ++b) {
        int coff = 0;
        for (const auto& t : xs) {
            const int c = t.shape().c;
            const S* src = t.data() + std::size_t(b) * c * HW;
            S* dst = po + (std::size_t(b) * total_c + coff) * HW;
            std::memcpy(dst, src, sizeof(S) * std::size_t(c) * HW);
            coff += c;
        }
    }

    bool any_grad = false;
    for (const auto& t : xs) any_grad = any_grad || t.requires_grad();
    if (TapeT<S>::current() && any_grad) {
        out.var()->requires_grad = true;
        auto& node = TapeT<S>::current()->append("concat_channels");
        for (const auto& t : xs) node.inputs.push_back(t.var());
        node.output = out.var();
        node.backward = [](TapeNodeT<S>& nd) {
            const Shape os = nd.output->shape;
            const auto& gy = nd.output->grad;
            const int HW = os.h * os.w;
            for (int b = 0; b < os.b; ++b) {
                int coff = 0;
                for (auto& in : nd.inputs) {
                    const int c = in->shape.c;
                    if (in->requires_grad) {
                        S* gx = in->ensure_grad().data() + std::size_t(b) * c * HW;
                        const S* src = gy.data() + (std::size_t(b) * os.c + coff) * HW;
                        for (std::size_t i = 0; i < std::size_t(c) * HW; ++i) {
                            gx[i] += src[i];
                        }
                    }
                    coff += c;
                }
            }
        };
    }
    return out;
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& x) {
    auto out = TensorT<S>::zeros(Shape{1, 1, 1, 1});
    S acc = 0;
    const S* px = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
    out.data()[0] = acc;
    if (detail::should_record<S>({&x})) {
        auto& node = detail::record("sum_all", {x}, out);
        node.backward = [](TapeNodeT<S>& nd) {
            if (!nd.inputs[0]->requires_grad) return;
            const S g = nd.output->grad[0];
            auto& gx = nd.inputs[0]->ensure_grad();
            for (auto& v : gx) v += g;
        };
    }
    return out;
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& x) {
    auto out = TensorT<S>::zeros(Shape{1, 1, 1, 1});
    S acc = 0;
    const S* px = x.data();
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) acc += px[i];
    out.data()[0] = acc / S(n);
    if (detail::should_record<S>({&x})) {
        auto& node = detail::record("mean_all", {x}, out);
        node.backward = [](TapeNodeT<S>& nd) {
            if (!nd.inputs[0]->requires_grad) return;
            auto& gx = nd.inputs[0]->ensure_grad();
            const S g = nd.output->grad[0] / S(gx.size());
            for (auto& v : gx) v += g;
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fused losses

// mean over elements of [softplus(s) - s*t] with logits clamped to
// +-clamp; equals -mean log sigmoid(s) for t=1 and -mean log(1-sigmoid(s))
// for t=0. The clamp guarantees finiteness under saturation.
template <typename S>
TensorT<S> bce_with_logits_mean(const TensorT<S>& scores, double target,
                                double clamp = 30.0) {
    if (target != 0.0 && target != 1.0) {
        throw ValueError(msg("bce_with_logits_mean: target must be 0 or 1, got ", target));
    }
    auto out = TensorT<S>::zeros(Shape{1, 1, 1, 1});
    const S* ps = scores.data();
    const std::size_t n = scores.numel();
    const double t = target;
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = double(ps[i]);
        if (s > clamp) s = clamp;
        if (s < -clamp) s = -clamp;
        acc += std::max(s, 0.0) - s * t + std::log1p(std::exp(-std::abs(s)));
    }
    out.data()[0] = S(acc / double(n));
    if (detail::should_record<S>({&scores})) {
        auto& node = detail::record("bce_with_logits_mean", {scores}, out);
        const double tt = target;
        const double cl = clamp;
        node.backward = [tt, cl](TapeNodeT<S>& nd) {
            if (!nd.inputs[0]->requires_grad) return;
            const auto& vs = nd.inputs[0]->value;
            auto& gx = nd.inputs[0]->ensure_grad();
            const double g = double(nd.output->grad[0]) / double(vs.size());
            for (std::size_t i = 0; i < vs.size(); ++i) {
                const double s = double(vs[i]);
                if (s > cl || s < -cl) continue; // clamped: zero slope
                const double sig = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                                            : std::exp(s) / (1.0 + std::exp(s));
                gx[i] += S(g * (sig - tt));
            }
        };
    }
    return out;
}

// mean |a - b|; subgradient at zero is zero.
template <typename S>
TensorT<S> l1_mean(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape("l1_mean", a, b);
    auto out = TensorT<S>::zeros(Shape{1, 1, 1, 1});
    const S* pa = a.data();
    const S* pb = b.data();
    const std::size_t n = a.numel();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(double(pa[i]) - double(pb[i]));
    out.data()[0] = S(acc / double(n));
    if (detail::should_record<S>({&a, &b})) {
        auto& node = detail::record("l1_mean", {a, b}, out);
        node.backward = [](TapeNodeT<S>& nd) {
            const auto& va = nd.inputs[0]->value;
            const auto& vb = nd.inputs[1]->value;
            const S g = nd.output->grad[0] / S(va.size());
            S* ga = nd.inputs[0]->requires_grad ? nd.inputs[0]->ensure_grad().data()
                                                : nullptr;
            S* gb = nd.inputs[1]->requires_grad ? nd.inputs[1]->ensure_grad().data()
                                                : nullptr;
            for (std::size_t i = 0; i < va.size(); ++i) {
                const S d = va[i] - vb[i];
                const S s = d > S(0) ? g : (d < S(0) ? -g : S(0));
                if (ga) ga[i] += s;
                if (gb) gb[i] -= s;
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generic dispatcher over the op-kind enum.

template <typename S>
TensorT<S> forward_op(OpKind kind, const std::vector<TensorT<S>>& inputs,
                      const OpAttrs& attrs = {}) {
    auto need = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw ValueError(msg("forward_op: op expects ", n, " inputs, got ",
                                 inputs.size()));
        }
    };
    switch (kind) {
        case OpKind::Add: need(2); return add(inputs[0], inputs[1]);
        case OpKind::Sub: need(2); return sub(inputs[0], inputs[1]);
        case OpKind::Mul: need(2); return mul(inputs[0], inputs[1]);
        case OpKind::Scale: need(1); return scale(inputs[0], attrs.alpha);
        case OpKind::Relu: need(1); return relu(inputs[0]);
        case OpKind::Sigmoid: need(1); return sigmoid(inputs[0]);
        case OpKind::Conv2d:
            need(3);
            return conv2d(inputs[0], inputs[1], inputs[2], attrs.stride, attrs.pad);
        case OpKind::ConvTranspose2d:
            need(3);
            return conv_transpose2d(inputs[0], inputs[1], inputs[2], attrs.stride);
        case OpKind::MaxPool2x2: need(1); return maxpool2x2(inputs[0]);
        case OpKind::BatchNorm:
            need(3);
            return batch_norm(inputs[0], inputs[1], inputs[2],
                              static_cast<RunningStatsT<S>*>(nullptr), attrs.training,
                              attrs.eps);
        case OpKind::InstanceNorm:
            need(3);
            return instance_norm(inputs[0], inputs[1], inputs[2], attrs.eps);
        case OpKind::ConcatChannels: return concat_channels(inputs);
        case OpKind::MeanAll: need(1); return mean_all(inputs[0]);
        case OpKind::SumAll: need(1); return sum_all(inputs[0]);
        case OpKind::BceWithLogitsMean:
            need(1);
            return bce_with_logits_mean(inputs[0], attrs.target, attrs.clamp);
        case OpKind::L1Mean: need(2); return l1_mean(inputs[0], inputs[1]);
    }
    throw ValueError("forward_op: unknown op kind");
}

} // namespace pat::ad
