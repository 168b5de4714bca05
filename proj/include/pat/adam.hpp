#pragma once

#include <cstdint>
#include <vector>

#include "pat/tensor.hpp"

namespace pat::train {

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment buffers aligned index-for-index with a parameter list.
template <typename S>
struct AdamStateT {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    std::int64_t t = 0;

    static AdamStateT for_params(const std::vector<ad::TensorT<S>>& params) {
        AdamStateT st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto& p : params) {
            st.m.emplace_back(p.numel(), S(0));
            st.v.emplace_back(p.numel(), S(0));
        }
        return st;
    }
};

// In-place bias-corrected Adam update. Parameters without an allocated
// gradient are treated as zero-gradient (moments still decay).
template <typename S>
void adam_step(const std::vector<ad::TensorT<S>>& params, AdamStateT<S>& state,
               const AdamConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ValueError(msg("adam_step: state tracks ", state.m.size(),
                             " parameters, got ", params.size()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
    const S b1 = S(cfg.beta1), b2 = S(cfg.beta2);
    const S one_m_b1 = S(1.0 - cfg.beta1), one_m_b2 = S(1.0 - cfg.beta2);

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& var = *params[pi].var();
        if (state.m[pi].size() != var.value.size()) {
            throw ValueError(msg("adam_step: moment size ", state.m[pi].size(),
                                 " does not match parameter ", pi, " size ",
                                 var.value.size()));
        }
        S* m = state.m[pi].data();
        S* v = state.v[pi].data();
        S* p = var.value.data();
        const S* g = var.has_grad() ? var.grad.data() : nullptr;
        const std::size_t n = var.value.size();
        for (std::size_t i = 0; i < n; ++i) {
            const S gi = g ? g[i] : S(0);
            m[i] = b1 * m[i] + one_m_b1 * gi;
            v[i] = b2 * v[i] + one_m_b2 * gi * gi;
            const double mhat = double(m[i]) / bc1;
            const double vhat = double(v[i]) / bc2;
            p[i] = S(double(p[i]) - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

using AdamState = AdamStateT<float>;

} // namespace pat::train
