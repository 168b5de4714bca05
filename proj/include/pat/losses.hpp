#pragma once

#include "pat/ops.hpp"

namespace pat::train {

// -mean[log sigmoid(D_real)] - mean[log(1 - sigmoid(D_fake))], fused and
// stable; raw scores are clamped to +-30 so saturation cannot emit infs.
template <typename S>
ad::TensorT<S> discriminator_loss(const ad::TensorT<S>& d_real,
                                  const ad::TensorT<S>& d_fake) {
    if (!(d_real.shape() == d_fake.shape())) {
        throw ShapeError(msg("discriminator_loss: score shapes differ, ",
                             d_real.shape().str(), " vs ", d_fake.shape().str()));
    }
    auto real_term = ad::bce_with_logits_mean(d_real, 1.0);
    auto fake_term = ad::bce_with_logits_mean(d_fake, 0.0);
    return ad::add(real_term, fake_term);
}

template <typename S>
struct GeneratorLossT {
    ad::TensorT<S> total;
    ad::TensorT<S> adv; // non-saturating: -mean log sigmoid(D_fake)
    ad::TensorT<S> l1;  // mean |G(x) - y|
};

template <typename S>
GeneratorLossT<S> generator_loss(const ad::TensorT<S>& d_fake,
                                 const ad::TensorT<S>& g_out,
                                 const ad::TensorT<S>& target, double lambda_l1) {
    if (!(g_out.shape() == target.shape())) {
        throw ShapeError(msg("generator_loss: output/target shapes differ, ",
                             g_out.shape().str(), " vs ", target.shape().str()));
    }
    if (lambda_l1 < 0) {
        throw ValueError(msg("generator_loss: lambda must be >= 0, got ", lambda_l1));
    }
    GeneratorLossT<S> out;
    out.adv = ad::bce_with_logits_mean(d_fake, 1.0);
    out.l1 = ad::l1_mean(g_out, target);
    out.total = ad::add(out.adv, ad::scale(out.l1, lambda_l1));
    return out;
}

} // namespace pat::train
