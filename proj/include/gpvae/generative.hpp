#pragma once

#include <Eigen/Dense>

#include "gpvae/gp_encoder.hpp"
#include "gpvae/nn.hpp"
#include "gpvae/prob.hpp"
#include "gpvae/rng.hpp"

namespace gpvae {

/// Homoscedastic Gaussian decoder p(x|z) = N(x; g(z), sigma_x2 * I).
/// sigma_x2 is a fixed constant, not trained.
struct Decoder {
  Mlp g;
  double sigma_x2 = 0.1;

  Decoder(Mlp net, double noise_var);
};

/// log N(x; g(z), sigma_x2 I) in nats.
double log_lik(const Vec& x, const Vec& z, const Decoder& dec);

/// log N(z; 0, I).
double log_prior(const Vec& z);

/// Surrogate likelihood L(W,U;x): n-sample reparametrized estimate of
/// E_{q(z|x,W,U)}[ log p(x,z) - log q(z|x,W,U) ].
double surrogate_elbo_L(const Vec& x, const EncoderNets& nets, const Mat& w,
                        const Mat& u, const Decoder& dec, RngStream& rng,
                        int n_samples);

}  // namespace gpvae
