#include "gpvae/generative.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gpvae {

Decoder::Decoder(Mlp net, double noise_var) : g(std::move(net)), sigma_x2(noise_var) {
  if (!(sigma_x2 > 0.0)) {
    throw std::domain_error("Decoder: sigma_x2 must be positive");
  }
}

double log_lik(const Vec& x, const Vec& z, const Decoder& dec) {
  const Vec gx = dec.g.forward(z);
  if (gx.size() != x.size()) {
    throw std::invalid_argument("log_lik: data dim " + std::to_string(x.size()) +
                                " != decoder output " + std::to_string(gx.size()));
  }
  const double n = static_cast<double>(x.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi * dec.sigma_x2) -
         (x - gx).squaredNorm() / (2.0 * dec.sigma_x2);
}

double log_prior(const Vec& z) {
  const double n = static_cast<double>(z.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * z.squaredNorm();
}

double surrogate_elbo_L(const Vec& x, const EncoderNets& nets, const Mat& w,
                        const Mat& u, const Decoder& dec, RngStream& rng,
                        int n_samples) {
  if (n_samples < 1) {
    throw std::invalid_argument("surrogate_elbo_L: n_samples must be >= 1");
  }
  const DiagGaussian q = conditional_encoder(x, nets, w, u);
  const Mat z = reparam_sample(q, rng, n_samples);
  double acc = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const Vec zi = z.row(i).transpose();
    const double term = log_lik(x, zi, dec) + log_prior(zi) - q.log_density(zi);
    if (!std::isfinite(term)) {
      throw std::runtime_error(
          "surrogate_elbo_L: non-finite term at sample " + std::to_string(i));
    }
    acc += term;
  }
  return acc / n_samples;
}

}  // namespace gpvae
