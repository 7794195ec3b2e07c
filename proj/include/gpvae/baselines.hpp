#pragma once

#include <functional>
#include <vector>

#include "gpvae/generative.hpp"
#include "gpvae/gp_encoder.hpp"
#include "gpvae/prob.hpp"
#include "gpvae/rng.hpp"

namespace gpvae {

/// Per-instance variational parameters lambda = (mean, log std).
struct InstanceVarParams {
  Vec mean;
  Vec log_std;

  DiagGaussian gaussian() const {
    const Vec sd = log_std.array().exp();
    return {mean, sd.cwiseProduct(sd).cwiseMax(kVarFloor)};
  }
};

/// The point-estimate amortized encoder N(b(x), Diag(c(x))^2).
DiagGaussian vae_encoder(const Vec& x, const EncoderNets& nets);

InstanceVarParams instance_params_from(const DiagGaussian& q);

struct SviOptions {
  int steps = 0;
  double step_size = 1e-3;
  double decay_t0 = 0.0;  // 0: constant step; else step_size / (1 + t/decay_t0)
};

/// Gradient ascent on the per-instance ELBO w.r.t. lambda, reparametrized,
/// one MC sample per step (noise keyed by step index, so step-count
/// comparisons share random numbers). Returns the last finite iterate.
InstanceVarParams svi_optimize(const Vec& x, const Decoder& dec,
                               InstanceVarParams init, const SviOptions& opt,
                               RngStream rng);

/// Semi-amortized refinement: k SVI steps from the amortized encoder output.
InstanceVarParams sa_refine(const Vec& x, const EncoderNets& nets,
                            const Decoder& dec, int k, RngStream rng,
                            double step_size = 1e-3);

/// Monte-Carlo instance ELBO: mean over the rows of eps of
/// log p(x|z) + log p(z) with z = mean + exp(log_std) .* eps, plus the
/// closed-form entropy of q_lambda.
double instance_elbo(const Vec& x, const Decoder& dec,
                     const InstanceVarParams& lam, const Mat& eps);

struct GapRow {
  int instance = 0;
  double elbo_amortized = 0.0;
  double elbo_svi = 0.0;
  double gap = 0.0;  // elbo_svi - elbo_amortized
};

struct GapOptions {
  int svi_steps = 500;
  double svi_step_size = 1e-2;
  double svi_decay_t0 = 100.0;
  int eval_samples = 128;
  int max_instances = 0;  // 0: whole testset
};

/// Amortization gap per instance: ELBO of a long SVI run (initialized at the
/// amortized solution) minus the amortized ELBO, both evaluated with common
/// random numbers.
std::vector<GapRow> amortization_gap(
    const Mat& testset,
    const std::function<InstanceVarParams(const Vec&)>& encoder,
    const Decoder& dec, const GapOptions& opt, RngStream rng);

}  // namespace gpvae
