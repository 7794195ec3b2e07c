#include "gpvae/baselines.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gpvae {

DiagGaussian vae_encoder(const Vec& x, const EncoderNets& nets) {
  const Vec b_out = nets.b.forward(x);
  const Vec c_out = nets.c.forward(x);
  return {b_out, c_out.cwiseProduct(c_out).cwiseMax(kVarFloor)};
}

InstanceVarParams instance_params_from(const DiagGaussian& q) {
  return {q.mean, 0.5 * q.var.cwiseMax(kVarFloor).array().log()};
}

InstanceVarParams svi_optimize(const Vec& x, const Decoder& dec,
                               InstanceVarParams init, const SviOptions& opt,
                               RngStream rng) {
  if (opt.steps < 0) throw std::invalid_argument("svi_optimize: steps < 0");
  const Eigen::Index d = init.mean.size();
  if (init.log_std.size() != d) {
    throw std::invalid_argument("svi_optimize: lambda dimensions differ");
  }
  InstanceVarParams lam = std::move(init);
  Mlp::Cache cache;
  for (int t = 0; t < opt.steps; ++t) {
    RngStream step_rng = rng.split(static_cast<std::uint64_t>(t));
    Vec eps(d);
    for (Eigen::Index j = 0; j < d; ++j) eps[j] = step_rng.normal();
    const Vec sd = lam.log_std.array().exp();
    const Vec z = lam.mean + sd.cwiseProduct(eps);

    const Mat gx = dec.g.forward_batch(z.transpose(), cache);
    const Mat d_gx = (x.transpose() - gx) / dec.sigma_x2;
    const Vec dz_lik = dec.g.backward_input(cache, d_gx).row(0).transpose();
    const Vec dz = dz_lik - z;  // + grad of log prior

    // Entropy-form estimator: d/d log_std = dz .* sd .* eps + 1.
    const Vec g_mean = dz;
    const Vec g_logstd = dz.cwiseProduct(sd).cwiseProduct(eps).array() + 1.0;

    const double step =
        opt.decay_t0 > 0.0 ? opt.step_size / (1.0 + t / opt.decay_t0)
                           : opt.step_size;
    const Vec new_mean = lam.mean + step * g_mean;
    const Vec new_logstd = lam.log_std + step * g_logstd;
    if (!new_mean.allFinite() || !new_logstd.allFinite()) {
      return lam;  // abort, keep the last finite iterate
    }
    lam.mean = new_mean;
    lam.log_std = new_logstd;
  }
  return lam;
}

InstanceVarParams sa_refine(const Vec& x, const EncoderNets& nets,
                            const Decoder& dec, int k, RngStream rng,
                            double step_size) {
  InstanceVarParams lam = instance_params_from(vae_encoder(x, nets));
  SviOptions opt;
  opt.steps = k;
  opt.step_size = step_size;
  return svi_optimize(x, dec, std::move(lam), opt, rng);
}

double instance_elbo(const Vec& x, const Decoder& dec,
                     const InstanceVarParams& lam, const Mat& eps) {
  const Eigen::Index d = lam.mean.size();
  if (eps.cols() != d || eps.rows() < 1) {
    throw std::invalid_argument("instance_elbo: eps must be n x d");
  }
  const Vec sd = lam.log_std.array().exp();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < eps.rows(); ++i) {
    const Vec z = lam.mean + sd.cwiseProduct(eps.row(i).transpose());
    acc += log_lik(x, z, dec) + log_prior(z);
  }
  acc /= static_cast<double>(eps.rows());
  const double entropy =
      lam.log_std.sum() +
      0.5 * d * std::log(2.0 * std::numbers::pi * std::numbers::e);
  return acc + entropy;
}

std::vector<GapRow> amortization_gap(
    const Mat& testset,
    const std::function<InstanceVarParams(const Vec&)>& encoder,
    const Decoder& dec, const GapOptions& opt, RngStream rng) {
  const Eigen::Index n =
      opt.max_instances > 0
          ? std::min<Eigen::Index>(opt.max_instances, testset.rows())
          : testset.rows();
  SviOptions svi;
  svi.steps = opt.svi_steps;
  svi.step_size = opt.svi_step_size;
  svi.decay_t0 = opt.svi_decay_t0;

  std::vector<GapRow> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec x = testset.row(i).transpose();
    RngStream inst_rng = rng.split(static_cast<std::uint64_t>(i));
    const InstanceVarParams lam_am = encoder(x);
    const InstanceVarParams lam_svi =
        svi_optimize(x, dec, lam_am, svi, inst_rng.split(0));

    RngStream eval_rng = inst_rng.split(1);
    Mat eps(opt.eval_samples, lam_am.mean.size());
    for (Eigen::Index r = 0; r < eps.rows(); ++r) {
      for (Eigen::Index j = 0; j < eps.cols(); ++j) {
        eps(r, j) = eval_rng.normal();
      }
    }
    const double e_am = instance_elbo(x, dec, lam_am, eps);
    const double e_svi = instance_elbo(x, dec, lam_svi, eps);
    rows.push_back({static_cast<int>(i), e_am, e_svi, e_svi - e_am});
  }
  return rows;
}

}  // namespace gpvae
