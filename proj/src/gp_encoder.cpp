#include "gpvae/gp_encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gpvae {

namespace {

void check_dims(const Vec& b_out, const Vec& c_out, const FeaturePair& feat,
                const GPVarParams& lam) {
  if (b_out.size() != lam.latent_dim() || c_out.size() != lam.latent_dim()) {
    throw std::invalid_argument("gp-encoder: b/c output length != latent dim " +
                                std::to_string(lam.latent_dim()));
  }
  if (feat.phi_m.size() != lam.feature_dim() ||
      feat.phi_s.size() != lam.feature_dim()) {
    throw std::invalid_argument("gp-encoder: feature length != feature dim " +
                                std::to_string(lam.feature_dim()));
  }
}

}  // namespace

GPVarParams::GPVarParams(int d, int p) : d_(d), p_(p) {
  if (d < 1 || p < 1) {
    throw std::invalid_argument("GPVarParams: d and p must be positive");
  }
  params_ = Vec::Zero(static_cast<Eigen::Index>(d) * stride());
}

void GPVarParams::init_scaled_identity(double scale) {
  params_.setZero();
  for (int j = 0; j < d_; ++j) {
    l_sig(j).diagonal().setConstant(scale);
    l_gam(j).diagonal().setConstant(scale);
  }
}

EncoderStats marginal_encoder(const Vec& b_out, const Vec& c_out,
                              const FeaturePair& feat, const GPVarParams& lam) {
  check_dims(b_out, c_out, feat, lam);
  const int d = lam.latent_dim();
  EncoderStats out;
  out.m.resize(d);
  out.v.resize(d);
  for (int j = 0; j < d; ++j) {
    const Vec am = (feat.phi_m.transpose() *
                    lam.l_sig(j).triangularView<Eigen::Lower>())
                       .transpose();
    const Vec as = (feat.phi_s.transpose() *
                    lam.l_gam(j).triangularView<Eigen::Lower>())
                       .transpose();
    const double qm = am.squaredNorm();
    const double qs = as.squaredNorm();
    const double tbar = c_out[j] + lam.eta(j).dot(feat.phi_s);
    out.m[j] = b_out[j] + lam.mu(j).dot(feat.phi_m);
    out.v[j] = std::max(tbar * tbar + qs + qm, kVarFloor);
    out.unc_mean += qm;
    out.unc_std += qs;
  }
  return out;
}

EncoderStats marginal_encoder(const Vec& x, const EncoderNets& nets,
                              const GPVarParams& lam) {
  return marginal_encoder(nets.b.forward(x), nets.c.forward(x),
                          nets.features(x), lam);
}

DiagGaussian conditional_encoder(const Vec& x, const EncoderNets& nets,
                                 const Mat& w, const Mat& u) {
  const Vec b_out = nets.b.forward(x);
  const Vec c_out = nets.c.forward(x);
  const FeaturePair feat = nets.features(x);
  const Eigen::Index d = b_out.size();
  const Eigen::Index p = feat.phi_m.size();
  if (w.rows() != d || w.cols() != p || u.rows() != d || u.cols() != p) {
    throw std::invalid_argument("conditional_encoder: W/U must be d x p = " +
                                std::to_string(d) + " x " + std::to_string(p));
  }
  Vec mean = b_out + w * feat.phi_m;
  Vec sd = c_out + u * feat.phi_s;
  Vec var = sd.cwiseProduct(sd).cwiseMax(kVarFloor);
  return {std::move(mean), std::move(var)};
}

double expected_kl_to_prior(const Vec& x, const EncoderNets& nets,
                            const GPVarParams& lam, RngStream& rng, int n_mc) {
  if (n_mc < 1) {
    throw std::invalid_argument("expected_kl_to_prior: n_mc must be >= 1");
  }
  const Vec b_out = nets.b.forward(x);
  const Vec c_out = nets.c.forward(x);
  const FeaturePair feat = nets.features(x);
  check_dims(b_out, c_out, feat, lam);
  const int d = lam.latent_dim();

  double acc = 0.0;
  for (int j = 0; j < d; ++j) {
    const Vec am = (feat.phi_m.transpose() *
                    lam.l_sig(j).triangularView<Eigen::Lower>())
                       .transpose();
    const Vec as = (feat.phi_s.transpose() *
                    lam.l_gam(j).triangularView<Eigen::Lower>())
                       .transpose();
    const double tbar = c_out[j] + lam.eta(j).dot(feat.phi_s);
    const double sd = std::sqrt(as.squaredNorm());
    const double m = b_out[j] + lam.mu(j).dot(feat.phi_m);
    const double v =
        std::max(tbar * tbar + as.squaredNorm() + am.squaredNorm(), kVarFloor);
    double mc = 0.0;
    for (int i = 0; i < n_mc; ++i) {
      const double t = tbar + sd * rng.normal();
      mc += std::log(std::max(t * t, kVarFloor));
    }
    mc /= n_mc;
    acc += 0.5 * (v + m * m - 1.0 - mc);
  }
  return acc;
}

namespace {

double gauss_kl_to_std(const Eigen::Map<const Vec>& mean,
                       const Eigen::Map<const Mat>& lower, int p) {
  double tr = 0.0;
  for (int col = 0; col < p; ++col) {
    for (int row = col; row < p; ++row) {
      tr += lower(row, col) * lower(row, col);
    }
  }
  double logdet = 0.0;
  for (int i = 0; i < p; ++i) {
    logdet += std::log(std::max(lower(i, i) * lower(i, i), kVarFloor));
  }
  return 0.5 * (tr + mean.squaredNorm() - p - logdet);
}

}  // namespace

double weight_kl(const GPVarParams& lam) {
  const int p = lam.feature_dim();
  double acc = 0.0;
  for (int j = 0; j < lam.latent_dim(); ++j) {
    acc += gauss_kl_to_std(lam.mu(j), lam.l_sig(j), p);
    acc += gauss_kl_to_std(lam.eta(j), lam.l_gam(j), p);
  }
  return acc;
}

double deep_kernel_cov(const Mlp& psi, const Vec& x, const Vec& xp) {
  return psi.forward(x).dot(psi.forward(xp));
}

MarginalBatch marginal_forward_batch(const Mat& b_out, const Mat& c_out,
                                     const Mat& phi_m, const Mat& phi_s,
                                     const GPVarParams& lam) {
  const Eigen::Index n = b_out.rows();
  const int d = lam.latent_dim();
  MarginalBatch fwd;
  fwd.m.resize(n, d);
  fwd.tbar.resize(n, d);
  fwd.v_raw.resize(n, d);
  fwd.s.resize(n, d);
  fwd.am.resize(d);
  fwd.as.resize(d);
  for (int j = 0; j < d; ++j) {
    fwd.am[j].noalias() = phi_m * lam.l_sig(j).triangularView<Eigen::Lower>();
    fwd.as[j].noalias() = phi_s * lam.l_gam(j).triangularView<Eigen::Lower>();
    fwd.m.col(j) = b_out.col(j) + phi_m * lam.mu(j);
    fwd.tbar.col(j) = c_out.col(j) + phi_s * lam.eta(j);
    fwd.s.col(j) = fwd.as[j].rowwise().norm();
    fwd.v_raw.col(j) = fwd.tbar.col(j).cwiseProduct(fwd.tbar.col(j)) +
                       fwd.as[j].rowwise().squaredNorm() +
                       fwd.am[j].rowwise().squaredNorm();
  }
  fwd.v = fwd.v_raw.cwiseMax(kVarFloor);
  return fwd;
}

void marginal_backward_batch(const MarginalBatch& fwd, const Mat& phi_m,
                             const Mat& phi_s, const GPVarParams& lam,
                             const Mat& d_m, const Mat& d_v, const Mat& d_tbar,
                             const Mat& d_s, Mat& d_b, Mat& d_c, Mat& d_phi_m,
                             Mat& d_phi_s, Vec& d_lam) {
  const int d = lam.latent_dim();
  const int p = lam.feature_dim();
  if (d_lam.size() != lam.n_params()) {
    throw std::invalid_argument("marginal_backward_batch: d_lam size");
  }
  // Gate the floor: d v_raw = d_v where v_raw >= kVarFloor, else 0.
  const Mat gate =
      (fwd.v_raw.array() >= kVarFloor).cast<double>().matrix();
  const Mat dv = d_v.cwiseProduct(gate);

  Mat dtbar = d_tbar + 2.0 * dv.cwiseProduct(fwd.tbar);
  d_b += d_m;
  d_c += dtbar;
  for (int j = 0; j < d; ++j) {
    // d||as||, guarded at s = 0 (then as = 0 and the true derivative is 0).
    Vec s_scale(fwd.s.rows());
    for (Eigen::Index i = 0; i < s_scale.size(); ++i) {
      const double s = fwd.s(i, j);
      s_scale[i] = s > 0.0 ? d_s(i, j) / s : 0.0;
    }
    Mat d_am = fwd.am[j].array().colwise() * (2.0 * dv.col(j).array());
    Mat d_as = fwd.as[j].array().colwise() *
               (2.0 * dv.col(j).array() + s_scale.array());

    Eigen::Map<Mat> dmu(d_lam.data() + lam.offset(j), p, 1);
    Eigen::Map<Mat> dlsig(d_lam.data() + lam.offset(j) + p, p, p);
    Eigen::Map<Mat> deta(d_lam.data() + lam.offset(j) + p + p * p, p, 1);
    Eigen::Map<Mat> dlgam(d_lam.data() + lam.offset(j) + 2 * p + p * p, p, p);

    dmu.col(0).noalias() += phi_m.transpose() * d_m.col(j);
    deta.col(0).noalias() += phi_s.transpose() * dtbar.col(j);
    Mat dl = phi_m.transpose() * d_am;
    dlsig += dl.triangularView<Eigen::Lower>();
    dl.noalias() = phi_s.transpose() * d_as;
    dlgam += dl.triangularView<Eigen::Lower>();

    d_phi_m.noalias() += d_m.col(j) * lam.mu(j).transpose();
    d_phi_m.noalias() +=
        d_am * lam.l_sig(j).transpose().triangularView<Eigen::Upper>();
    d_phi_s.noalias() += dtbar.col(j) * lam.eta(j).transpose();
    d_phi_s.noalias() +=
        d_as * lam.l_gam(j).transpose().triangularView<Eigen::Upper>();
  }
}

void weight_kl_grad(const GPVarParams& lam, double coeff, Vec& d_lam) {
  const int p = lam.feature_dim();
  if (d_lam.size() != lam.n_params()) {
    throw std::invalid_argument("weight_kl_grad: d_lam size");
  }
  for (int j = 0; j < lam.latent_dim(); ++j) {
    Eigen::Map<Vec> dmu(d_lam.data() + lam.offset(j), p);
    Eigen::Map<Mat> dlsig(d_lam.data() + lam.offset(j) + p, p, p);
    Eigen::Map<Vec> deta(d_lam.data() + lam.offset(j) + p + p * p, p);
    Eigen::Map<Mat> dlgam(d_lam.data() + lam.offset(j) + 2 * p + p * p, p, p);
    dmu += coeff * lam.mu(j);
    deta += coeff * lam.eta(j);
    for (int kind = 0; kind < 2; ++kind) {
      auto l = kind == 0 ? lam.l_sig(j) : lam.l_gam(j);
      auto dl = kind == 0 ? dlsig : dlgam;
      for (int col = 0; col < p; ++col) {
        for (int row = col; row < p; ++row) {
          double g = l(row, col);
          if (row == col) {
            const double diag = l(row, col);
            if (diag * diag >= kVarFloor) g -= 1.0 / diag;
          }
          dl(row, col) += coeff * g;
        }
      }
    }
  }
}

}  // namespace gpvae
