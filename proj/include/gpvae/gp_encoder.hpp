#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gpvae/nn.hpp"
#include "gpvae/prob.hpp"
#include "gpvae/rng.hpp"

namespace gpvae {

/// Deep-kernel features of one input: phi_m = psi_m(x), phi_s = psi_s(x).
struct FeaturePair {
  Vec phi_m;
  Vec phi_s;
};

/// The encoder-side networks: GP mean functions b, c (input -> d) and the
/// kernel feature maps psi_m, psi_s (input -> p).
struct EncoderNets {
  Mlp b;
  Mlp c;
  Mlp psi_m;
  Mlp psi_s;

  FeaturePair features(const Vec& x) const {
    return {psi_m.forward(x), psi_s.forward(x)};
  }
};

/// Per-latent-dimension Gaussian variational posteriors over the deep-kernel
/// weight rows: q(w_j) = N(mu_j, L_sig_j L_sig_j^T), q(u_j) = N(eta_j,
/// L_gam_j L_gam_j^T). Factors are stored as full p x p lower-triangular
/// blocks inside one flat parameter vector; diagonals are unconstrained
/// during optimization (L L^T is PSD for any lower-triangular L).
class GPVarParams {
 public:
  GPVarParams(int d, int p);

  int latent_dim() const { return d_; }
  int feature_dim() const { return p_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  Eigen::Index n_params() const { return params_.size(); }

  Eigen::Map<Vec> mu(int j) { return {block(j), p_}; }
  Eigen::Map<const Vec> mu(int j) const { return {block(j), p_}; }
  Eigen::Map<Mat> l_sig(int j) { return {block(j) + p_, p_, p_}; }
  Eigen::Map<const Mat> l_sig(int j) const { return {block(j) + p_, p_, p_}; }
  Eigen::Map<Vec> eta(int j) { return {block(j) + p_ + p_ * p_, p_}; }
  Eigen::Map<const Vec> eta(int j) const { return {block(j) + p_ + p_ * p_, p_}; }
  Eigen::Map<Mat> l_gam(int j) { return {block(j) + 2 * p_ + p_ * p_, p_, p_}; }
  Eigen::Map<const Mat> l_gam(int j) const {
    return {block(j) + 2 * p_ + p_ * p_, p_, p_};
  }

  /// mu = eta = 0, both Cholesky factors = scale * I (scale 0 gives the
  /// exact zero-noise model, i.e. the standard VAE encoder).
  void init_scaled_identity(double scale);

  /// Offsets of the four sub-blocks of latent dimension j within the flat
  /// vector, in order mu, L_sig, eta, L_gam.
  Eigen::Index offset(int j) const { return static_cast<Eigen::Index>(j) * stride(); }
  Eigen::Index stride() const { return 2 * p_ + 2 * static_cast<Eigen::Index>(p_) * p_; }

 private:
  double* block(int j) { return params_.data() + offset(j); }
  const double* block(int j) const { return params_.data() + offset(j); }

  int d_;
  int p_;
  Vec params_;
};

/// Moment-matched marginal encoder output plus the posterior-noise variance
/// gauge, split into its f-process and h-process parts.
struct EncoderStats {
  Vec m;
  Vec v;
  double unc_mean = 0.0;  // phi_m^T (sum_j Sigma_j) phi_m
  double unc_std = 0.0;   // phi_s^T (sum_j Gamma_j) phi_s

  double uncertainty() const { return unc_mean + unc_std; }

  DiagGaussian gaussian() const { return {m, v.cwiseMax(kVarFloor)}; }
};

/// q(z|x) = N(m(x), Diag(v(x))) from second-order moment matching of the
/// GP-posterior mixture: m_j = b_j + mu_j . phi_m,
/// v_j = (c_j + eta_j . phi_s)^2 + ||L_gam_j^T phi_s||^2 + ||L_sig_j^T phi_m||^2.
EncoderStats marginal_encoder(const Vec& b_out, const Vec& c_out,
                              const FeaturePair& feat, const GPVarParams& lam);
EncoderStats marginal_encoder(const Vec& x, const EncoderNets& nets,
                              const GPVarParams& lam);

/// q(z|x,W,U) = N(b + W phi_m, Diag(c + U phi_s)^2), rows of W/U indexed by
/// latent dimension.
DiagGaussian conditional_encoder(const Vec& x, const EncoderNets& nets,
                                 const Mat& w, const Mat& u);

/// E_{q(W,U)}[ KL(q(z|x,W,U) || N(0,I)) ] with the expected squared-log term
/// estimated by an S-sample reparametrized MC average in the 1-D projection
/// u_j^T phi_s ~ N(eta_j . phi_s, ||L_gam_j^T phi_s||^2).
double expected_kl_to_prior(const Vec& x, const EncoderNets& nets,
                            const GPVarParams& lam, RngStream& rng, int n_mc);

/// KL( q(W,U) || N(0,I) ) = sum_j KL(N(mu_j,Sigma_j)||N(0,I)) +
/// KL(N(eta_j,Gamma_j)||N(0,I)), log-determinants from the factor diagonals.
double weight_kl(const GPVarParams& lam);

/// Linear deep kernel k(x,x') = psi(x) . psi(x').
double deep_kernel_cov(const Mlp& psi, const Vec& x, const Vec& xp);

/// Batched marginal-encoder state kept for the training backward pass.
/// Rows index batch instances, columns latent dimensions.
struct MarginalBatch {
  Mat m;       // B x d
  Mat tbar;    // c + eta_j . phi_s
  Mat v_raw;   // before the variance floor
  Mat v;       // floored
  Mat s;       // ||L_gam_j^T phi_s||
  std::vector<Mat> am;  // per j: B x p rows = L_sig_j^T phi_m
  std::vector<Mat> as;  // per j: B x p rows = L_gam_j^T phi_s
};

MarginalBatch marginal_forward_batch(const Mat& b_out, const Mat& c_out,
                                     const Mat& phi_m, const Mat& phi_s,
                                     const GPVarParams& lam);

/// Reverse pass of marginal_forward_batch. d_m/d_v/d_tbar/d_s are gradients
/// w.r.t. the corresponding fields (d_v w.r.t. the floored v). Accumulates
/// into d_b/d_c/d_phi_m/d_phi_s (preallocated, zeroed by caller) and
/// d_lam (flat, length lam.n_params()).
void marginal_backward_batch(const MarginalBatch& fwd, const Mat& phi_m,
                             const Mat& phi_s, const GPVarParams& lam,
                             const Mat& d_m, const Mat& d_v, const Mat& d_tbar,
                             const Mat& d_s, Mat& d_b, Mat& d_c, Mat& d_phi_m,
                             Mat& d_phi_s, Vec& d_lam);

/// Gradient of weight_kl w.r.t. the flat Lambda vector, scaled by `coeff`.
void weight_kl_grad(const GPVarParams& lam, double coeff, Vec& d_lam);

}  // namespace gpvae
