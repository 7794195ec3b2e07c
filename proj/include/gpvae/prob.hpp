#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gpvae/rng.hpp"

namespace gpvae {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Floor applied to any variance entering a logarithm or square root.
inline constexpr double kVarFloor = 1e-8;

/// Diagonal Gaussian N(mean, Diag(var)). var must be strictly positive.
struct DiagGaussian {
  Vec mean;
  Vec var;

  DiagGaussian(Vec m, Vec v);

  Eigen::Index dim() const { return mean.size(); }

  double log_density(const Vec& z) const;
};

/// Lower-triangular Cholesky factor with strictly positive diagonal;
/// represents the SPD matrix L * L^T.
class CholeskyPSD {
 public:
  explicit CholeskyPSD(Mat lower);

  const Mat& lower() const { return lower_; }
  Eigen::Index dim() const { return lower_.rows(); }

  /// Reconstructs L * L^T.
  Mat matrix() const { return lower_ * lower_.transpose(); }

 private:
  Mat lower_;
};

/// x^T (L L^T) x = ||L^T x||^2.
double quad_form(const CholeskyPSD& c, const Vec& x);

/// KL( N(q) || N(p) ) for diagonal Gaussians, in nats.
double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p);

/// Second-order moment matching of a finite diagonal-Gaussian mixture.
/// weights must be nonnegative and sum to 1 within 1e-9.
DiagGaussian moment_match(const Vec& weights, const std::vector<Vec>& means,
                          const std::vector<Vec>& vars);

/// n reparametrized samples z = mean + sqrt(max(var, kVarFloor)) .* eps,
/// one row per sample.
Mat reparam_sample(const DiagGaussian& g, RngStream& rng, int n);

/// log sum_i exp(v_i), stable. Returns -inf for empty / all -inf input.
double log_sum_exp(const Vec& v);

}  // namespace gpvae
