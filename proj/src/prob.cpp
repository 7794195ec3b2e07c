#include "gpvae/prob.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gpvae {

DiagGaussian::DiagGaussian(Vec m, Vec v) : mean(std::move(m)), var(std::move(v)) {
  if (mean.size() != var.size()) {
    throw std::invalid_argument("DiagGaussian: mean and var lengths differ (" +
                                std::to_string(mean.size()) + " vs " +
                                std::to_string(var.size()) + ")");
  }
  for (Eigen::Index j = 0; j < var.size(); ++j) {
    if (!(var[j] > 0.0)) {
      throw std::domain_error("DiagGaussian: var[" + std::to_string(j) +
                              "] = " + std::to_string(var[j]) +
                              " is not strictly positive");
    }
  }
}

double DiagGaussian::log_density(const Vec& z) const {
  if (z.size() != mean.size()) {
    throw std::invalid_argument("DiagGaussian::log_density: dimension mismatch");
  }
  double acc = 0.0;
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    const double v = std::max(var[j], kVarFloor);
    const double r = z[j] - mean[j];
    acc += -0.5 * std::log(2.0 * std::numbers::pi * v) - r * r / (2.0 * v);
  }
  return acc;
}

CholeskyPSD::CholeskyPSD(Mat lower) : lower_(std::move(lower)) {
  if (lower_.rows() != lower_.cols()) {
    throw std::invalid_argument("CholeskyPSD: factor must be square");
  }
  for (Eigen::Index i = 0; i < lower_.rows(); ++i) {
    if (!(lower_(i, i) > 0.0)) {
      throw std::domain_error("CholeskyPSD: diagonal entry " + std::to_string(i) +
                              " = " + std::to_string(lower_(i, i)) +
                              " is not strictly positive");
    }
    for (Eigen::Index j = i + 1; j < lower_.cols(); ++j) {
      if (lower_(i, j) != 0.0) {
        throw std::invalid_argument("CholeskyPSD: factor is not lower-triangular");
      }
    }
  }
}

double quad_form(const CholeskyPSD& c, const Vec& x) {
  if (x.size() != c.dim()) {
    throw std::invalid_argument("quad_form: vector length " +
                                std::to_string(x.size()) + " != dim " +
                                std::to_string(c.dim()));
  }
  return (c.lower().transpose() * x).squaredNorm();
}

double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim()) {
    throw std::invalid_argument("kl_diag_gaussians: dimension mismatch (" +
                                std::to_string(q.dim()) + " vs " +
                                std::to_string(p.dim()) + ")");
  }
  double acc = 0.0;
  for (Eigen::Index j = 0; j < q.dim(); ++j) {
    const double vq = q.var[j];
    const double vp = p.var[j];
    const double dm = q.mean[j] - p.mean[j];
    acc += 0.5 * (vq / vp + dm * dm / vp - 1.0 + std::log(vp / vq));
  }
  return acc;
}

DiagGaussian moment_match(const Vec& weights, const std::vector<Vec>& means,
                          const std::vector<Vec>& vars) {
  const std::size_t k = means.size();
  if (k == 0 || vars.size() != k ||
      weights.size() != static_cast<Eigen::Index>(k)) {
    throw std::invalid_argument("moment_match: component count mismatch");
  }
  const Eigen::Index d = means[0].size();
  double wsum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (means[i].size() != d || vars[i].size() != d) {
      throw std::invalid_argument("moment_match: component " + std::to_string(i) +
                                  " has mismatched dimension");
    }
    if (weights[static_cast<Eigen::Index>(i)] < 0.0) {
      throw std::invalid_argument("moment_match: negative weight at component " +
                                  std::to_string(i));
    }
    wsum += weights[static_cast<Eigen::Index>(i)];
  }
  if (std::abs(wsum - 1.0) > 1e-9) {
    throw std::invalid_argument("moment_match: weights sum to " +
                                std::to_string(wsum) + ", expected 1");
  }

  Vec m = Vec::Zero(d);
  for (std::size_t i = 0; i < k; ++i) {
    m += weights[static_cast<Eigen::Index>(i)] * means[i];
  }
  // sum_i a_i (m_i^2 + v_i) - m^2 written without the cancellation:
  Vec v = Vec::Zero(d);
  for (std::size_t i = 0; i < k; ++i) {
    const double a = weights[static_cast<Eigen::Index>(i)];
    const Vec dm = means[i] - m;
    v += a * (vars[i] + dm.cwiseProduct(dm));
  }
  return DiagGaussian(std::move(m), std::move(v));
}

Mat reparam_sample(const DiagGaussian& g, RngStream& rng, int n) {
  if (n < 1) {
    throw std::invalid_argument("reparam_sample: n must be >= 1");
  }
  const Eigen::Index d = g.dim();
  const Vec sd = g.var.cwiseMax(kVarFloor).cwiseSqrt();
  Mat z(n, d);
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      z(i, j) = g.mean[j] + sd[j] * rng.normal();
    }
  }
  return z;
}

double log_sum_exp(const Vec& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

}  // namespace gpvae
