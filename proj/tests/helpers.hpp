#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "gpvae/generative.hpp"
#include "gpvae/gp_encoder.hpp"
#include "gpvae/nn.hpp"
#include "gpvae/prob.hpp"
#include "gpvae/rng.hpp"

namespace testutil {

using gpvae::Mat;
using gpvae::Vec;

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
};

/// Sample mean and its standard error.
inline MeanSE mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  double s2 = 0.0;
  for (double x : v) s2 += (x - m) * (x - m);
  s2 /= (n - 1.0);
  return {m, std::sqrt(s2 / n)};
}

/// Streaming accumulator for i.i.d. per-sample statistics.
struct Accum {
  double sum = 0.0;
  double sumsq = 0.0;
  std::int64_t n = 0;

  void add(double x) {
    sum += x;
    sumsq += x * x;
    ++n;
  }
  double mean() const { return sum / n; }
  double se() const {
    const double m = mean();
    return std::sqrt((sumsq / n - m * m) / (n - 1.0));
  }
};

inline Mat random_lower(int p, gpvae::RngStream& rng, double off_scale = 0.3) {
  Mat l = Mat::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    l(i, i) = 0.4 + 0.8 * rng.uniform();
    for (int j = 0; j < i; ++j) l(i, j) = off_scale * rng.normal();
  }
  return l;
}

inline gpvae::GPVarParams random_lambda(int d, int p, gpvae::RngStream& rng) {
  gpvae::GPVarParams lam(d, p);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < p; ++i) {
      lam.mu(j)[i] = 0.5 * rng.normal();
      lam.eta(j)[i] = 0.3 * rng.normal();
    }
    lam.l_sig(j) = random_lower(p, rng);
    lam.l_gam(j) = random_lower(p, rng);
  }
  return lam;
}

inline gpvae::Mlp random_mlp(gpvae::MlpSpec spec, gpvae::RngStream rng) {
  gpvae::Mlp net(std::move(spec));
  net.init_params(rng);
  return net;
}

/// Encoder nets (b, c, psi_m, psi_s) with random weights for a given
/// (input_dim, d, p); hidden width h.
inline gpvae::EncoderNets random_nets(int input_dim, int d, int p, int h,
                                      gpvae::RngStream rng) {
  using gpvae::Activation;
  gpvae::MlpSpec trunk{{input_dim, h, d}, Activation::kLeakyRelu,
                       Activation::kIdentity};
  gpvae::MlpSpec feat{{input_dim, h, p}, Activation::kLeakyRelu,
                      Activation::kLeakyRelu};
  return {random_mlp(trunk, rng.split(0)), random_mlp(trunk, rng.split(1)),
          random_mlp(feat, rng.split(2)), random_mlp(feat, rng.split(3))};
}

/// 1-D conjugate linear-Gaussian model: p(z) = N(0,1),
/// p(x|z) = N(a z + b0, sigma2).
struct Conjugate1D {
  double a = 1.0;
  double b0 = 0.0;
  double sigma2 = 0.5;

  gpvae::Decoder decoder() const {
    gpvae::Mlp g(gpvae::MlpSpec{{1, 1}, gpvae::Activation::kIdentity,
                                gpvae::Activation::kIdentity});
    g.weight(0)(0, 0) = a;
    g.bias(0)[0] = b0;
    return {std::move(g), sigma2};
  }

  double log_marginal(double x) const {
    const double var = a * a + sigma2;
    const double r = x - b0;
    return -0.5 * std::log(2.0 * std::numbers::pi * var) -
           r * r / (2.0 * var);
  }

  double post_mean(double x) const { return a * (x - b0) / (a * a + sigma2); }
  double post_var() const { return sigma2 / (a * a + sigma2); }
};

/// Unique scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("gpvae_test_" + tag + "_" + std::to_string(::getpid()) +
                    "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

/// Central finite differences of f at x, step h.
template <typename F>
double fd_derivative(F&& f, double& x, double h = 1e-5) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-10});
  return std::abs(got - want) / denom;
}

}  // namespace testutil
