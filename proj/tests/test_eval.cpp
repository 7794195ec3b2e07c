#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gpvae/data.hpp"
#include "gpvae/eval.hpp"
#include "helpers.hpp"

using namespace gpvae;
using testutil::Conjugate1D;
using testutil::mean_se;

namespace {

// 2-D latent conjugate model: p(x|z) = N(A z + b0, sigma2 I), closed-form
// posterior N(S A^T (x - b0) / sigma2, S), S = (I + A^T A / sigma2)^{-1}.
struct Conjugate2D {
  Mat a;  // D x 2
  Vec b0;
  double sigma2 = 0.25;

  Decoder decoder() const {
    Mlp g(MlpSpec{{2, static_cast<int>(a.rows())}, Activation::kIdentity,
                  Activation::kIdentity});
    g.weight(0) = a;
    g.bias(0) = b0;
    return {std::move(g), sigma2};
  }
  Eigen::Matrix2d post_cov() const {
    return (Eigen::Matrix2d::Identity() + a.transpose() * a / sigma2).inverse();
  }
  Vec post_mean(const Vec& x) const {
    return post_cov() * a.transpose() * (x - b0) / sigma2;
  }
};

Grid2D mixture_grid(const GridSpec& spec, double sep) {
  Grid2D grid{spec, Mat(spec.res, spec.res)};
  for (int i1 = 0; i1 < spec.res; ++i1) {
    for (int i2 = 0; i2 < spec.res; ++i2) {
      const double z1 = grid.z1(i1);
      const double z2 = grid.z2(i2);
      auto comp = [&](double m1) {
        const double d1 = z1 - m1;
        return -std::log(2.0 * std::numbers::pi) -
               0.5 * (d1 * d1 + z2 * z2);
      };
      Vec lw(2);
      lw << std::log(0.5) + comp(-sep), std::log(0.5) + comp(sep);
      grid.table(i1, i2) = log_sum_exp(lw);
    }
  }
  const Vec flat = Eigen::Map<const Vec>(grid.table.data(), grid.table.size());
  grid.table.array() -= log_sum_exp(flat) + std::log(grid.cell_area());
  return grid;
}

}  // namespace

TEST_SUITE("eval-harness") {

TEST_CASE("iwae with K = 1 is a single-sample elbo estimate") {
  const Conjugate1D model{1.0, 0.1, 0.5};
  const Decoder dec = model.decoder();
  const DiagGaussian q(Vec::Constant(1, 0.2), Vec::Constant(1, 0.8));
  const Vec x = Vec::Constant(1, 0.9);

  RngStream r1(5);
  const double got = iwae(x, q, dec, 1, r1);
  RngStream r2(5);
  const Mat z = reparam_sample(q, r2, 1);
  const Vec z0 = z.row(0).transpose();
  const double want = log_lik(x, z0, dec) + log_prior(z0) - q.log_density(z0);
  CHECK(got == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("iwae on the conjugate model reaches log p(x) within 0.01 nats") {
  const Conjugate1D model{1.0, 0.3, 0.5};
  const Decoder dec = model.decoder();
  const double x = 0.7;
  const double logpx = model.log_marginal(x);

  SUBCASE("exact-posterior proposal gives log p(x) exactly") {
    const DiagGaussian q(Vec::Constant(1, model.post_mean(x)),
                         Vec::Constant(1, model.post_var()));
    RngStream rng(21);
    CHECK(iwae(Vec::Constant(1, x), q, dec, 64, rng) ==
          doctest::Approx(logpx).epsilon(1e-10));
  }
  SUBCASE("perturbed proposal converges by K = 1e4") {
    const DiagGaussian q(Vec::Constant(1, model.post_mean(x) + 0.2),
                         Vec::Constant(1, model.post_var() * 1.7));
    RngStream rng(22);
    CHECK(std::abs(iwae(Vec::Constant(1, x), q, dec, 10000, rng) - logpx) <
          0.01);
  }
}

TEST_CASE("iwae is monotone in K and lower-bounds log p(x)") {
  const Conjugate1D model{0.8, 0.0, 0.4};
  const Decoder dec = model.decoder();
  RngStream data_rng(31);
  const int n = 200;
  std::vector<double> d10m1, d100m10;
  for (int i = 0; i < n; ++i) {
    const double x =
        model.b0 +
        std::sqrt(model.a * model.a + model.sigma2) * data_rng.normal();
    // deliberately misfit proposal
    const DiagGaussian q(Vec::Constant(1, model.post_mean(x) + 0.3),
                         Vec::Constant(1, model.post_var() * 2.0));
    const Vec xv = Vec::Constant(1, x);
    RngStream r1(100 + i), r10(200 + i), r100(300 + i);
    const double i1 = iwae(xv, q, dec, 1, r1);
    const double i10 = iwae(xv, q, dec, 10, r10);
    const double i100 = iwae(xv, q, dec, 100, r100);
    d10m1.push_back(i10 - i1);
    d100m10.push_back(i100 - i10);

    // lower bound property, generous individual slack via 3 SE below
    CHECK(i100 <= model.log_marginal(x) + 1.0);
  }
  const auto e1 = mean_se(d10m1);
  const auto e2 = mean_se(d100m10);
  CHECK(e1.mean >= -3.0 * e1.se);
  CHECK(e2.mean >= -3.0 * e2.se);
}

TEST_CASE("iwae input validation") {
  const Conjugate1D model{1.0, 0.0, 0.5};
  const Decoder dec = model.decoder();
  const DiagGaussian q(Vec::Zero(1), Vec::Ones(1));
  RngStream rng(1);
  CHECK_THROWS_AS(iwae(Vec::Zero(1), q, dec, 0, rng), std::invalid_argument);
  // overflowing residual drives every weight to -inf
  CHECK_THROWS_AS(iwae(Vec::Constant(1, 1e200), q, dec, 4, rng),
                  std::runtime_error);
}

TEST_CASE("posterior grid of a z-independent decoder is the prior") {
  Mlp g(MlpSpec{{2, 3}, Activation::kIdentity, Activation::kIdentity});
  g.bias(0) << 0.3, 0.5, 0.1;
  const Decoder dec(std::move(g), 0.5);
  Vec x(3);
  x << 0.3, 0.5, 0.1;
  const GridSpec spec;
  const Grid2D grid = true_posterior_grid(x, dec, spec);

  double total = 0.0;
  double worst = 0.0;
  for (int i1 = 0; i1 < spec.res; ++i1) {
    for (int i2 = 0; i2 < spec.res; ++i2) {
      total += std::exp(grid.table(i1, i2)) * grid.cell_area();
      Vec z(2);
      z << grid.z1(i1), grid.z2(i2);
      worst = std::max(worst, std::abs(grid.table(i1, i2) - log_prior(z)));
    }
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(worst < 1e-3);
}

TEST_CASE("posterior grid matches the conjugate 2-d posterior moments") {
  Conjugate2D model;
  model.a.resize(3, 2);
  model.a << 0.9, -0.3, 0.2, 0.7, -0.5, 0.4;
  model.b0 = Vec::Zero(3);
  const Decoder dec = model.decoder();
  Vec x(3);
  x << 0.6, -0.2, 0.3;

  const Grid2D grid = true_posterior_grid(x, dec, GridSpec{});
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (int i1 = 0; i1 < grid.spec.res; ++i1) {
    for (int i2 = 0; i2 < grid.spec.res; ++i2) {
      const double w = std::exp(grid.table(i1, i2)) * grid.cell_area();
      mean += w * Eigen::Vector2d(grid.z1(i1), grid.z2(i2));
    }
  }
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int i1 = 0; i1 < grid.spec.res; ++i1) {
    for (int i2 = 0; i2 < grid.spec.res; ++i2) {
      const double w = std::exp(grid.table(i1, i2)) * grid.cell_area();
      const Eigen::Vector2d dz = Eigen::Vector2d(grid.z1(i1), grid.z2(i2)) - mean;
      cov += w * dz * dz.transpose();
    }
  }
  const Vec want_mean = model.post_mean(x);
  const Eigen::Matrix2d want_cov = model.post_cov();
  CHECK((mean - want_mean).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((cov - want_cov).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("grid requires a 2-d latent") {
  Mlp g(MlpSpec{{3, 2}, Activation::kIdentity, Activation::kIdentity});
  const Decoder dec(std::move(g), 0.5);
  CHECK_THROWS_AS(true_posterior_grid(Vec::Zero(2), dec, GridSpec{}),
                  std::invalid_argument);
}

TEST_CASE("non-gaussianity of a gaussian grid is ~zero") {
  Mlp g(MlpSpec{{2, 2}, Activation::kIdentity, Activation::kIdentity});
  g.weight(0) << 0.8, 0.1, -0.2, 0.5;
  const Decoder dec(std::move(g), 0.3);
  Vec x(2);
  x << 0.4, -0.1;
  const Grid2D grid = true_posterior_grid(x, dec, GridSpec{});
  CHECK(non_gaussianity(grid) < 1e-3);
}

TEST_CASE("non-gaussianity of a two-mode mixture matches direct quadrature") {
  const GridSpec spec;
  const Grid2D grid = mixture_grid(spec, 2.0);
  const double got = non_gaussianity(grid);
  CHECK(got > 0.1);

  // independent quadrature: fit moments, then integrate p log(p/q)
  double m1 = 0.0, m2 = 0.0, wsum = 0.0;
  for (int i1 = 0; i1 < spec.res; ++i1) {
    for (int i2 = 0; i2 < spec.res; ++i2) {
      const double w = std::exp(grid.table(i1, i2)) * grid.cell_area();
      wsum += w;
      m1 += w * grid.z1(i1);
      m2 += w * grid.z2(i2);
    }
  }
  m1 /= wsum;
  m2 /= wsum;
  double v11 = 0.0, v22 = 0.0, v12 = 0.0;
  for (int i1 = 0; i1 < spec.res; ++i1) {
    for (int i2 = 0; i2 < spec.res; ++i2) {
      const double w = std::exp(grid.table(i1, i2)) * grid.cell_area();
      v11 += w * (grid.z1(i1) - m1) * (grid.z1(i1) - m1);
      v22 += w * (grid.z2(i2) - m2) * (grid.z2(i2) - m2);
      v12 += w * (grid.z1(i1) - m1) * (grid.z2(i2) - m2);
    }
  }
  v11 /= wsum;
  v22 /= wsum;
  v12 /= wsum;
  const double det = v11 * v22 - v12 * v12;
  double kl = 0.0;
  for (int i1 = 0; i1 < spec.res; ++i1) {
    for (int i2 = 0; i2 < spec.res; ++i2) {
      const double logp = grid.table(i1, i2);
      const double w = std::exp(logp) * grid.cell_area();
      const double d1 = grid.z1(i1) - m1;
      const double d2 = grid.z2(i2) - m2;
      const double quad =
          (v22 * d1 * d1 - 2.0 * v12 * d1 * d2 + v11 * d2 * d2) / det;
      const double logq = -std::log(2.0 * std::numbers::pi) -
                          0.5 * std::log(det) - 0.5 * quad;
      kl += w * (logp - logq);
    }
  }
  CHECK(got == doctest::Approx(kl).epsilon(1e-4));
}

TEST_CASE("non-gaussianity is invariant to the axis swap of a symmetric density") {
  const GridSpec spec;
  Grid2D a = mixture_grid(spec, 2.0);
  Grid2D b = a;
  b.table = a.table.transpose();  // modes along z2 instead of z1
  CHECK(non_gaussianity(a) == doctest::Approx(non_gaussianity(b)).epsilon(1e-10));
}

TEST_CASE("grid quadrature is stable under resolution doubling") {
  GridSpec lo;
  lo.res = 200;
  GridSpec hi;
  hi.res = 400;
  const double a = non_gaussianity(mixture_grid(lo, 2.0));
  const double b = non_gaussianity(mixture_grid(hi, 2.0));
  CHECK(std::abs(a - b) < 1e-3);
}

TEST_CASE("spearman rank correlation") {
  const std::vector<double> x = {0.1, 0.4, 0.2, 0.9, 0.5};
  std::vector<double> y_inc, y_exp;
  for (double v : x) {
    y_inc.push_back(2.0 * v + 1.0);
    y_exp.push_back(std::exp(3.0 * v));
  }
  CHECK(spearman(x, y_inc) == doctest::Approx(1.0));
  CHECK(spearman(x, y_exp) == doctest::Approx(1.0));  // monotone invariance
  std::vector<double> y_neg;
  for (double v : x) y_neg.push_back(-v);
  CHECK(spearman(x, y_neg) == doctest::Approx(-1.0));
  const std::vector<double> constant(5, 3.3);
  CHECK(std::isnan(spearman(x, constant)));
  // ties get averaged ranks
  const std::vector<double> a = {1.0, 1.0, 2.0, 3.0};
  const std::vector<double> b = {1.0, 1.0, 2.0, 3.0};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
}

TEST_CASE("uncertainty study on a constant decoder reports undefined correlation") {
  TrainConfig cfg;
  cfg.d = 2;
  cfg.p = 4;
  cfg.h = 8;
  cfg.seed = 3;
  TrainState state = TrainState::init(cfg, 3);
  state.dec.g.params().setZero();  // g(z) = 0 for every z
  Mat testset(6, 3);
  testset.setZero();
  GridSpec spec;
  spec.res = 100;
  const UncertaintyStudy study = uncertainty_study(state, testset, spec, 0);
  REQUIRE(study.rows.size() == 6);
  for (const auto& r : study.rows) {
    CHECK(r.non_gaussianity < 1e-6);
  }
  CHECK(std::isnan(study.spearman));
}

TEST_CASE("uncertainty study requires d = 2 gpvae") {
  TrainConfig cfg;
  cfg.d = 3;
  cfg.p = 4;
  cfg.h = 8;
  TrainState state = TrainState::init(cfg, 3);
  CHECK_THROWS_AS(uncertainty_study(state, Mat::Zero(2, 3), GridSpec{}, 0),
                  std::invalid_argument);
}

TEST_CASE("bench harness reports positive, roughly stable timings") {
  TrainConfig cfg;
  cfg.d = 4;
  cfg.p = 8;
  cfg.h = 16;
  TrainState state = TrainState::init(cfg, 10);
  Mat testset(256, 10);
  testset.setConstant(0.3);
  const BenchResult r =
      bench_inference("gpvae", make_gpvae_inference(state), testset, 64, 5);
  CHECK(r.per_rep_ms.size() == 5);
  CHECK(r.mean_ms > 0.0);
  const BenchResult sa =
      bench_inference("sa2", make_sa_inference(state, 2), testset, 64, 5);
  CHECK(sa.mean_ms > 0.0);
  CHECK_THROWS_AS(bench_inference("x", make_vae_inference(state), testset, 512, 1),
                  std::invalid_argument);
}

TEST_CASE("grid export writes header and table") {
  const GridSpec spec{-3.0, 3.0, -2.0, 2.0, 50};
  const Grid2D grid = mixture_grid(spec, 1.0);
  const auto dir = testutil::scratch_dir("grid");
  const std::string path = (dir / "grid.bin").string();
  export_grid(grid, path);

  std::ifstream in(path, std::ios::binary);
  double header[5];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  CHECK(header[0] == -3.0);
  CHECK(header[1] == 3.0);
  CHECK(header[2] == -2.0);
  CHECK(header[3] == 2.0);
  CHECK(header[4] == 50.0);
  std::vector<double> table(50 * 50);
  in.read(reinterpret_cast<char*>(table.data()),
          static_cast<std::streamsize>(table.size() * sizeof(double)));
  CHECK(in.good());
  CHECK(table[0] == grid.table(0, 0));
  CHECK(table[50 * 50 - 1] == grid.table(49, 49));
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
