#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gpvae/data.hpp"
#include "gpvae/training.hpp"
#include "helpers.hpp"

using namespace gpvae;

namespace {

TrainConfig tiny_config(Mode mode = Mode::kGpvae) {
  TrainConfig cfg;
  cfg.d = 2;
  cfg.p = 4;
  cfg.h = 8;
  cfg.batch = 2;
  cfg.epochs = 0;
  cfg.n_train = 2;
  cfg.mc_sqlog = 3;
  cfg.mc_recon = 1;
  cfg.sigma_x2 = 0.3;
  cfg.seed = 5;
  cfg.mode = mode;
  return cfg;
}

Mat random_batch(int n, int dim, RngStream rng) {
  Mat x(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) x(i, j) = rng.uniform();
  }
  return x;
}

ElboNoise frozen_noise(const TrainConfig& cfg, int n, std::uint64_t seed) {
  return draw_noise(cfg, n, RngStream(seed).split(1), RngStream(seed).split(2));
}

// Relative-error check between an analytic gradient slice and central
// finite differences of the frozen-noise batch ELBO.
double max_grad_rel_err(TrainState& state, Vec& params, const Vec& analytic,
                        const Mat& x, const ElboNoise& noise) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double p0 = params[i];
    const double h = 1e-5;
    params[i] = p0 + h;
    const double fp = -elbo_batch(x, state, noise);
    params[i] = p0 - h;
    const double fm = -elbo_batch(x, state, noise);
    params[i] = p0;
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-4});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("full elbo gradients match central finite differences") {
  const int input_dim = 5;
  TrainConfig cfg = tiny_config();
  TrainState state = TrainState::init(cfg, input_dim);
  const Mat x = random_batch(2, input_dim, RngStream(31));
  const ElboNoise noise = frozen_noise(cfg, 2, 77);

  ParamGrads grads = ParamGrads::zeros_like(state);
  elbo_batch(x, state, noise, &grads);

  CHECK(max_grad_rel_err(state, state.nets.b.params(), grads.b, x, noise) < 1e-4);
  CHECK(max_grad_rel_err(state, state.nets.c.params(), grads.c, x, noise) < 1e-4);
  CHECK(max_grad_rel_err(state, state.nets.psi_m.params(), grads.psi_m, x,
                         noise) < 1e-4);
  CHECK(max_grad_rel_err(state, state.nets.psi_s.params(), grads.psi_s, x,
                         noise) < 1e-4);
  CHECK(max_grad_rel_err(state, state.dec.g.params(), grads.dec, x, noise) <
        1e-4);
  CHECK(max_grad_rel_err(state, state.lambda.params(), grads.lambda, x, noise) <
        1e-4);
}

TEST_CASE("vae-mode elbo gradients match finite differences too") {
  const int input_dim = 4;
  TrainConfig cfg = tiny_config(Mode::kVae);
  TrainState state = TrainState::init(cfg, input_dim);
  const Mat x = random_batch(2, input_dim, RngStream(33));
  const ElboNoise noise = frozen_noise(cfg, 2, 78);
  ParamGrads grads = ParamGrads::zeros_like(state);
  elbo_batch(x, state, noise, &grads);
  CHECK(max_grad_rel_err(state, state.nets.b.params(), grads.b, x, noise) < 1e-4);
  CHECK(max_grad_rel_err(state, state.nets.c.params(), grads.c, x, noise) < 1e-4);
  CHECK(max_grad_rel_err(state, state.dec.g.params(), grads.dec, x, noise) <
        1e-4);
}

TEST_CASE("vae mode equals an independently coded vae elbo") {
  const int input_dim = 6;
  TrainConfig cfg = tiny_config(Mode::kVae);
  TrainState state = TrainState::init(cfg, input_dim);
  const Mat x = random_batch(4, input_dim, RngStream(41));
  const ElboNoise noise = frozen_noise(cfg, 4, 91);
  const double got = elbo_batch(x, state, noise);

  // independent implementation on the same frozen noise
  double want = 0.0;
  const DiagGaussian prior(Vec::Zero(cfg.d), Vec::Ones(cfg.d));
  for (int i = 0; i < 4; ++i) {
    const Vec xi = x.row(i).transpose();
    const Vec b = state.nets.b.forward(xi);
    const Vec c = state.nets.c.forward(xi);
    const Vec var = c.cwiseProduct(c).cwiseMax(kVarFloor);
    const Vec z =
        b + var.cwiseSqrt().cwiseProduct(noise.eps_recon[0].row(i).transpose());
    const DiagGaussian q(b, var);
    want += log_lik(xi, z, state.dec) - kl_diag_gaussians(q, prior);
  }
  want /= 4.0;
  CHECK(got == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("doubling N halves the weight-kl contribution exactly") {
  const int input_dim = 4;
  TrainConfig cfg = tiny_config();
  cfg.lambda_chol_init = 0.05;
  TrainState state = TrainState::init(cfg, input_dim);
  RngStream prng(9);
  for (Eigen::Index i = 0; i < state.lambda.params().size(); ++i) {
    state.lambda.params()[i] += 0.01 * prng.normal();
  }
  const Mat x = random_batch(2, input_dim, RngStream(51));
  const ElboNoise noise = frozen_noise(cfg, 2, 52);

  const double n1 = 7, n2 = 14;
  state.cfg.n_train = static_cast<std::int64_t>(n1);
  const double e1 = elbo_batch(x, state, noise);
  state.cfg.n_train = static_cast<std::int64_t>(n2);
  const double e2 = elbo_batch(x, state, noise);
  const double wkl = weight_kl(state.lambda);
  CHECK(e2 - e1 == doctest::Approx(wkl * (1.0 / n1 - 1.0 / n2)).epsilon(1e-10));
}

TEST_CASE("single-point elbo agrees with the batched mean") {
  const int input_dim = 4;
  TrainConfig cfg = tiny_config();
  cfg.batch = 3;
  TrainState state = TrainState::init(cfg, input_dim);
  const Mat x = random_batch(3, input_dim, RngStream(61));
  const ElboNoise noise = frozen_noise(cfg, 3, 62);

  double mean_single = 0.0;
  for (int i = 0; i < 3; ++i) {
    ElboNoise slice;
    for (const Mat& e : noise.eps_recon) slice.eps_recon.push_back(e.row(i));
    for (const Mat& e : noise.eps_sqlog) slice.eps_sqlog.push_back(e.row(i));
    mean_single += elbo_batch(x.row(i), state, slice);
  }
  mean_single /= 3.0;
  CHECK(elbo_batch(x, state, noise) ==
        doctest::Approx(mean_single).epsilon(1e-12));
}

TEST_CASE("zero epochs returns the initialization") {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  cfg.n_train = 0;
  const Mat x = random_batch(8, 4, RngStream(71));
  const TrainResult res = train(x, Mat(0, 4), cfg);
  const TrainState fresh = TrainState::init(res.state.cfg, 4);
  CHECK(res.state.nets.b.params() == fresh.nets.b.params());
  CHECK(res.state.dec.g.params() == fresh.dec.g.params());
  CHECK(res.state.lambda.params() == fresh.lambda.params());
  CHECK(res.state.epoch == 0);
}

TEST_CASE("training improves the elbo on two-cluster data") {
  Dataset ds = gen_synthetic("gaussian-mixture", 288, 13);
  split_dataset(ds, 256, 32, 0, 13);
  TrainConfig cfg;
  cfg.d = 2;
  cfg.p = 8;
  cfg.h = 16;
  cfg.batch = 64;
  cfg.lr = 1e-3;
  cfg.epochs = 200;
  cfg.sigma_x2 = 0.01;  // sharp likelihood so convergence is >10 nats away
  cfg.seed = 3;
  cfg.mode = Mode::kGpvae;

  const TrainResult res = train(ds.train(), ds.val(), cfg);
  REQUIRE(res.log.size() == 200);
  const double first = res.log.front().train_elbo;
  const double last = res.log.back().train_elbo;
  CHECK(last > first + 10.0);
  for (const auto& row : res.log) {
    CHECK(std::isfinite(row.val_elbo));
  }
}

TEST_CASE("training is deterministic given the seed") {
  Dataset ds = gen_synthetic("gaussian-mixture", 96, 23);
  split_dataset(ds, 64, 16, 0, 23);
  TrainConfig cfg;
  cfg.d = 2;
  cfg.p = 4;
  cfg.h = 8;
  cfg.batch = 32;
  cfg.epochs = 5;
  cfg.seed = 77;
  const TrainResult a = train(ds.train(), ds.val(), cfg);
  const TrainResult b = train(ds.train(), ds.val(), cfg);
  CHECK(a.state.nets.b.params() == b.state.nets.b.params());
  CHECK(a.state.lambda.params() == b.state.lambda.params());
  CHECK(a.log.back().val_elbo == b.log.back().val_elbo);
}

TEST_CASE("frozen zero lambda reproduces the vae trajectory bit for bit") {
  Dataset ds = gen_synthetic("gaussian-mixture", 96, 29);
  split_dataset(ds, 64, 16, 0, 29);
  TrainConfig cfg;
  cfg.d = 2;
  cfg.p = 4;
  cfg.h = 8;
  cfg.batch = 16;
  cfg.epochs = 25;  // 100 adam steps
  cfg.seed = 11;
  cfg.mode = Mode::kVae;
  const TrainResult vae = train(ds.train(), ds.val(), cfg);

  TrainConfig gcfg = cfg;
  gcfg.mode = Mode::kGpvae;
  gcfg.lambda_chol_init = 0.0;
  gcfg.freeze_lambda = true;
  const TrainResult frozen = train(ds.train(), ds.val(), gcfg);

  CHECK((vae.state.nets.b.params() - frozen.state.nets.b.params())
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((vae.state.nets.c.params() - frozen.state.nets.c.params())
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((vae.state.dec.g.params() - frozen.state.dec.g.params())
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(vae.log.back().train_elbo == frozen.log.back().train_elbo);
  // psi nets receive exactly zero gradients under frozen zero lambda
  CHECK(frozen.state.nets.psi_m.params() ==
        TrainState::init(gcfg, 2).nets.psi_m.params());
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
  const auto dir = testutil::scratch_dir("ckpt");
  const std::string path = (dir / "state.ckpt").string();
  TrainConfig cfg = tiny_config();
  TrainState state = TrainState::init(cfg, 4);
  state.epoch = 3;
  state.best_val_elbo = -12.5;
  state.has_best = true;
  state.opt_b.t = 9;
  checkpoint_save(state, path);

  SUBCASE("round trip") {
    const TrainState back = checkpoint_load(path);
    CHECK(back.nets.b.params() == state.nets.b.params());
    CHECK(back.nets.psi_s.params() == state.nets.psi_s.params());
    CHECK(back.lambda.params() == state.lambda.params());
    CHECK(back.epoch == 3);
    CHECK(back.best_val_elbo == -12.5);
    CHECK(back.opt_b.t == 9);
    CHECK(back.opt_b.m == state.opt_b.m);
  }
  SUBCASE("truncated file fails without partial state") {
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 64);
    CHECK_THROWS_AS(checkpoint_load(path), std::runtime_error);
  }
  SUBCASE("bad magic is rejected") {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACKPTxxxxxxxxxxxxxxxx";
    f.close();
    CHECK_THROWS_WITH_AS(checkpoint_load(path),
                         doctest::Contains("bad magic"), std::runtime_error);
  }
  SUBCASE("mismatched latent dimension is named") {
    TrainConfig other = cfg;
    other.d = 3;
    CHECK_THROWS_WITH_AS(checkpoint_load(path, other),
                         doctest::Contains("mismatch on d"),
                         std::runtime_error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("resume continues bit-identically") {
  Dataset ds = gen_synthetic("gaussian-mixture", 96, 37);
  split_dataset(ds, 64, 16, 0, 37);
  TrainConfig cfg;
  cfg.d = 2;
  cfg.p = 4;
  cfg.h = 8;
  cfg.batch = 32;
  cfg.epochs = 8;
  cfg.seed = 19;

  const TrainResult full = train(ds.train(), ds.val(), cfg);

  const auto dir = testutil::scratch_dir("resume");
  TrainPaths paths;
  paths.last_ckpt = (dir / "last.ckpt").string();
  TrainConfig half = cfg;
  half.epochs = 4;
  train(ds.train(), ds.val(), half, paths);

  TrainPaths resume_paths;
  resume_paths.resume = paths.last_ckpt;
  const TrainResult resumed = train(ds.train(), ds.val(), cfg, resume_paths);

  CHECK(resumed.state.nets.b.params() == full.state.nets.b.params());
  CHECK(resumed.state.nets.c.params() == full.state.nets.c.params());
  CHECK(resumed.state.dec.g.params() == full.state.dec.g.params());
  CHECK(resumed.state.lambda.params() == full.state.lambda.params());
  CHECK(resumed.state.opt_b.m == full.state.opt_b.m);
  std::filesystem::remove_all(dir);
}

TEST_CASE("numeric divergence aborts with a named term") {
  TrainConfig cfg = tiny_config();
  TrainState state = TrainState::init(cfg, 4);
  state.dec.g.params()[0] = std::numeric_limits<double>::infinity();
  const Mat x = random_batch(2, 4, RngStream(81));
  const ElboNoise noise = frozen_noise(cfg, 2, 82);
  CHECK_THROWS_WITH_AS(elbo_batch(x, state, noise),
                       doctest::Contains("reconstruction"), std::runtime_error);

  // train() wraps the failure with epoch/batch context
  const auto dir = testutil::scratch_dir("diverge");
  const std::string bad = (dir / "bad.ckpt").string();
  state.epoch = 0;
  checkpoint_save(state, bad);
  TrainPaths paths;
  paths.resume = bad;
  TrainConfig run_cfg = cfg;
  run_cfg.epochs = 2;
  run_cfg.batch = 2;
  Dataset ds = gen_synthetic("gaussian-mixture", 8, 3);
  split_dataset(ds, 4, 2, 0, 3);
  Mat train4(4, 4);
  train4 << ds.train(), ds.train();  // 4 rows of 2-wide data doubled to 4-wide
  CHECK_THROWS_WITH_AS(train(train4, Mat(0, 4), run_cfg, paths),
                       doctest::Contains("diverged at epoch"),
                       std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("elbo rejects mismatched noise bundles") {
  TrainConfig cfg = tiny_config();
  TrainState state = TrainState::init(cfg, 4);
  const Mat x = random_batch(2, 4, RngStream(91));
  ElboNoise noise = frozen_noise(cfg, 2, 92);
  noise.eps_sqlog.pop_back();
  CHECK_THROWS_AS(elbo_batch(x, state, noise), std::invalid_argument);
}

}  // TEST_SUITE
