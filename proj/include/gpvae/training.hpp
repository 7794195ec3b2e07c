#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gpvae/generative.hpp"
#include "gpvae/gp_encoder.hpp"
#include "gpvae/nn.hpp"
#include "gpvae/prob.hpp"
#include "gpvae/rng.hpp"

namespace gpvae {

enum class Mode { kGpvae, kVae };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& s);

struct TrainConfig {
  int d = 10;              // latent dimension
  int p = 64;              // deep-kernel feature dimension
  int h = 64;              // hidden width
  int batch = 128;
  double lr = 5e-4;
  int epochs = 50;
  std::int64_t n_train = 0;  // training-set size N in the 1/N KL weight;
                             // 0 = take from the dataset in train()
  int mc_sqlog = 8;          // S: samples for the expected squared-log term
  int mc_recon = 1;          // samples for the reconstruction term
  double sigma_x2 = 0.1;
  std::uint64_t seed = 1;
  Mode mode = Mode::kGpvae;
  double lambda_chol_init = 0.01;
  bool freeze_lambda = false;  // keep Lambda fixed and drop its (constant)
                               // weight-KL term from the objective
};

/// Model + variational parameters, optimizer moments, epoch counter.
/// Exactly restorable from a checkpoint (bit-identical continuation on one
/// platform; RNG substreams are derived statelessly from cfg.seed).
struct TrainState {
  TrainConfig cfg;
  int input_dim = 0;
  EncoderNets nets;
  Decoder dec;
  GPVarParams lambda;
  AdamState opt_b, opt_c, opt_psi_m, opt_psi_s, opt_dec, opt_lambda;
  int epoch = 0;
  double best_val_elbo = 0.0;
  bool has_best = false;

  static TrainState init(const TrainConfig& cfg, int input_dim);

  EncoderStats encode(const Vec& x) const;
};

/// Frozen MC draws for one batch; entry [r](i, j) is the epsilon for
/// sample r, instance i, latent dimension j.
struct ElboNoise {
  std::vector<Mat> eps_recon;
  std::vector<Mat> eps_sqlog;
};

ElboNoise draw_noise(const TrainConfig& cfg, Eigen::Index batch,
                     RngStream rng_recon, RngStream rng_sqlog);

struct ElboParts {
  double recon = 0.0;      // E_q(z|x)[log p(x|z)], batch mean
  double expected_kl = 0.0;
  double weight_kl = 0.0;  // unscaled KL(q(W,U)||N(0,I))
};

struct ParamGrads {
  Vec b, c, psi_m, psi_s, dec, lambda;

  static ParamGrads zeros_like(const TrainState& state);
  void set_zero();
  bool all_finite() const;
};

/// Mean per-instance ELBO of Eq. (14) over the batch rows. When `grads` is
/// given, accumulates the gradient of the *negative* mean ELBO (the loss
/// minimized by Adam). Noise must match cfg (mc_recon/mc_sqlog draws).
double elbo_batch(const Mat& x, const TrainState& state, const ElboNoise& noise,
                  ParamGrads* grads = nullptr, ElboParts* parts = nullptr);

/// Single-datapoint ELBO; draws reconstruction noise then squared-log noise
/// from `rng`.
double elbo(const Vec& x, const TrainState& state, RngStream& rng);

struct EpochLog {
  int epoch = 0;
  double train_elbo = 0.0;
  double val_elbo = 0.0;
  double weight_kl = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  TrainState state;             // final state
  std::vector<EpochLog> log;
};

struct TrainPaths {
  std::string run_log;     // CSV (epoch,train_elbo,val_elbo,weight_kl,wall_ms)
  std::string last_ckpt;   // written after every epoch
  std::string best_ckpt;   // written on validation improvement
  std::string resume;      // checkpoint to continue from
};

/// Shuffled mini-batch Adam ascent on the mean batch ELBO over all parameter
/// groups; deterministic given cfg.seed. Throws std::runtime_error on numeric
/// divergence (previously written checkpoints are left in place).
TrainResult train(const Mat& train_x, const Mat& val_x, TrainConfig cfg,
                  const TrainPaths& paths = {});

void checkpoint_save(const TrainState& state, const std::string& path);
TrainState checkpoint_load(const std::string& path);

/// Load and verify shape-defining fields against an expected config.
TrainState checkpoint_load(const std::string& path, const TrainConfig& expect);

}  // namespace gpvae
