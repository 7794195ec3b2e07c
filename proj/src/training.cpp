#include "gpvae/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace gpvae {

namespace {

using nlohmann::json;

constexpr char kCkptMagic[8] = {'G', 'P', 'V', 'A', 'E', 'C', 'K', '1'};

json config_to_json(const TrainConfig& cfg) {
  return json{{"d", cfg.d},
              {"p", cfg.p},
              {"h", cfg.h},
              {"batch", cfg.batch},
              {"lr", cfg.lr},
              {"epochs", cfg.epochs},
              {"n_train", cfg.n_train},
              {"mc_sqlog", cfg.mc_sqlog},
              {"mc_recon", cfg.mc_recon},
              {"sigma_x2", cfg.sigma_x2},
              {"seed", cfg.seed},
              {"mode", to_string(cfg.mode)},
              {"lambda_chol_init", cfg.lambda_chol_init},
              {"freeze_lambda", cfg.freeze_lambda}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.d = j.at("d").get<int>();
  cfg.p = j.at("p").get<int>();
  cfg.h = j.at("h").get<int>();
  cfg.batch = j.at("batch").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.n_train = j.at("n_train").get<std::int64_t>();
  cfg.mc_sqlog = j.at("mc_sqlog").get<int>();
  cfg.mc_recon = j.at("mc_recon").get<int>();
  cfg.sigma_x2 = j.at("sigma_x2").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.mode = mode_from_string(j.at("mode").get<std::string>());
  cfg.lambda_chol_init = j.at("lambda_chol_init").get<double>();
  cfg.freeze_lambda = j.at("freeze_lambda").get<bool>();
  return cfg;
}

}  // namespace

std::string to_string(Mode mode) {
  return mode == Mode::kGpvae ? "gpvae" : "vae";
}

Mode mode_from_string(const std::string& s) {
  if (s == "gpvae") return Mode::kGpvae;
  if (s == "vae") return Mode::kVae;
  throw std::invalid_argument("unknown mode \"" + s + "\" (gpvae|vae)");
}

TrainState TrainState::init(const TrainConfig& cfg, int input_dim) {
  if (input_dim < 1) throw std::invalid_argument("TrainState: input_dim < 1");
  if (cfg.d < 1 || cfg.p < 1 || cfg.h < 1 || cfg.batch < 1 || cfg.epochs < 0 ||
      cfg.mc_sqlog < 1 || cfg.mc_recon < 1) {
    throw std::invalid_argument("TrainState: counts must be positive");
  }
  const MlpSpec trunk_spec{{input_dim, cfg.h, cfg.h, cfg.d},
                           Activation::kLeakyRelu, Activation::kIdentity};
  const MlpSpec feat_spec{{input_dim, cfg.h, cfg.p}, Activation::kLeakyRelu,
                          Activation::kLeakyRelu};
  const MlpSpec dec_spec{{cfg.d, cfg.h, cfg.h, input_dim}, Activation::kRelu,
                         Activation::kIdentity};

  TrainState st{cfg,
                input_dim,
                EncoderNets{Mlp(trunk_spec), Mlp(trunk_spec), Mlp(feat_spec),
                            Mlp(feat_spec)},
                Decoder(Mlp(dec_spec), cfg.sigma_x2),
                GPVarParams(cfg.d, cfg.p)};

  RngStream init_rng = RngStream(cfg.seed).split(rngkey::kInit);
  st.nets.b.init_params(init_rng.split(0));
  st.nets.c.init_params(init_rng.split(1));
  st.nets.psi_m.init_params(init_rng.split(2));
  st.nets.psi_s.init_params(init_rng.split(3));
  st.dec.g.init_params(init_rng.split(4));
  // Start the encoder at ~unit posterior std.
  st.nets.c.bias(st.nets.c.n_layers() - 1).setConstant(1.0);
  st.lambda.init_scaled_identity(cfg.lambda_chol_init);

  st.opt_b = AdamState(st.nets.b.n_params(), cfg.lr);
  st.opt_c = AdamState(st.nets.c.n_params(), cfg.lr);
  st.opt_psi_m = AdamState(st.nets.psi_m.n_params(), cfg.lr);
  st.opt_psi_s = AdamState(st.nets.psi_s.n_params(), cfg.lr);
  st.opt_dec = AdamState(st.dec.g.n_params(), cfg.lr);
  st.opt_lambda = AdamState(st.lambda.n_params(), cfg.lr);
  return st;
}

EncoderStats TrainState::encode(const Vec& x) const {
  if (cfg.mode == Mode::kGpvae) {
    return marginal_encoder(x, nets, lambda);
  }
  EncoderStats st;
  st.m = nets.b.forward(x);
  const Vec c_out = nets.c.forward(x);
  st.v = c_out.cwiseProduct(c_out).cwiseMax(kVarFloor);
  return st;
}

ElboNoise draw_noise(const TrainConfig& cfg, Eigen::Index batch,
                     RngStream rng_recon, RngStream rng_sqlog) {
  ElboNoise noise;
  noise.eps_recon.reserve(cfg.mc_recon);
  for (int r = 0; r < cfg.mc_recon; ++r) {
    Mat e(batch, cfg.d);
    for (Eigen::Index i = 0; i < batch; ++i) {
      for (int j = 0; j < cfg.d; ++j) e(i, j) = rng_recon.normal();
    }
    noise.eps_recon.push_back(std::move(e));
  }
  noise.eps_sqlog.reserve(cfg.mc_sqlog);
  for (int k = 0; k < cfg.mc_sqlog; ++k) {
    Mat e(batch, cfg.d);
    if (cfg.mode == Mode::kGpvae) {
      for (Eigen::Index i = 0; i < batch; ++i) {
        for (int j = 0; j < cfg.d; ++j) e(i, j) = rng_sqlog.normal();
      }
    } else {
      e.setZero();  // s == 0 in vae mode; values never matter
    }
    noise.eps_sqlog.push_back(std::move(e));
  }
  return noise;
}

ParamGrads ParamGrads::zeros_like(const TrainState& state) {
  ParamGrads g;
  g.b = Vec::Zero(state.nets.b.n_params());
  g.c = Vec::Zero(state.nets.c.n_params());
  g.psi_m = Vec::Zero(state.nets.psi_m.n_params());
  g.psi_s = Vec::Zero(state.nets.psi_s.n_params());
  g.dec = Vec::Zero(state.dec.g.n_params());
  g.lambda = Vec::Zero(state.lambda.n_params());
  return g;
}

void ParamGrads::set_zero() {
  b.setZero();
  c.setZero();
  psi_m.setZero();
  psi_s.setZero();
  dec.setZero();
  lambda.setZero();
}

bool ParamGrads::all_finite() const {
  return b.allFinite() && c.allFinite() && psi_m.allFinite() &&
         psi_s.allFinite() && dec.allFinite() && lambda.allFinite();
}

double elbo_batch(const Mat& x, const TrainState& state, const ElboNoise& noise,
                  ParamGrads* grads, ElboParts* parts) {
  const TrainConfig& cfg = state.cfg;
  const Eigen::Index n = x.rows();
  const int d = cfg.d;
  const int n_sqlog = cfg.mc_sqlog;
  const int n_recon = cfg.mc_recon;
  if (x.cols() != state.input_dim) {
    throw std::invalid_argument("elbo_batch: input width mismatch");
  }
  if (static_cast<int>(noise.eps_recon.size()) != n_recon ||
      static_cast<int>(noise.eps_sqlog.size()) != n_sqlog) {
    throw std::invalid_argument("elbo_batch: noise bundle does not match config");
  }
  const bool gp = cfg.mode == Mode::kGpvae;
  const bool lambda_active = gp && !cfg.freeze_lambda;
  if (lambda_active && cfg.n_train < 1) {
    throw std::invalid_argument("elbo_batch: n_train must be set in gpvae mode");
  }

  Mlp::Cache cache_b, cache_c, cache_pm, cache_ps;
  const Mat b_out = state.nets.b.forward_batch(x, cache_b);
  const Mat c_out = state.nets.c.forward_batch(x, cache_c);
  Mat phi_m, phi_s;
  MarginalBatch fwd;
  if (gp) {
    phi_m = state.nets.psi_m.forward_batch(x, cache_pm);
    phi_s = state.nets.psi_s.forward_batch(x, cache_ps);
    fwd = marginal_forward_batch(b_out, c_out, phi_m, phi_s, state.lambda);
  } else {
    fwd.m = b_out;
    fwd.tbar = c_out;
    fwd.v_raw = c_out.cwiseProduct(c_out);
    fwd.v = fwd.v_raw.cwiseMax(kVarFloor);
    fwd.s = Mat::Zero(n, d);
  }

  // Expected KL to the prior, Eq. (15), squared-log term by MC in the 1-D
  // projection. Loss convention: gradients are of -mean(elbo).
  Mat d_m = Mat::Zero(n, d);
  Mat d_v = Mat::Zero(n, d);
  Mat d_tbar = Mat::Zero(n, d);
  Mat d_s = Mat::Zero(n, d);
  const double inv_b = 1.0 / static_cast<double>(n);
  double sum_ekl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const double tbar = fwd.tbar(i, j);
      const double s = fwd.s(i, j);
      double mc = 0.0;
      double g_t = 0.0;
      double g_s = 0.0;
      for (int k = 0; k < n_sqlog; ++k) {
        const double eps = noise.eps_sqlog[k](i, j);
        const double t = tbar + s * eps;
        const double t2 = t * t;
        if (t2 >= kVarFloor) {
          mc += std::log(t2);
          g_t += 2.0 / t;
          g_s += 2.0 / t * eps;
        } else {
          mc += std::log(kVarFloor);
        }
      }
      mc /= n_sqlog;
      const double m = fwd.m(i, j);
      sum_ekl += 0.5 * (fwd.v(i, j) + m * m - 1.0 - mc);
      if (grads != nullptr) {
        d_v(i, j) = 0.5 * inv_b;
        d_m(i, j) = m * inv_b;
        d_tbar(i, j) = -0.5 * g_t / n_sqlog * inv_b;
        d_s(i, j) = -0.5 * g_s / n_sqlog * inv_b;
      }
    }
  }

  // Reconstruction term: z drawn from the marginal encoder.
  const Mat sqrt_v = fwd.v.cwiseSqrt();
  const double log_norm = -0.5 * static_cast<double>(state.input_dim) *
                          std::log(2.0 * std::numbers::pi * cfg.sigma_x2);
  double sum_recon = 0.0;
  for (int r = 0; r < n_recon; ++r) {
    const Mat z = fwd.m + sqrt_v.cwiseProduct(noise.eps_recon[r]);
    Mlp::Cache cache_dec;
    const Mat gx = state.dec.g.forward_batch(z, cache_dec);
    const Mat resid = x - gx;
    sum_recon +=
        (log_norm * n - resid.squaredNorm() / (2.0 * cfg.sigma_x2)) / n_recon;
    if (grads != nullptr) {
      // d(-elbo)/d gx = (gx - x) / (B * R * sigma_x2)
      const Mat d_gx = resid * (-inv_b / (n_recon * cfg.sigma_x2));
      const Mat dz = state.dec.g.backward_batch(cache_dec, d_gx, grads->dec);
      d_m += dz;
      d_v.array() +=
          dz.cwiseProduct(noise.eps_recon[r]).array() / (2.0 * sqrt_v.array());
    }
  }

  double wkl = 0.0;
  if (lambda_active) {
    wkl = weight_kl(state.lambda);
    if (grads != nullptr) {
      weight_kl_grad(state.lambda, 1.0 / static_cast<double>(cfg.n_train),
                     grads->lambda);
    }
  }

  const double mean_recon = sum_recon * inv_b;
  const double mean_ekl = sum_ekl * inv_b;
  if (!std::isfinite(mean_recon)) {
    throw std::runtime_error("elbo_batch: reconstruction term is not finite");
  }
  if (!std::isfinite(mean_ekl)) {
    throw std::runtime_error("elbo_batch: expected-KL term is not finite");
  }
  if (!std::isfinite(wkl)) {
    throw std::runtime_error("elbo_batch: weight-KL term is not finite");
  }
  if (parts != nullptr) {
    parts->recon = mean_recon;
    parts->expected_kl = mean_ekl;
    parts->weight_kl = wkl;
  }

  if (grads != nullptr) {
    if (gp) {
      Mat d_b = Mat::Zero(n, d);
      Mat d_c = Mat::Zero(n, d);
      Mat d_phi_m = Mat::Zero(n, cfg.p);
      Mat d_phi_s = Mat::Zero(n, cfg.p);
      marginal_backward_batch(fwd, phi_m, phi_s, state.lambda, d_m, d_v, d_tbar,
                              d_s, d_b, d_c, d_phi_m, d_phi_s, grads->lambda);
      state.nets.b.backward_batch(cache_b, d_b, grads->b);
      state.nets.c.backward_batch(cache_c, d_c, grads->c);
      state.nets.psi_m.backward_batch(cache_pm, d_phi_m, grads->psi_m);
      state.nets.psi_s.backward_batch(cache_ps, d_phi_s, grads->psi_s);
    } else {
      const Mat gate = (fwd.v_raw.array() >= kVarFloor).cast<double>().matrix();
      const Mat d_c =
          d_tbar + 2.0 * fwd.tbar.cwiseProduct(d_v.cwiseProduct(gate));
      state.nets.b.backward_batch(cache_b, d_m, grads->b);
      state.nets.c.backward_batch(cache_c, d_c, grads->c);
    }
  }

  return mean_recon - mean_ekl -
         (lambda_active ? wkl / static_cast<double>(cfg.n_train) : 0.0);
}

double elbo(const Vec& x, const TrainState& state, RngStream& rng) {
  const TrainConfig& cfg = state.cfg;
  ElboNoise noise;
  for (int r = 0; r < cfg.mc_recon; ++r) {
    Mat e(1, cfg.d);
    for (int j = 0; j < cfg.d; ++j) e(0, j) = rng.normal();
    noise.eps_recon.push_back(std::move(e));
  }
  for (int k = 0; k < cfg.mc_sqlog; ++k) {
    Mat e(1, cfg.d);
    if (cfg.mode == Mode::kGpvae) {
      for (int j = 0; j < cfg.d; ++j) e(0, j) = rng.normal();
    } else {
      e.setZero();
    }
    noise.eps_sqlog.push_back(std::move(e));
  }
  return elbo_batch(x.transpose(), state, noise);
}

namespace {

double eval_elbo(const Mat& x, const TrainState& state, RngStream rng_base) {
  const Eigen::Index n = x.rows();
  const int batch = state.cfg.batch;
  double acc = 0.0;
  int k = 0;
  for (Eigen::Index i0 = 0; i0 < n; i0 += batch, ++k) {
    const Eigen::Index nb = std::min<Eigen::Index>(batch, n - i0);
    const ElboNoise noise =
        draw_noise(state.cfg, nb, rng_base.split(k).split(0),
                   rng_base.split(k).split(1));
    acc += elbo_batch(x.middleRows(i0, nb), state, noise) *
           static_cast<double>(nb);
  }
  return acc / static_cast<double>(n);
}

void adam_steps(TrainState& state, const ParamGrads& grads) {
  state.opt_b.step(state.nets.b.params(), grads.b);
  state.opt_c.step(state.nets.c.params(), grads.c);
  state.opt_dec.step(state.dec.g.params(), grads.dec);
  if (state.cfg.mode == Mode::kGpvae) {
    state.opt_psi_m.step(state.nets.psi_m.params(), grads.psi_m);
    state.opt_psi_s.step(state.nets.psi_s.params(), grads.psi_s);
    if (!state.cfg.freeze_lambda) {
      state.opt_lambda.step(state.lambda.params(), grads.lambda);
    }
  }
}

}  // namespace

TrainResult train(const Mat& train_x, const Mat& val_x, TrainConfig cfg,
                  const TrainPaths& paths) {
  const Eigen::Index n = train_x.rows();
  if (n < 1) throw std::invalid_argument("train: dataset is empty");
  if (cfg.n_train == 0) cfg.n_train = n;
  if (cfg.batch > n) {
    throw std::invalid_argument("train: batch size exceeds training-set size");
  }

  TrainState state = paths.resume.empty()
                         ? TrainState::init(cfg, static_cast<int>(train_x.cols()))
                         : checkpoint_load(paths.resume, cfg);
  state.cfg = cfg;  // structural fields validated above; budget fields override

  std::ofstream log_file;
  if (!paths.run_log.empty()) {
    log_file.open(paths.run_log);
    if (!log_file) {
      throw std::runtime_error("train: cannot open run log " + paths.run_log);
    }
    log_file << "epoch,train_elbo,val_elbo,weight_kl,wall_ms\n";
  }

  const RngStream root(cfg.seed);
  ParamGrads grads = ParamGrads::zeros_like(state);
  std::vector<EpochLog> epoch_log;

  std::vector<int> perm(static_cast<std::size_t>(n));

  for (int e = state.epoch; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream shuffle_rng = root.split(rngkey::kShuffle).split(e);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle_rng.shuffle(perm);

    double epoch_elbo = 0.0;
    ElboParts parts;
    int k = 0;
    Mat batch_x(std::min<Eigen::Index>(cfg.batch, n), train_x.cols());
    for (Eigen::Index i0 = 0; i0 < n; i0 += cfg.batch, ++k) {
      const Eigen::Index nb = std::min<Eigen::Index>(cfg.batch, n - i0);
      batch_x.resize(nb, train_x.cols());
      for (Eigen::Index i = 0; i < nb; ++i) {
        batch_x.row(i) = train_x.row(perm[static_cast<std::size_t>(i0 + i)]);
      }
      const ElboNoise noise =
          draw_noise(cfg, nb, root.split(rngkey::kRecon).split(e).split(k),
                     root.split(rngkey::kSqLog).split(e).split(k));
      grads.set_zero();
      double el;
      try {
        el = elbo_batch(batch_x, state, noise, &grads, &parts);
        adam_steps(state, grads);
      } catch (const std::runtime_error& err) {
        throw std::runtime_error("train: diverged at epoch " + std::to_string(e) +
                                 " batch " + std::to_string(k) + ": " +
                                 err.what());
      }
      epoch_elbo += el * static_cast<double>(nb);
    }
    epoch_elbo /= static_cast<double>(n);

    double val = val_x.rows() > 0
                     ? eval_elbo(val_x, state, root.split(rngkey::kVal).split(e))
                     : epoch_elbo;
    if (!std::isfinite(val)) {
      throw std::runtime_error("train: non-finite validation ELBO at epoch " +
                               std::to_string(e));
    }
    state.epoch = e + 1;

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                  t0)
            .count();
    const double wkl_term =
        (cfg.mode == Mode::kGpvae && !cfg.freeze_lambda) ? weight_kl(state.lambda)
                                                         : 0.0;
    epoch_log.push_back({e, epoch_elbo, val, wkl_term, wall_ms});
    if (log_file) {
      char line[256];
      std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.3f\n", e,
                    epoch_elbo, val, wkl_term, wall_ms);
      log_file << line;
      log_file.flush();
    }

    if (!state.has_best || val > state.best_val_elbo) {
      state.best_val_elbo = val;
      state.has_best = true;
      if (!paths.best_ckpt.empty()) checkpoint_save(state, paths.best_ckpt);
    }
    if (!paths.last_ckpt.empty()) checkpoint_save(state, paths.last_ckpt);
  }
  if (!paths.last_ckpt.empty()) checkpoint_save(state, paths.last_ckpt);

  return {std::move(state), std::move(epoch_log)};
}

namespace {

struct BlockRef {
  std::string name;
  Vec* vec;
};

std::vector<BlockRef> checkpoint_blocks(TrainState& st) {
  return {{"params.b", &st.nets.b.params()},
          {"params.c", &st.nets.c.params()},
          {"params.psi_m", &st.nets.psi_m.params()},
          {"params.psi_s", &st.nets.psi_s.params()},
          {"params.decoder", &st.dec.g.params()},
          {"params.lambda", &st.lambda.params()},
          {"adam.b.m", &st.opt_b.m},
          {"adam.b.v", &st.opt_b.v},
          {"adam.c.m", &st.opt_c.m},
          {"adam.c.v", &st.opt_c.v},
          {"adam.psi_m.m", &st.opt_psi_m.m},
          {"adam.psi_m.v", &st.opt_psi_m.v},
          {"adam.psi_s.m", &st.opt_psi_s.m},
          {"adam.psi_s.v", &st.opt_psi_s.v},
          {"adam.decoder.m", &st.opt_dec.m},
          {"adam.decoder.v", &st.opt_dec.v},
          {"adam.lambda.m", &st.opt_lambda.m},
          {"adam.lambda.v", &st.opt_lambda.v}};
}

}  // namespace

void checkpoint_save(const TrainState& state, const std::string& path) {
  const auto blocks = checkpoint_blocks(const_cast<TrainState&>(state));
  json manifest = json::array();
  std::int64_t offset = 0;
  for (const auto& b : blocks) {
    manifest.push_back(
        {{"name", b.name}, {"offset", offset}, {"len", b.vec->size()}});
    offset += b.vec->size();
  }
  json header{{"version", 1},
              {"config", config_to_json(state.cfg)},
              {"input_dim", state.input_dim},
              {"epoch", state.epoch},
              {"best_val_elbo", state.best_val_elbo},
              {"has_best", state.has_best},
              {"adam_t",
               {{"b", state.opt_b.t},
                {"c", state.opt_c.t},
                {"psi_m", state.opt_psi_m.t},
                {"psi_s", state.opt_psi_s.t},
                {"decoder", state.opt_dec.t},
                {"lambda", state.opt_lambda.t}}},
              {"blocks", manifest}};
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint_save: cannot open " + path);
  out.write(kCkptMagic, 8);
  const std::uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(header_str.data(), static_cast<std::streamsize>(hlen));
  for (const auto& b : blocks) {
    out.write(reinterpret_cast<const char*>(b.vec->data()),
              static_cast<std::streamsize>(b.vec->size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint_save: write failed for " + path);
}

TrainState checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("checkpoint_load: cannot open " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::string buf(static_cast<std::size_t>(size), '\0');
  if (!in.read(buf.data(), size)) {
    throw std::runtime_error("checkpoint_load: read failed for " + path);
  }
  if (size < 16 || std::memcmp(buf.data(), kCkptMagic, 8) != 0) {
    throw std::runtime_error("checkpoint_load: " + path +
                             " is not a gpvae checkpoint (bad magic)");
  }
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, buf.data() + 8, 8);
  if (16 + hlen > static_cast<std::uint64_t>(size)) {
    throw std::runtime_error("checkpoint_load: truncated header in " + path);
  }
  json header;
  try {
    header = json::parse(buf.substr(16, hlen));
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint_load: corrupt header: " +
                             std::string(e.what()));
  }

  const TrainConfig cfg = config_from_json(header.at("config"));
  TrainState st = TrainState::init(cfg, header.at("input_dim").get<int>());
  st.epoch = header.at("epoch").get<int>();
  st.best_val_elbo = header.at("best_val_elbo").get<double>();
  st.has_best = header.at("has_best").get<bool>();
  const auto& t = header.at("adam_t");
  st.opt_b.t = t.at("b").get<std::int64_t>();
  st.opt_c.t = t.at("c").get<std::int64_t>();
  st.opt_psi_m.t = t.at("psi_m").get<std::int64_t>();
  st.opt_psi_s.t = t.at("psi_s").get<std::int64_t>();
  st.opt_dec.t = t.at("decoder").get<std::int64_t>();
  st.opt_lambda.t = t.at("lambda").get<std::int64_t>();

  const char* payload = buf.data() + 16 + hlen;
  const std::uint64_t payload_len = size - 16 - hlen;
  auto blocks = checkpoint_blocks(st);
  const auto& manifest = header.at("blocks");
  for (auto& b : blocks) {
    const json* entry = nullptr;
    for (const auto& m : manifest) {
      if (m.at("name").get<std::string>() == b.name) {
        entry = &m;
        break;
      }
    }
    if (entry == nullptr) {
      throw std::runtime_error("checkpoint_load: manifest diff: block " +
                               b.name + " missing from " + path);
    }
    const std::int64_t len = entry->at("len").get<std::int64_t>();
    const std::int64_t off = entry->at("offset").get<std::int64_t>();
    if (len != b.vec->size()) {
      throw std::runtime_error(
          "checkpoint_load: manifest diff: block " + b.name + " has length " +
          std::to_string(len) + ", expected " + std::to_string(b.vec->size()));
    }
    if (off < 0 ||
        static_cast<std::uint64_t>(off + len) * sizeof(double) > payload_len) {
      throw std::runtime_error("checkpoint_load: truncated payload for block " +
                               b.name + " in " + path);
    }
    std::memcpy(b.vec->data(), payload + off * sizeof(double),
                static_cast<std::size_t>(len) * sizeof(double));
  }
  return st;
}

TrainState checkpoint_load(const std::string& path, const TrainConfig& expect) {
  TrainState st = checkpoint_load(path);
  const TrainConfig& got = st.cfg;
  auto mismatch = [&](const std::string& field, auto a, auto b) {
    throw std::runtime_error("checkpoint_load: config mismatch on " + field +
                             ": checkpoint has " + std::to_string(a) +
                             ", expected " + std::to_string(b));
  };
  if (got.d != expect.d) mismatch("d", got.d, expect.d);
  if (got.p != expect.p) mismatch("p", got.p, expect.p);
  if (got.h != expect.h) mismatch("h", got.h, expect.h);
  if (got.mode != expect.mode) {
    throw std::runtime_error("checkpoint_load: config mismatch on mode: " +
                             to_string(got.mode) + " vs " +
                             to_string(expect.mode));
  }
  return st;
}

}  // namespace gpvae
