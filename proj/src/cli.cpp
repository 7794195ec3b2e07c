#include "gpvae/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <stdexcept>
#include <vector>

#include "gpvae/baselines.hpp"
#include "gpvae/data.hpp"
#include "gpvae/eval.hpp"
#include "gpvae/training.hpp"

namespace gpvae::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

template <typename T>
struct JsonType;
template <>
struct JsonType<int> {
  static constexpr const char* name = "integer";
  static bool check(const json& j) { return j.is_number_integer(); }
};
template <>
struct JsonType<std::int64_t> {
  static constexpr const char* name = "integer";
  static bool check(const json& j) { return j.is_number_integer(); }
};
template <>
struct JsonType<std::uint64_t> {
  static constexpr const char* name = "nonnegative integer";
  static bool check(const json& j) {
    return j.is_number_unsigned() ||
           (j.is_number_integer() && j.get<std::int64_t>() >= 0);
  }
};
template <>
struct JsonType<double> {
  static constexpr const char* name = "number";
  static bool check(const json& j) { return j.is_number(); }
};
template <>
struct JsonType<std::string> {
  static constexpr const char* name = "string";
  static bool check(const json& j) { return j.is_string(); }
};
template <>
struct JsonType<bool> {
  static constexpr const char* name = "boolean";
  static bool check(const json& j) { return j.is_boolean(); }
};

template <typename T>
T get_field(const json& root, const std::string& section,
            const std::string& key, T def) {
  if (!root.contains(section)) return def;
  const json& s = root.at(section);
  if (!s.is_object()) {
    throw std::invalid_argument("config field " + section +
                                ": expected object");
  }
  if (!s.contains(key)) return def;
  const json& v = s.at(key);
  if (!JsonType<T>::check(v)) {
    throw std::invalid_argument("config field " + section + "." + key +
                                ": expected " + JsonType<T>::name + ", got " +
                                std::string(v.type_name()));
  }
  return v.get<T>();
}

struct RunConfig {
  std::string out_dir = "runs/out";
  std::uint64_t seed = 1;

  std::string ds_kind = "digits";
  std::string ds_images;
  std::string ds_labels;
  int n_train = 5000;
  int n_val = 500;
  int n_test = 1000;

  TrainConfig tc;
  std::string train_resume;

  std::string eval_checkpoint;
  int iwae_k = 100;

  std::string gap_checkpoint;
  GapOptions gap;

  std::string unc_checkpoint;
  int unc_max_instances = 100;
  GridSpec grid;
  int export_grids = 8;

  std::string bench_checkpoint;
  int bench_batch = 128;
  int bench_reps = 5;
  std::vector<int> sa_steps = {1, 2, 4, 8};
};

RunConfig parse_config(const json& root) {
  if (!root.is_object()) {
    throw std::invalid_argument("config: top level must be a JSON object");
  }
  RunConfig c;
  if (root.contains("out_dir")) {
    if (!root.at("out_dir").is_string()) {
      throw std::invalid_argument("config field out_dir: expected string");
    }
    c.out_dir = root.at("out_dir").get<std::string>();
  }
  if (root.contains("seed")) {
    if (!JsonType<std::uint64_t>::check(root.at("seed"))) {
      throw std::invalid_argument(
          "config field seed: expected nonnegative integer");
    }
    c.seed = root.at("seed").get<std::uint64_t>();
  }

  c.ds_kind = get_field<std::string>(root, "dataset", "kind", c.ds_kind);
  c.ds_images = get_field<std::string>(root, "dataset", "images", "");
  c.ds_labels = get_field<std::string>(root, "dataset", "labels", "");
  c.n_train = get_field<int>(root, "dataset", "n_train", c.n_train);
  c.n_val = get_field<int>(root, "dataset", "n_val", c.n_val);
  c.n_test = get_field<int>(root, "dataset", "n_test", c.n_test);

  c.tc.d = get_field<int>(root, "model", "d", c.tc.d);
  c.tc.p = get_field<int>(root, "model", "p", c.tc.p);
  c.tc.h = get_field<int>(root, "model", "h", c.tc.h);
  c.tc.sigma_x2 = get_field<double>(root, "model", "sigma_x2", c.tc.sigma_x2);
  c.tc.lambda_chol_init =
      get_field<double>(root, "model", "lambda_chol_init", c.tc.lambda_chol_init);
  c.tc.mode = mode_from_string(
      get_field<std::string>(root, "model", "mode", to_string(c.tc.mode)));
  c.tc.freeze_lambda =
      get_field<bool>(root, "model", "freeze_lambda", c.tc.freeze_lambda);

  c.tc.batch = get_field<int>(root, "train", "batch", c.tc.batch);
  c.tc.lr = get_field<double>(root, "train", "lr", c.tc.lr);
  c.tc.epochs = get_field<int>(root, "train", "epochs", c.tc.epochs);
  c.tc.mc_sqlog = get_field<int>(root, "train", "mc_sqlog", c.tc.mc_sqlog);
  c.tc.mc_recon = get_field<int>(root, "train", "mc_recon", c.tc.mc_recon);
  c.train_resume = get_field<std::string>(root, "train", "resume", "");
  c.tc.seed = c.seed;
  c.tc.n_train = c.n_train;

  c.eval_checkpoint = get_field<std::string>(root, "eval", "checkpoint", "");
  c.iwae_k = get_field<int>(root, "eval", "iwae_k", c.iwae_k);

  c.gap_checkpoint = get_field<std::string>(root, "gap", "checkpoint", "");
  c.gap.svi_steps = get_field<int>(root, "gap", "svi_steps", c.gap.svi_steps);
  c.gap.svi_step_size =
      get_field<double>(root, "gap", "svi_step_size", c.gap.svi_step_size);
  c.gap.svi_decay_t0 =
      get_field<double>(root, "gap", "svi_decay_t0", c.gap.svi_decay_t0);
  c.gap.eval_samples =
      get_field<int>(root, "gap", "eval_samples", c.gap.eval_samples);
  c.gap.max_instances =
      get_field<int>(root, "gap", "max_instances", c.gap.max_instances);

  c.unc_checkpoint =
      get_field<std::string>(root, "uncertainty", "checkpoint", "");
  c.unc_max_instances =
      get_field<int>(root, "uncertainty", "max_instances", c.unc_max_instances);
  c.grid.res = get_field<int>(root, "uncertainty", "grid_res", c.grid.res);
  const double lo = get_field<double>(root, "uncertainty", "grid_lo", -6.0);
  const double hi = get_field<double>(root, "uncertainty", "grid_hi", 6.0);
  c.grid.z1_lo = c.grid.z2_lo = lo;
  c.grid.z1_hi = c.grid.z2_hi = hi;
  c.export_grids =
      get_field<int>(root, "uncertainty", "export_grids", c.export_grids);

  c.bench_checkpoint = get_field<std::string>(root, "bench", "checkpoint", "");
  c.bench_batch = get_field<int>(root, "bench", "batch", c.bench_batch);
  c.bench_reps = get_field<int>(root, "bench", "reps", c.bench_reps);
  if (root.contains("bench") && root.at("bench").contains("sa_steps")) {
    const json& arr = root.at("bench").at("sa_steps");
    if (!arr.is_array()) {
      throw std::invalid_argument(
          "config field bench.sa_steps: expected array of integers");
    }
    c.sa_steps.clear();
    for (const auto& v : arr) {
      if (!v.is_number_integer()) {
        throw std::invalid_argument(
            "config field bench.sa_steps: expected array of integers");
      }
      c.sa_steps.push_back(v.get<int>());
    }
  }
  return c;
}

json resolved_json(const RunConfig& c) {
  json sa = json::array();
  for (int k : c.sa_steps) sa.push_back(k);
  return json{
      {"out_dir", c.out_dir},
      {"seed", c.seed},
      {"dataset",
       {{"kind", c.ds_kind},
        {"images", c.ds_images},
        {"labels", c.ds_labels},
        {"n_train", c.n_train},
        {"n_val", c.n_val},
        {"n_test", c.n_test}}},
      {"model",
       {{"mode", to_string(c.tc.mode)},
        {"d", c.tc.d},
        {"p", c.tc.p},
        {"h", c.tc.h},
        {"sigma_x2", c.tc.sigma_x2},
        {"lambda_chol_init", c.tc.lambda_chol_init},
        {"freeze_lambda", c.tc.freeze_lambda}}},
      {"train",
       {{"batch", c.tc.batch},
        {"lr", c.tc.lr},
        {"epochs", c.tc.epochs},
        {"mc_sqlog", c.tc.mc_sqlog},
        {"mc_recon", c.tc.mc_recon},
        {"resume", c.train_resume}}},
      {"eval", {{"checkpoint", c.eval_checkpoint}, {"iwae_k", c.iwae_k}}},
      {"gap",
       {{"checkpoint", c.gap_checkpoint},
        {"svi_steps", c.gap.svi_steps},
        {"svi_step_size", c.gap.svi_step_size},
        {"svi_decay_t0", c.gap.svi_decay_t0},
        {"eval_samples", c.gap.eval_samples},
        {"max_instances", c.gap.max_instances}}},
      {"uncertainty",
       {{"checkpoint", c.unc_checkpoint},
        {"max_instances", c.unc_max_instances},
        {"grid_res", c.grid.res},
        {"grid_lo", c.grid.z1_lo},
        {"grid_hi", c.grid.z1_hi},
        {"export_grids", c.export_grids}}},
      {"bench",
       {{"checkpoint", c.bench_checkpoint},
        {"batch", c.bench_batch},
        {"reps", c.bench_reps},
        {"sa_steps", sa}}}};
}

Dataset make_dataset(const RunConfig& c) {
  Dataset ds;
  if (c.ds_kind == "mnist") {
    if (c.ds_images.empty()) {
      throw std::invalid_argument(
          "config field dataset.images: required for kind \"mnist\"");
    }
    ds = load_idx(c.ds_images, c.ds_labels);
  } else {
    ds = gen_synthetic(c.ds_kind, c.n_train + c.n_val + c.n_test, c.seed);
  }
  split_dataset(ds, c.n_train, c.n_val, c.n_test, c.seed);
  return ds;
}

void write_resolved_config(const RunConfig& c) {
  fs::create_directories(c.out_dir);
  std::ofstream out(fs::path(c.out_dir) / "config.json");
  out << resolved_json(c).dump(2) << "\n";
  if (!out) {
    throw std::runtime_error("cannot write resolved config in " + c.out_dir);
  }
}

std::string resolve_checkpoint(const RunConfig& c, const std::string& explicit_path) {
  if (!explicit_path.empty()) {
    if (!fs::exists(explicit_path)) {
      throw std::runtime_error("missing checkpoint: " + explicit_path);
    }
    return explicit_path;
  }
  const fs::path best = fs::path(c.out_dir) / "best.ckpt";
  if (fs::exists(best)) return best.string();
  const fs::path last = fs::path(c.out_dir) / "last.ckpt";
  if (fs::exists(last)) return last.string();
  throw std::runtime_error("missing checkpoint: no path configured and neither " +
                           best.string() + " nor " + last.string() + " exists");
}

std::FILE* open_csv(const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (f == nullptr) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return f;
}

int cmd_train(const RunConfig& c) {
  const Dataset ds = make_dataset(c);
  write_resolved_config(c);
  TrainPaths paths;
  paths.run_log = (fs::path(c.out_dir) / "run_log.csv").string();
  paths.last_ckpt = (fs::path(c.out_dir) / "last.ckpt").string();
  paths.best_ckpt = (fs::path(c.out_dir) / "best.ckpt").string();
  paths.resume = c.train_resume;
  const TrainResult res = train(ds.train(), ds.val(), c.tc, paths);
  std::printf("trained %s model: %d epochs, best val elbo %.4f\n",
              to_string(res.state.cfg.mode).c_str(), res.state.epoch,
              res.state.best_val_elbo);
  std::printf("artifacts: %s\n", c.out_dir.c_str());
  return 0;
}

int cmd_eval(const RunConfig& c) {
  const Dataset ds = make_dataset(c);
  write_resolved_config(c);
  const TrainState state =
      checkpoint_load(resolve_checkpoint(c, c.eval_checkpoint));
  const Mat test = ds.test();
  const RngStream root = RngStream(c.seed).split(rngkey::kEval);

  std::FILE* f = open_csv(fs::path(c.out_dir) / "eval_iwae.csv");
  std::fprintf(f, "batch,n,mean_iwae\n");
  double total = 0.0;
  int batch_index = 0;
  for (Eigen::Index i0 = 0; i0 < test.rows(); i0 += c.tc.batch, ++batch_index) {
    const Eigen::Index nb = std::min<Eigen::Index>(c.tc.batch, test.rows() - i0);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nb; ++i) {
      const Vec x = test.row(i0 + i).transpose();
      RngStream rng = root.split(static_cast<std::uint64_t>(i0 + i));
      acc += iwae(x, state.encode(x).gaussian(), state.dec, c.iwae_k, rng);
    }
    total += acc;
    std::fprintf(f, "%d,%lld,%.17g\n", batch_index,
                 static_cast<long long>(nb), acc / static_cast<double>(nb));
  }
  std::fclose(f);
  std::printf("mean IWAE-%d over %lld test instances: %.4f\n", c.iwae_k,
              static_cast<long long>(test.rows()),
              total / static_cast<double>(test.rows()));
  return 0;
}

int cmd_gap(const RunConfig& c) {
  const Dataset ds = make_dataset(c);
  write_resolved_config(c);
  const TrainState state =
      checkpoint_load(resolve_checkpoint(c, c.gap_checkpoint));
  const Mat test = ds.test();

  std::function<InstanceVarParams(const Vec&)> encoder;
  if (state.cfg.mode == Mode::kGpvae) {
    encoder = [&state](const Vec& x) {
      return instance_params_from(state.encode(x).gaussian());
    };
  } else {
    encoder = [&state](const Vec& x) {
      return instance_params_from(vae_encoder(x, state.nets));
    };
  }
  const auto rows = amortization_gap(test, encoder, state.dec, c.gap,
                                     RngStream(c.seed).split(rngkey::kGapEval));

  std::FILE* f = open_csv(fs::path(c.out_dir) / "gap.csv");
  std::fprintf(f, "instance,elbo_amortized,elbo_svi,gap\n");
  double mean_gap = 0.0;
  for (const auto& r : rows) {
    std::fprintf(f, "%d,%.17g,%.17g,%.17g\n", r.instance, r.elbo_amortized,
                 r.elbo_svi, r.gap);
    mean_gap += r.gap;
  }
  std::fclose(f);
  mean_gap /= static_cast<double>(rows.size());
  std::printf("mean amortization gap over %zu instances: %.6f\n", rows.size(),
              mean_gap);
  return 0;
}

int cmd_uncertainty(const RunConfig& c) {
  const Dataset ds = make_dataset(c);
  write_resolved_config(c);
  const TrainState state =
      checkpoint_load(resolve_checkpoint(c, c.unc_checkpoint));
  const Mat test = ds.test();
  const UncertaintyStudy study =
      uncertainty_study(state, test, c.grid, c.unc_max_instances);

  std::FILE* f = open_csv(fs::path(c.out_dir) / "uncertainty.csv");
  std::fprintf(f,
               "instance,uncertainty,unc_mean_fn,unc_std_fn,non_gaussianity\n");
  for (const auto& r : study.rows) {
    std::fprintf(f, "%d,%.17g,%.17g,%.17g,%.17g\n", r.instance, r.uncertainty,
                 r.unc_mean_fn, r.unc_std_fn, r.non_gaussianity);
  }
  std::fclose(f);

  const int n_export =
      std::min<int>(c.export_grids, static_cast<int>(study.rows.size()));
  for (int i = 0; i < n_export; ++i) {
    const Grid2D grid =
        true_posterior_grid(test.row(i).transpose(), state.dec, c.grid);
    export_grid(grid,
                (fs::path(c.out_dir) / ("grid_" + std::to_string(i) + ".bin"))
                    .string());
  }

  std::ofstream summary(fs::path(c.out_dir) / "uncertainty_summary.json");
  summary << json{{"instances", study.rows.size()},
                  {"spearman", std::isnan(study.spearman)
                                   ? json()
                                   : json(study.spearman)}}
                 .dump(2)
          << "\n";
  if (std::isnan(study.spearman)) {
    std::printf("spearman(uncertainty, non-gaussianity): undefined "
                "(constant sequence)\n");
  } else {
    std::printf("spearman(uncertainty, non-gaussianity) over %zu instances: "
                "%.4f\n",
                study.rows.size(), study.spearman);
  }
  return 0;
}

int cmd_bench(const RunConfig& c) {
  const Dataset ds = make_dataset(c);
  write_resolved_config(c);
  TrainConfig tc = c.tc;
  tc.mode = Mode::kGpvae;
  const TrainState state =
      c.bench_checkpoint.empty()
          ? TrainState::init(tc, static_cast<int>(ds.inputs.cols()))
          : checkpoint_load(resolve_checkpoint(c, c.bench_checkpoint));
  const Mat test = ds.test();

  std::vector<BenchResult> results;
  results.push_back(bench_inference("vae", make_vae_inference(state), test,
                                    c.bench_batch, c.bench_reps));
  results.push_back(bench_inference("gpvae", make_gpvae_inference(state), test,
                                    c.bench_batch, c.bench_reps));
  for (int k : c.sa_steps) {
    results.push_back(bench_inference("sa" + std::to_string(k),
                                      make_sa_inference(state, k), test,
                                      c.bench_batch, c.bench_reps));
  }

  std::FILE* f = open_csv(fs::path(c.out_dir) / "bench.csv");
  std::fprintf(f, "method,rep,per_batch_ms\n");
  for (const auto& r : results) {
    for (std::size_t rep = 0; rep < r.per_rep_ms.size(); ++rep) {
      std::fprintf(f, "%s,%zu,%.4f\n", r.method.c_str(), rep,
                   r.per_rep_ms[rep]);
    }
    std::fprintf(f, "%s,mean,%.4f\n", r.method.c_str(), r.mean_ms);
    std::printf("%-8s %8.3f ms/batch (batch %d, %d reps)\n", r.method.c_str(),
                r.mean_ms, c.bench_batch, c.bench_reps);
  }
  std::fclose(f);
  return 0;
}

}  // namespace

int run_command(const std::string& command, const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "error: cannot open config " << config_path << "\n";
    return 1;
  }
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    std::cerr << "error: config " << config_path << " is not valid JSON: "
              << e.what() << "\n";
    return 1;
  }
  try {
    const RunConfig c = parse_config(root);
    if (command == "train") return cmd_train(c);
    if (command == "eval") return cmd_eval(c);
    if (command == "gap") return cmd_gap(c);
    if (command == "uncertainty") return cmd_uncertainty(c);
    if (command == "bench") return cmd_bench(c);
    std::cerr << "error: unknown command \"" << command << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace gpvae::cli
