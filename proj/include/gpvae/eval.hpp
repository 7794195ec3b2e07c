#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gpvae/baselines.hpp"
#include "gpvae/generative.hpp"
#include "gpvae/prob.hpp"
#include "gpvae/rng.hpp"
#include "gpvae/training.hpp"

namespace gpvae {

/// Importance-weighted estimate of log p(x):
/// log (1/K) sum_i p(x, z_i) / q(z_i | x), z_i ~ q, log-sum-exp stabilized.
double iwae(const Vec& x, const DiagGaussian& q, const Decoder& dec, int k,
            RngStream& rng);

struct GridSpec {
  double z1_lo = -6.0;
  double z1_hi = 6.0;
  double z2_lo = -6.0;
  double z2_hi = 6.0;
  int res = 200;
};

/// Log-density table over a 2-D latent grid; after normalization
/// sum exp(table) * cell_area() == 1 (within quadrature rounding).
struct Grid2D {
  GridSpec spec;
  Mat table;  // res x res; (i1, i2) at the cell-center of z1_i1, z2_i2

  double step1() const { return (spec.z1_hi - spec.z1_lo) / spec.res; }
  double step2() const { return (spec.z2_hi - spec.z2_lo) / spec.res; }
  double cell_area() const { return step1() * step2(); }
  double z1(int i) const { return spec.z1_lo + (i + 0.5) * step1(); }
  double z2(int i) const { return spec.z2_lo + (i + 0.5) * step2(); }
};

/// Normalized log p(z|x) over the grid, for 2-D latent models.
Grid2D true_posterior_grid(const Vec& x, const Decoder& dec,
                           const GridSpec& spec);

/// KL( grid density || its moment-matched full-covariance Gaussian fit ),
/// by quadrature over the grid cells.
double non_gaussianity(const Grid2D& grid);

/// Spearman rank correlation (average ranks over ties). NaN when either
/// sequence is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct UncertaintyRow {
  int instance = 0;
  double uncertainty = 0.0;
  double unc_mean_fn = 0.0;
  double unc_std_fn = 0.0;
  double non_gaussianity = 0.0;
};

struct UncertaintyStudy {
  std::vector<UncertaintyRow> rows;
  double spearman = 0.0;  // NaN when undefined
};

/// Per-instance uncertainty gauge vs. grid-quadrature non-Gaussianity of the
/// true posterior, with their rank correlation. Requires a d=2 gpvae model.
UncertaintyStudy uncertainty_study(const TrainState& state, const Mat& testset,
                                   const GridSpec& spec, int max_instances = 0);

struct BenchResult {
  std::string method;
  std::vector<double> per_rep_ms;  // mean per-batch time of each repetition
  double mean_ms = 0.0;
};

/// Runs `process` over the testset in batches, `reps` times; reports the mean
/// per-batch wall time of each repetition and their average.
BenchResult bench_inference(const std::string& method,
                            const std::function<void(const Mat&)>& process,
                            const Mat& testset, int batch, int reps);

/// Inference passes for the benchmark, all batch-vectorized the same way.
std::function<void(const Mat&)> make_vae_inference(const TrainState& state);
std::function<void(const Mat&)> make_gpvae_inference(const TrainState& state);
std::function<void(const Mat&)> make_sa_inference(const TrainState& state,
                                                  int steps,
                                                  double step_size = 1e-3,
                                                  std::uint64_t noise_seed = 7);

/// Binary export: doubles z1_lo, z1_hi, z2_lo, z2_hi, res, then the table
/// row-major (z1 index outer).
void export_grid(const Grid2D& grid, const std::string& path);

}  // namespace gpvae
