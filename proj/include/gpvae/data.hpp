#pragma once

#include <string>
#include <vector>

#include "gpvae/prob.hpp"
#include "gpvae/rng.hpp"

namespace gpvae {

/// N x D inputs in [0,1] plus optional labels and disjoint split indices.
struct Dataset {
  Mat inputs;
  std::vector<int> labels;  // empty when the source has none
  std::string name;
  std::vector<int> train_idx, val_idx, test_idx;

  Mat rows(const std::vector<int>& idx) const;
  Mat train() const { return rows(train_idx); }
  Mat val() const { return rows(val_idx); }
  Mat test() const { return rows(test_idx); }
};

/// IDX ingestion (big-endian magic 0x00000803 images / 0x00000801 labels,
/// unsigned byte payload); pixels scaled by 1/255.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path = "");

/// IDX writers for synthetic corpora and tests. Values are clamped to [0,1]
/// and quantized to bytes.
void write_idx_images(const std::string& path, const Mat& images, int rows,
                      int cols);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

/// Deterministic synthetic datasets:
///  - "gaussian-mixture": 2-D, two isotropic components (see the
///    gaussian_mixture_* constants); exposes its true log-marginal.
///  - "pinwheel": 2-D, five twisted arms mapped into [0,1]^2.
///  - "digits": 28x28 stroke-rendered digit images, 10 classes.
Dataset gen_synthetic(const std::string& kind, int n, std::uint64_t seed);

inline constexpr double kGmWeight = 0.5;
inline constexpr double kGmMeanA[2] = {0.3, 0.3};
inline constexpr double kGmMeanB[2] = {0.7, 0.7};
inline constexpr double kGmStd = 0.05;

/// True log-marginal of the "gaussian-mixture" generator (ignoring the
/// negligible [0,1] clamp mass).
double gaussian_mixture_log_marginal(const Vec& x);

/// Deterministic disjoint splits; counts must not exceed the dataset size.
void split_dataset(Dataset& ds, int n_train, int n_val, int n_test,
                   std::uint64_t seed);

}  // namespace gpvae
