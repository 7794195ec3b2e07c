#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "gpvae/prob.hpp"
#include "gpvae/rng.hpp"

namespace gpvae {

enum class Activation { kLeakyRelu, kRelu, kIdentity };

inline constexpr double kLeakySlope = 0.01;

struct MlpSpec {
  std::vector<int> widths;  // [in, hidden..., out]
  Activation hidden = Activation::kLeakyRelu;
  Activation output = Activation::kIdentity;
};

/// Fully connected net over a flat parameter vector, with reverse-mode
/// gradients. Layer l maps widths[l] -> widths[l+1]; parameters are laid out
/// as [W_0 (col-major), b_0, W_1, b_1, ...].
class Mlp {
 public:
  explicit Mlp(MlpSpec spec);

  int input_dim() const { return spec_.widths.front(); }
  int output_dim() const { return spec_.widths.back(); }
  int n_layers() const { return static_cast<int>(spec_.widths.size()) - 1; }
  Eigen::Index n_params() const { return params_.size(); }
  const MlpSpec& spec() const { return spec_; }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Eigen::Map<Mat> weight(int layer);
  Eigen::Map<const Mat> weight(int layer) const;
  Eigen::Map<Vec> bias(int layer);
  Eigen::Map<const Vec> bias(int layer) const;

  /// Weights ~ N(0, 2/fan_in), biases 0.
  void init_params(RngStream rng);

  Vec forward(const Vec& x) const;

  /// Rows are instances.
  Mat forward_batch(const Mat& x) const;

  struct Cache {
    Mat input;
    std::vector<Mat> pre;   // pre-activation per layer
    std::vector<Mat> post;  // activated output per layer
  };

  Mat forward_batch(const Mat& x, Cache& cache) const;

  /// Backpropagates d_out (B x out). Adds parameter gradients into `grad`
  /// (length n_params) and returns d_input (B x in).
  Mat backward_batch(const Cache& cache, const Mat& d_out, Vec& grad) const;

  /// Input gradient only; skips the parameter-gradient outer products.
  Mat backward_input(const Cache& cache, const Mat& d_out) const;

 private:
  Activation layer_activation(int layer) const {
    return layer + 1 == n_layers() ? spec_.output : spec_.hidden;
  }

  MlpSpec spec_;
  std::vector<Eigen::Index> w_offset_;
  std::vector<Eigen::Index> b_offset_;
  Vec params_;
};

inline double activate(Activation a, double t) {
  switch (a) {
    case Activation::kLeakyRelu:
      return t >= 0.0 ? t : kLeakySlope * t;
    case Activation::kRelu:
      return t >= 0.0 ? t : 0.0;
    case Activation::kIdentity:
      return t;
  }
  return t;
}

/// Subgradient at the kink taken from the positive side.
inline double activate_deriv(Activation a, double t) {
  switch (a) {
    case Activation::kLeakyRelu:
      return t >= 0.0 ? 1.0 : kLeakySlope;
    case Activation::kRelu:
      return t >= 0.0 ? 1.0 : 0.0;
    case Activation::kIdentity:
      return 1.0;
  }
  return 1.0;
}

/// Adam with bias correction (descent; pass the gradient of the loss being
/// minimized). Refuses steps on non-finite gradients.
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  Vec m;
  Vec v;

  AdamState() = default;
  AdamState(Eigen::Index n, double learning_rate)
      : lr(learning_rate), m(Vec::Zero(n)), v(Vec::Zero(n)) {}

  void step(Vec& params, const Vec& grad);
};

}  // namespace gpvae
