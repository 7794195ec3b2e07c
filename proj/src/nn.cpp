#include "gpvae/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gpvae {

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  if (spec_.widths.size() < 2) {
    throw std::invalid_argument("Mlp: need at least input and output widths");
  }
  for (int w : spec_.widths) {
    if (w < 1) throw std::invalid_argument("Mlp: widths must be positive");
  }
  Eigen::Index off = 0;
  for (int l = 0; l < n_layers(); ++l) {
    const Eigen::Index in = spec_.widths[l];
    const Eigen::Index out = spec_.widths[l + 1];
    w_offset_.push_back(off);
    off += in * out;
    b_offset_.push_back(off);
    off += out;
  }
  params_ = Vec::Zero(off);
}

Eigen::Map<Mat> Mlp::weight(int layer) {
  return {params_.data() + w_offset_[layer], spec_.widths[layer + 1],
          spec_.widths[layer]};
}

Eigen::Map<const Mat> Mlp::weight(int layer) const {
  return {params_.data() + w_offset_[layer], spec_.widths[layer + 1],
          spec_.widths[layer]};
}

Eigen::Map<Vec> Mlp::bias(int layer) {
  return {params_.data() + b_offset_[layer], spec_.widths[layer + 1]};
}

Eigen::Map<const Vec> Mlp::bias(int layer) const {
  return {params_.data() + b_offset_[layer], spec_.widths[layer + 1]};
}

void Mlp::init_params(RngStream rng) {
  for (int l = 0; l < n_layers(); ++l) {
    auto w = weight(l);
    const double sd = std::sqrt(2.0 / static_cast<double>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        w(i, j) = sd * rng.normal();
      }
    }
    bias(l).setZero();
  }
}

Vec Mlp::forward(const Vec& x) const {
  if (x.size() != input_dim()) {
    throw std::invalid_argument("Mlp::forward: input length " +
                                std::to_string(x.size()) + " != width " +
                                std::to_string(input_dim()));
  }
  Vec a = x;
  for (int l = 0; l < n_layers(); ++l) {
    Vec y = weight(l) * a + bias(l);
    const Activation act = layer_activation(l);
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = activate(act, y[i]);
    a = std::move(y);
  }
  return a;
}

Mat Mlp::forward_batch(const Mat& x) const {
  Cache cache;
  return forward_batch(x, cache);
}

Mat Mlp::forward_batch(const Mat& x, Cache& cache) const {
  if (x.cols() != input_dim()) {
    throw std::invalid_argument("Mlp::forward_batch: input width " +
                                std::to_string(x.cols()) + " != width " +
                                std::to_string(input_dim()));
  }
  cache.input = x;
  cache.pre.assign(n_layers(), Mat());
  cache.post.assign(n_layers(), Mat());
  const Mat* a = &cache.input;
  for (int l = 0; l < n_layers(); ++l) {
    cache.pre[l] = (*a * weight(l).transpose()).rowwise() + bias(l).transpose();
    const Activation act = layer_activation(l);
    cache.post[l] = cache.pre[l].unaryExpr(
        [act](double t) { return activate(act, t); });
    a = &cache.post[l];
  }
  return cache.post.back();
}

Mat Mlp::backward_batch(const Cache& cache, const Mat& d_out, Vec& grad) const {
  if (grad.size() != n_params()) {
    throw std::invalid_argument("Mlp::backward_batch: gradient buffer size");
  }
  Mat d = d_out;
  for (int l = n_layers() - 1; l >= 0; --l) {
    const Activation act = layer_activation(l);
    d.array() *= cache.pre[l]
                     .unaryExpr([act](double t) { return activate_deriv(act, t); })
                     .array();
    const Mat& a_prev = l == 0 ? cache.input : cache.post[l - 1];
    Eigen::Map<Mat> dw(grad.data() + w_offset_[l], spec_.widths[l + 1],
                       spec_.widths[l]);
    dw.noalias() += d.transpose() * a_prev;
    Eigen::Map<Vec> db(grad.data() + b_offset_[l], spec_.widths[l + 1]);
    db.noalias() += d.colwise().sum().transpose();
    if (l > 0) d = d * weight(l);
  }
  return d * weight(0);
}

Mat Mlp::backward_input(const Cache& cache, const Mat& d_out) const {
  Mat d = d_out;
  for (int l = n_layers() - 1; l >= 0; --l) {
    const Activation act = layer_activation(l);
    d.array() *= cache.pre[l]
                     .unaryExpr([act](double t) { return activate_deriv(act, t); })
                     .array();
    d = d * weight(l);
  }
  return d;
}

void AdamState::step(Vec& params, const Vec& grad) {
  if (params.size() != m.size() || grad.size() != m.size()) {
    throw std::invalid_argument("AdamState::step: vector length mismatch");
  }
  if (!grad.allFinite()) {
    throw std::runtime_error("AdamState::step: non-finite gradient, step refused");
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -=
      lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace gpvae
