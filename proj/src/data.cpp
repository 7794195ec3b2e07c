#include "gpvae/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace gpvae {

namespace {

std::uint32_t read_be32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("load_idx: cannot open " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> buf(static_cast<std::size_t>(size));
  if (!in.read(reinterpret_cast<char*>(buf.data()), size)) {
    throw std::runtime_error("load_idx: read failed for " + path);
  }
  return buf;
}

std::string hex32(std::uint32_t v) {
  char s[11];
  std::snprintf(s, sizeof s, "0x%08x", v);
  return s;
}

}  // namespace

Mat Dataset::rows(const std::vector<int>& idx) const {
  Mat out(static_cast<Eigen::Index>(idx.size()), inputs.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = inputs.row(idx[i]);
  }
  return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto buf = read_file(images_path);
  if (buf.size() < 16) {
    throw std::runtime_error("load_idx: " + images_path +
                             " too short for an IDX image header");
  }
  const std::uint32_t magic = read_be32(buf.data());
  if (magic != 0x00000803u) {
    throw std::runtime_error("load_idx: " + images_path +
                             " has magic " + hex32(magic) +
                             ", expected 0x00000803 (ubyte images, 3 dims)");
  }
  const std::uint32_t n = read_be32(buf.data() + 4);
  const std::uint32_t rows = read_be32(buf.data() + 8);
  const std::uint32_t cols = read_be32(buf.data() + 12);
  const std::size_t expect = 16 + static_cast<std::size_t>(n) * rows * cols;
  if (buf.size() != expect) {
    throw std::runtime_error("load_idx: " + images_path + " has " +
                             std::to_string(buf.size()) + " bytes, expected " +
                             std::to_string(expect));
  }
  Dataset ds;
  ds.name = images_path;
  ds.inputs.resize(n, static_cast<Eigen::Index>(rows) * cols);
  const unsigned char* px = buf.data() + 16;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t k = 0; k < rows * cols; ++k) {
      ds.inputs(i, k) = static_cast<double>(px[static_cast<std::size_t>(i) *
                                                   rows * cols +
                                               k]) /
                        255.0;
    }
  }

  if (!labels_path.empty()) {
    const auto lbuf = read_file(labels_path);
    if (lbuf.size() < 8) {
      throw std::runtime_error("load_idx: " + labels_path +
                               " too short for an IDX label header");
    }
    const std::uint32_t lmagic = read_be32(lbuf.data());
    if (lmagic != 0x00000801u) {
      throw std::runtime_error("load_idx: " + labels_path + " has magic " +
                               hex32(lmagic) +
                               ", expected 0x00000801 (ubyte labels, 1 dim)");
    }
    const std::uint32_t ln = read_be32(lbuf.data() + 4);
    if (ln != n) {
      throw std::runtime_error("load_idx: label count " + std::to_string(ln) +
                               " != image count " + std::to_string(n));
    }
    if (lbuf.size() != 8 + static_cast<std::size_t>(ln)) {
      throw std::runtime_error("load_idx: " + labels_path + " has " +
                               std::to_string(lbuf.size()) +
                               " bytes, expected " + std::to_string(8 + ln));
    }
    ds.labels.assign(lbuf.begin() + 8, lbuf.end());
  }
  return ds;
}

void write_idx_images(const std::string& path, const Mat& images, int rows,
                      int cols) {
  if (images.cols() != static_cast<Eigen::Index>(rows) * cols) {
    throw std::invalid_argument("write_idx_images: rows*cols != image width");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_idx_images: cannot open " + path);
  write_be32(out, 0x00000803u);
  write_be32(out, static_cast<std::uint32_t>(images.rows()));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    for (Eigen::Index k = 0; k < images.cols(); ++k) {
      const double v = std::clamp(images(i, k), 0.0, 1.0);
      const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
      out.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  if (!out) throw std::runtime_error("write_idx_images: write failed");
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_idx_labels: cannot open " + path);
  write_be32(out, 0x00000801u);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    const unsigned char b = static_cast<unsigned char>(l);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw std::runtime_error("write_idx_labels: write failed");
}

namespace {

Dataset gen_gaussian_mixture(int n, std::uint64_t seed) {
  Dataset ds;
  ds.name = "gaussian-mixture";
  ds.inputs.resize(n, 2);
  ds.labels.resize(static_cast<std::size_t>(n));
  RngStream rng = RngStream(seed).split(rngkey::kData);
  for (int i = 0; i < n; ++i) {
    const bool second = rng.uniform() >= kGmWeight;
    const double* mu = second ? kGmMeanB : kGmMeanA;
    for (int k = 0; k < 2; ++k) {
      ds.inputs(i, k) = std::clamp(mu[k] + kGmStd * rng.normal(), 0.0, 1.0);
    }
    ds.labels[static_cast<std::size_t>(i)] = second ? 1 : 0;
  }
  return ds;
}

Dataset gen_pinwheel(int n, std::uint64_t seed) {
  constexpr int kArms = 5;
  constexpr double kRadialStd = 0.25;
  constexpr double kTangStd = 0.05;
  constexpr double kTwist = 0.35;
  Dataset ds;
  ds.name = "pinwheel";
  ds.inputs.resize(n, 2);
  ds.labels.resize(static_cast<std::size_t>(n));
  RngStream rng = RngStream(seed).split(rngkey::kData);
  for (int i = 0; i < n; ++i) {
    const int arm = static_cast<int>(rng.next_below(kArms));
    const double r = 1.0 + kRadialStd * rng.normal();
    const double tang = kTangStd * rng.normal();
    const double angle =
        2.0 * std::numbers::pi * arm / kArms + kTwist * r * r;
    const double x0 = r * std::cos(angle) - tang * std::sin(angle);
    const double x1 = r * std::sin(angle) + tang * std::cos(angle);
    ds.inputs(i, 0) = std::clamp(x0 / 4.0 + 0.5, 0.0, 1.0);
    ds.inputs(i, 1) = std::clamp(x1 / 4.0 + 0.5, 0.0, 1.0);
    ds.labels[static_cast<std::size_t>(i)] = arm;
  }
  return ds;
}

// Stroke templates in unit coordinates (x right, y down), one or more
// polylines per digit class.
using Stroke = std::vector<std::array<double, 2>>;

std::vector<Stroke> digit_strokes(int digit) {
  auto circle = [](double cx, double cy, double rx, double ry, double a0,
                   double a1, int seg) {
    Stroke s;
    for (int i = 0; i <= seg; ++i) {
      const double a = a0 + (a1 - a0) * i / seg;
      s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
    return s;
  };
  const double pi = std::numbers::pi;
  switch (digit) {
    case 0:
      return {circle(0.5, 0.5, 0.22, 0.32, 0, 2 * pi, 24)};
    case 1:
      return {{{0.38, 0.32}, {0.52, 0.2}, {0.52, 0.8}}};
    case 2:
      return {circle(0.5, 0.36, 0.2, 0.16, -pi, 0.25 * pi, 12),
              {{0.64, 0.45}, {0.33, 0.8}, {0.7, 0.8}}};
    case 3:
      return {circle(0.48, 0.35, 0.18, 0.15, -0.75 * pi, 0.5 * pi, 12),
              circle(0.48, 0.65, 0.2, 0.15, -0.5 * pi, 0.75 * pi, 12)};
    case 4:
      return {{{0.58, 0.8}, {0.58, 0.2}, {0.3, 0.62}, {0.72, 0.62}}};
    case 5:
      return {{{0.66, 0.22}, {0.36, 0.22}, {0.34, 0.48}},
              circle(0.49, 0.62, 0.19, 0.17, -0.6 * pi, 0.7 * pi, 14)};
    case 6:
      return {{{0.6, 0.2}, {0.38, 0.5}, {0.34, 0.66}},
              circle(0.5, 0.64, 0.17, 0.15, -pi, pi, 16)};
    case 7:
      return {{{0.32, 0.22}, {0.7, 0.22}, {0.44, 0.8}}};
    case 8:
      return {circle(0.5, 0.35, 0.16, 0.14, 0, 2 * pi, 16),
              circle(0.5, 0.66, 0.19, 0.16, 0, 2 * pi, 16)};
    case 9:
      return {circle(0.52, 0.38, 0.17, 0.15, 0, 2 * pi, 16),
              {{0.69, 0.38}, {0.66, 0.62}, {0.56, 0.8}}};
    default:
      throw std::invalid_argument("digit_strokes: digit out of range");
  }
}

void render_strokes(const std::vector<Stroke>& strokes, double thickness,
                    double intensity,
                    Eigen::Ref<Eigen::RowVectorXd, 0,
                               Eigen::InnerStride<Eigen::Dynamic>>
                        out,
                    int side) {
  const double aa = 0.8 / side;  // antialias band
  for (const Stroke& stroke : strokes) {
    for (std::size_t s = 0; s + 1 < stroke.size(); ++s) {
      const double ax = stroke[s][0], ay = stroke[s][1];
      const double bx = stroke[s + 1][0], by = stroke[s + 1][1];
      const double pad = thickness + aa;
      const int px0 = std::max(0, static_cast<int>(std::floor(
                                      (std::min(ax, bx) - pad) * side)));
      const int px1 = std::min(side - 1, static_cast<int>(std::ceil(
                                             (std::max(ax, bx) + pad) * side)));
      const int py0 = std::max(0, static_cast<int>(std::floor(
                                      (std::min(ay, by) - pad) * side)));
      const int py1 = std::min(side - 1, static_cast<int>(std::ceil(
                                             (std::max(ay, by) + pad) * side)));
      const double vx = bx - ax, vy = by - ay;
      const double vv = vx * vx + vy * vy;
      for (int py = py0; py <= py1; ++py) {
        for (int px = px0; px <= px1; ++px) {
          const double cx = (px + 0.5) / side;
          const double cy = (py + 0.5) / side;
          double t = vv > 0.0 ? ((cx - ax) * vx + (cy - ay) * vy) / vv : 0.0;
          t = std::clamp(t, 0.0, 1.0);
          const double dx = cx - (ax + t * vx);
          const double dy = cy - (ay + t * vy);
          const double dist = std::sqrt(dx * dx + dy * dy);
          const double v =
              intensity * std::clamp((thickness - dist) / aa + 1.0, 0.0, 1.0);
          double& pixel = out[py * side + px];
          pixel = std::max(pixel, v);
        }
      }
    }
  }
}

Dataset gen_digits(int n, std::uint64_t seed) {
  constexpr int kSide = 28;
  Dataset ds;
  ds.name = "digits";
  ds.inputs = Mat::Zero(n, kSide * kSide);
  ds.labels.resize(static_cast<std::size_t>(n));
  // Digits that plausibly morph into each other under sloppy writing.
  constexpr int kConfusable[10][2] = {{8, 6}, {7, 4}, {3, 7}, {8, 9}, {9, 1},
                                      {6, 3}, {5, 0}, {1, 9}, {3, 0}, {4, 8}};
  RngStream rng = RngStream(seed).split(rngkey::kData);
  for (int i = 0; i < n; ++i) {
    const int digit = static_cast<int>(rng.next_below(10));
    ds.labels[static_cast<std::size_t>(i)] = digit;
    std::vector<Stroke> strokes = digit_strokes(digit);

    // Ambiguity spectrum: most samples are clean single digits; the skewed
    // blend weight superimposes a confusable digit's strokes, producing
    // scrawls readable as either class, like the hard cases in real
    // handwriting.
    const double u_blend = rng.uniform();
    const double blend = u_blend * u_blend;
    const int other =
        kConfusable[digit][static_cast<int>(rng.next_below(2))];
    const std::size_t n_primary = strokes.size();
    if (blend > 0.05) {
      for (Stroke& s : digit_strokes(other)) strokes.push_back(std::move(s));
    }

    const double rot = 0.12 * rng.normal();
    const double sx = 0.95 + 0.12 * (rng.uniform() - 0.5) * 2.0;
    const double sy = 0.95 + 0.12 * (rng.uniform() - 0.5) * 2.0;
    const double shear = 0.08 * rng.normal();
    const double tx = 0.1 * (rng.uniform() - 0.5);
    const double ty = 0.1 * (rng.uniform() - 0.5);
    const double wave = 0.015 + 0.02 * rng.uniform();
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (Stroke& stroke : strokes) {
      for (auto& pt : stroke) {
        double x = pt[0] - 0.5 + wave * rng.normal();
        double y = pt[1] - 0.5 + wave * rng.normal();
        x = sx * x + shear * y;
        y = sy * y;
        const double xr = cr * x - sr * y;
        const double yr = sr * x + cr * y;
        pt[0] = xr + 0.5 + tx;
        pt[1] = yr + 0.5 + ty;
      }
    }
    const double thickness = 0.035 + 0.015 * rng.uniform();
    const double intensity = 0.95 + 0.05 * rng.uniform();
    // primary digit at full intensity, the confusable ghost scaled by blend
    const std::vector<Stroke> primary(strokes.begin(),
                                      strokes.begin() + n_primary);
    const std::vector<Stroke> ghost(strokes.begin() + n_primary, strokes.end());
    render_strokes(primary, thickness, intensity, ds.inputs.row(i), kSide);
    if (!ghost.empty()) {
      render_strokes(ghost, thickness, intensity * blend, ds.inputs.row(i),
                     kSide);
    }
  }
  return ds;
}

}  // namespace

Dataset gen_synthetic(const std::string& kind, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_synthetic: n must be >= 1");
  if (kind == "gaussian-mixture") return gen_gaussian_mixture(n, seed);
  if (kind == "pinwheel") return gen_pinwheel(n, seed);
  if (kind == "digits") return gen_digits(n, seed);
  throw std::invalid_argument(
      "gen_synthetic: unknown kind \"" + kind +
      "\" (gaussian-mixture|pinwheel|digits)");
}

double gaussian_mixture_log_marginal(const Vec& x) {
  if (x.size() != 2) {
    throw std::invalid_argument("gaussian_mixture_log_marginal: x must be 2-D");
  }
  auto comp = [&](const double* mu) {
    const double dx = x[0] - mu[0];
    const double dy = x[1] - mu[1];
    return -std::log(2.0 * std::numbers::pi * kGmStd * kGmStd) -
           (dx * dx + dy * dy) / (2.0 * kGmStd * kGmStd);
  };
  Vec lw(2);
  lw[0] = std::log(kGmWeight) + comp(kGmMeanA);
  lw[1] = std::log(1.0 - kGmWeight) + comp(kGmMeanB);
  return log_sum_exp(lw);
}

void split_dataset(Dataset& ds, int n_train, int n_val, int n_test,
                   std::uint64_t seed) {
  const Eigen::Index n = ds.inputs.rows();
  if (n_train < 0 || n_val < 0 || n_test < 0 ||
      n_train + n_val + n_test > n) {
    throw std::invalid_argument("split_dataset: split sizes exceed dataset (" +
                                std::to_string(n) + " rows)");
  }
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  RngStream rng = RngStream(seed).split(rngkey::kData).split(1);
  rng.shuffle(idx);
  ds.train_idx.assign(idx.begin(), idx.begin() + n_train);
  ds.val_idx.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  ds.test_idx.assign(idx.begin() + n_train + n_val,
                     idx.begin() + n_train + n_val + n_test);
}

}  // namespace gpvae
