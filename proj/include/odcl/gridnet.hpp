#pragma once

// Per-pixel student classifier with hand-written backprop.
//
// The same weights are applied independently to every pixel of a frame:
//   linear: z = W x + b
//   mlp:    z = W2 tanh(W1 x + b1) + b2
// Parameters live in one flat vector. Layout:
//   linear: W (C x F, row-major), b (C)
//   mlp:    W1 (H x F), b1 (H), W2 (C x H), b2 (C)

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "odcl/error.hpp"
#include "odcl/synthstream.hpp"

namespace odcl {

enum class Arch { linear, mlp };

struct ModelSpec {
  Arch arch = Arch::mlp;
  std::size_t feat_dim = 6;
  std::size_t hidden_dim = 32;
  std::size_t num_classes = 4;
  std::uint64_t init_seed = 1;
  double init_scale = 0.3;

  std::size_t param_count() const {
    if (arch == Arch::linear) return feat_dim * num_classes + num_classes;
    return feat_dim * hidden_dim + hidden_dim + hidden_dim * num_classes + num_classes;
  }
};

struct ParamVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const ParamVector&) const = default;
};

// Weights ~ N(0, init_scale^2), biases zero.
inline ParamVector init_params(const ModelSpec& spec) {
  std::mt19937_64 rng(spec.init_seed);
  std::normal_distribution<double> normal(0.0, spec.init_scale);
  ParamVector p{std::vector<double>(spec.param_count(), 0.0)};
  auto fill = [&](std::size_t from, std::size_t count) {
    for (std::size_t i = from; i < from + count; ++i) p.values[i] = normal(rng);
  };
  const std::size_t F = spec.feat_dim, C = spec.num_classes, H = spec.hidden_dim;
  if (spec.arch == Arch::linear) {
    fill(0, C * F);
  } else {
    fill(0, H * F);
    fill(H * F + H, C * H);
  }
  return p;
}

inline ParamVector snapshot(const ParamVector& theta) { return theta; }

inline void transfer(const ParamVector& src, ParamVector& dst) {
  if (src.size() != dst.size())
    throw ShapeMismatch("transfer: length " + std::to_string(src.size()) + " vs " + std::to_string(dst.size()));
  dst.values = src.values;
}

struct LogitGrid {
  std::size_t pixels = 0;
  std::size_t num_classes = 0;
  std::vector<double> logits;

  const double* pixel(std::size_t p) const { return logits.data() + p * num_classes; }
};

// One labeled frame, by reference into storage owned elsewhere.
struct Example {
  const Frame* frame = nullptr;
  const LabelGrid* labels = nullptr;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Additive loss term R with its gradient.
struct RegPenalty {
  double value = 0.0;
  std::vector<double> grad;
};

namespace detail {

inline void require_shapes(const ModelSpec& spec, const ParamVector& theta, const Frame& f) {
  if (theta.size() != spec.param_count())
    throw ShapeMismatch("params have length " + std::to_string(theta.size()) + ", model needs " +
                        std::to_string(spec.param_count()));
  if (f.feat_dim != spec.feat_dim)
    throw ShapeMismatch("frame feat_dim " + std::to_string(f.feat_dim) + " vs model " + std::to_string(spec.feat_dim));
}

// Runs the model on every pixel of `f`. For each pixel, `head(p, logits, dlogits)`
// returns that pixel's loss contribution and writes dloss/dlogits. When `grad`
// is non-empty the pixel gradient is backpropagated into it.
template <typename Head>
double per_pixel_backprop(const ModelSpec& spec, std::span<const double> theta, const Frame& f, Head&& head,
                          std::span<double> grad) {
  const std::size_t F = spec.feat_dim, C = spec.num_classes, H = spec.hidden_dim;
  const bool want_grad = !grad.empty();
  std::vector<double> z(C), dz(C), h, dh;
  if (spec.arch == Arch::mlp) {
    h.resize(H);
    dh.resize(H);
  }
  double total = 0.0;
  for (std::size_t p = 0; p < f.pixels(); ++p) {
    const double* x = f.pixel(p);
    if (spec.arch == Arch::linear) {
      const double* W = theta.data();
      const double* b = W + C * F;
      for (std::size_t c = 0; c < C; ++c) {
        double s = b[c];
        for (std::size_t k = 0; k < F; ++k) s += W[c * F + k] * x[k];
        z[c] = s;
      }
      total += head(p, std::span<const double>(z), std::span<double>(dz));
      if (!want_grad) continue;
      double* gW = grad.data();
      double* gb = gW + C * F;
      for (std::size_t c = 0; c < C; ++c) {
        if (dz[c] == 0.0) continue;
        for (std::size_t k = 0; k < F; ++k) gW[c * F + k] += dz[c] * x[k];
        gb[c] += dz[c];
      }
    } else {
      const double* W1 = theta.data();
      const double* b1 = W1 + H * F;
      const double* W2 = b1 + H;
      const double* b2 = W2 + C * H;
      for (std::size_t j = 0; j < H; ++j) {
        double s = b1[j];
        for (std::size_t k = 0; k < F; ++k) s += W1[j * F + k] * x[k];
        h[j] = std::tanh(s);
      }
      for (std::size_t c = 0; c < C; ++c) {
        double s = b2[c];
        for (std::size_t j = 0; j < H; ++j) s += W2[c * H + j] * h[j];
        z[c] = s;
      }
      total += head(p, std::span<const double>(z), std::span<double>(dz));
      if (!want_grad) continue;
      double* gW1 = grad.data();
      double* gb1 = gW1 + H * F;
      double* gW2 = gb1 + H;
      double* gb2 = gW2 + C * H;
      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t c = 0; c < C; ++c) {
        if (dz[c] == 0.0) continue;
        for (std::size_t j = 0; j < H; ++j) {
          gW2[c * H + j] += dz[c] * h[j];
          dh[j] += dz[c] * W2[c * H + j];
        }
        gb2[c] += dz[c];
      }
      for (std::size_t j = 0; j < H; ++j) {
        const double da = dh[j] * (1.0 - h[j] * h[j]);
        if (da == 0.0) continue;
        for (std::size_t k = 0; k < F; ++k) gW1[j * F + k] += da * x[k];
        gb1[j] += da;
      }
    }
  }
  return total;
}

// Cross-entropy of one pixel restricted to the classes where `allowed` is set
// (all classes when `allowed` is empty). Writes dCE/dz scaled by `weight`.
inline double masked_cross_entropy(std::span<const double> z, int label, std::span<const char> allowed, double weight,
                                   std::span<double> dz) {
  const std::size_t C = z.size();
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < C; ++c)
    if (allowed.empty() || allowed[c]) zmax = std::max(zmax, z[c]);
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    if (allowed.empty() || allowed[c]) sum += std::exp(z[c] - zmax);
  const double log_norm = zmax + std::log(sum);
  for (std::size_t c = 0; c < C; ++c) {
    if (!allowed.empty() && !allowed[c]) {
      dz[c] = 0.0;
      continue;
    }
    const double prob = std::exp(z[c] - log_norm);
    dz[c] = weight * (prob - (static_cast<int>(c) == label ? 1.0 : 0.0));
  }
  return weight * (log_norm - z[static_cast<std::size_t>(label)]);
}

inline void check_labels(const ModelSpec& spec, const Frame& f, const LabelGrid& y) {
  if (y.pixels() != f.pixels()) throw ShapeMismatch("label grid does not match frame");
  for (int l : y.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= spec.num_classes)
      throw ShapeMismatch("label " + std::to_string(l) + " outside [0, " + std::to_string(spec.num_classes) + ")");
}

}  // namespace detail

inline LogitGrid forward(const ModelSpec& spec, const ParamVector& theta, const Frame& f) {
  detail::require_shapes(spec, theta, f);
  LogitGrid out{f.pixels(), spec.num_classes, std::vector<double>(f.pixels() * spec.num_classes)};
  detail::per_pixel_backprop(
      spec, theta.values, f,
      [&](std::size_t p, std::span<const double> z, std::span<double> dz) {
        std::copy(z.begin(), z.end(), out.logits.begin() + static_cast<std::ptrdiff_t>(p * spec.num_classes));
        std::fill(dz.begin(), dz.end(), 0.0);
        return 0.0;
      },
      {});
  return out;
}

inline LabelGrid predict(const ModelSpec& spec, const ParamVector& theta, const Frame& f) {
  const LogitGrid z = forward(spec, theta, f);
  LabelGrid g{f.grid_h, f.grid_w, std::vector<int>(f.pixels())};
  for (std::size_t p = 0; p < f.pixels(); ++p) g.labels[p] = static_cast<int>(argmax(z.pixel(p), z.num_classes));
  return g;
}

// Mean per-pixel cross-entropy over the batch, plus the penalty when given.
// Pass `with_grad = false` to skip the backward pass.
inline LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& theta, std::span<const Example> batch,
                              const RegPenalty* penalty = nullptr, bool with_grad = true) {
  if (batch.empty()) throw Error("loss_and_grad: empty batch");
  std::size_t total_pixels = 0;
  for (const Example& e : batch) {
    detail::require_shapes(spec, theta, *e.frame);
    detail::check_labels(spec, *e.frame, *e.labels);
    total_pixels += e.frame->pixels();
  }
  const double weight = 1.0 / static_cast<double>(total_pixels);
  LossGrad out;
  if (with_grad) out.grad.assign(theta.size(), 0.0);
  for (const Example& e : batch) {
    const auto& y = e.labels->labels;
    out.loss += detail::per_pixel_backprop(
        spec, theta.values, *e.frame,
        [&](std::size_t p, std::span<const double> z, std::span<double> dz) {
          return detail::masked_cross_entropy(z, y[p], {}, weight, dz);
        },
        out.grad);
  }
  if (penalty) {
    out.loss += penalty->value;
    if (with_grad) {
      if (penalty->grad.size() != theta.size()) throw ShapeMismatch("penalty gradient length mismatch");
      for (std::size_t i = 0; i < theta.size(); ++i) out.grad[i] += penalty->grad[i];
    }
  }
  return out;
}

inline double loss_only(const ModelSpec& spec, const ParamVector& theta, std::span<const Example> batch) {
  return loss_and_grad(spec, theta, batch, nullptr, false).loss;
}

enum class OptimizerKind { sgd, adam };

inline ParamVector sgd_step(const ParamVector& theta, std::span<const double> grad, double lr) {
  if (grad.size() != theta.size()) throw ShapeMismatch("sgd_step: gradient length mismatch");
  if (!(lr > 0)) throw Error("sgd_step: lr must be > 0");
  ParamVector out = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericError("sgd_step: non-finite gradient");
    out.values[i] -= lr * grad[i];
  }
  return out;
}

// Stateful optimizer. Adam uses the usual bias-corrected moment recursion.
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Optimizer(OptimizerKind kind = OptimizerKind::adam) : kind_(kind) {}

  OptimizerKind kind() const { return kind_; }
  std::size_t steps() const { return t_; }

  void step(ParamVector& theta, std::span<const double> grad, double lr) {
    if (grad.size() != theta.size()) throw ShapeMismatch("optimizer: gradient length mismatch");
    if (!(lr > 0)) throw Error("optimizer: lr must be > 0");
    for (double g : grad)
      if (!std::isfinite(g)) throw NumericError("optimizer: non-finite gradient");
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta.values[i] -= lr * grad[i];
      ++t_;
      return;
    }
    if (m_.size() != theta.size()) {
      m_.assign(theta.size(), 0.0);
      v_.assign(theta.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      theta.values[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  OptimizerKind kind_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// Debug dump: 8-byte magic, uint64 count, then IEEE-754 doubles, all little-endian.
inline constexpr char kParamMagic[8] = {'O', 'D', 'C', 'L', 'P', 'R', 'M', '1'};

inline void save_params(const std::string& path, const ParamVector& theta) {
  static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  const std::uint64_t n = theta.size();
  out.write(kParamMagic, sizeof kParamMagic);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(theta.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw Error("write failed: " + path);
}

inline ParamVector load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  char magic[8];
  std::uint64_t n = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic, kParamMagic, sizeof magic) != 0) throw Error(path + ": not a parameter file");
  ParamVector p{std::vector<double>(n)};
  in.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw Error(path + ": truncated");
  return p;
}

}  // namespace odcl
