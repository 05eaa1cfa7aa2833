#pragma once

// Loss regularizers for online training without task boundaries.
//
// Boundary-based methods (mas, rwalk, lwf) see no penalty while
// epoch < warmup_epochs; after that an artificial task boundary is placed every
// `boundary_every_k` epochs, at which point the anchor parameters and the
// per-method state are consolidated.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odcl/error.hpp"
#include "odcl/gridnet.hpp"

namespace odcl {

enum class RegMethod { none, ace, lwf, mas, rwalk };

inline constexpr std::string_view to_string(RegMethod m) {
  switch (m) {
    case RegMethod::none: return "none";
    case RegMethod::ace: return "ace";
    case RegMethod::lwf: return "lwf";
    case RegMethod::mas: return "mas";
    case RegMethod::rwalk: return "rwalk";
  }
  return "?";
}

inline std::optional<RegMethod> parse_reg_method(std::string_view s) {
  for (auto m : {RegMethod::none, RegMethod::ace, RegMethod::lwf, RegMethod::mas, RegMethod::rwalk})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

struct RegConfig {
  RegMethod method = RegMethod::none;
  double lambda = 1.0;
  std::size_t warmup_epochs = 10;
  std::size_t boundary_every_k = 10;
  double lwf_temperature = 2.0;
  double rwalk_fisher_alpha = 0.9;
  double epsilon = 1e-3;
};

inline std::vector<ConfigIssue> check(const RegConfig& c) {
  std::vector<ConfigIssue> issues;
  if (!(c.lambda > 0)) issues.push_back({"lambda", "must be > 0"});
  if (c.boundary_every_k < 1) issues.push_back({"boundary_every_k", "must be >= 1"});
  if (!(c.lwf_temperature > 0)) issues.push_back({"lwf_temperature", "must be > 0"});
  if (!(c.rwalk_fisher_alpha > 0 && c.rwalk_fisher_alpha < 1))
    issues.push_back({"rwalk_fisher_alpha", "must be in (0, 1)"});
  if (!(c.epsilon > 0)) issues.push_back({"epsilon", "must be > 0"});
  return issues;
}

struct RegState {
  std::optional<ParamVector> anchor;  // theta*
  std::vector<double> mas_omega;
  std::vector<double> fisher;
  std::vector<double> path_score;  // consolidated s
  std::vector<double> path_accum;  // since the last boundary
  std::optional<ParamVector> frozen_student;
  std::size_t consolidations = 0;
  std::size_t epochs_seen = 0;
};

inline bool in_warmup(const RegConfig& cfg, std::size_t epoch) { return epoch < cfg.warmup_epochs; }

inline bool is_boundary(const RegConfig& cfg, std::size_t epoch) {
  return !in_warmup(cfg, epoch) && (epoch - cfg.warmup_epochs) % cfg.boundary_every_k == 0;
}

// Per-parameter MAS sensitivity |d mean_p ||f_p(x)||^2 / d theta|, averaged
// over the frames of `batch`.
inline std::vector<double> mas_sensitivity(const ModelSpec& spec, const ParamVector& theta,
                                           std::span<const Example> batch) {
  std::vector<double> omega(theta.size(), 0.0);
  if (batch.empty()) return omega;
  std::vector<double> g(theta.size());
  for (const Example& e : batch) {
    detail::require_shapes(spec, theta, *e.frame);
    std::fill(g.begin(), g.end(), 0.0);
    const double w = 1.0 / static_cast<double>(e.frame->pixels());
    detail::per_pixel_backprop(
        spec, theta.values, *e.frame,
        [&](std::size_t, std::span<const double> z, std::span<double> dz) {
          double sq = 0.0;
          for (std::size_t c = 0; c < z.size(); ++c) {
            sq += z[c] * z[c];
            dz[c] = 2.0 * w * z[c];
          }
          return w * sq;
        },
        g);
    for (std::size_t j = 0; j < g.size(); ++j) omega[j] += std::abs(g[j]);
  }
  for (double& o : omega) o /= static_cast<double>(batch.size());
  return omega;
}

inline void boundary_tick(RegState& state, const RegConfig& cfg, std::size_t epoch, const ModelSpec& spec,
                          const ParamVector& theta, std::span<const Example> sample_batch) {
  state.epochs_seen = epoch + 1;
  if (!is_boundary(cfg, epoch)) return;
  const std::size_t P = theta.size();
  state.anchor = snapshot(theta);
  const double n = static_cast<double>(state.consolidations);
  switch (cfg.method) {
    case RegMethod::mas: {
      const std::vector<double> fresh = mas_sensitivity(spec, theta, sample_batch);
      state.mas_omega.resize(P, 0.0);
      for (std::size_t j = 0; j < P; ++j) state.mas_omega[j] = (state.mas_omega[j] * n + fresh[j]) / (n + 1.0);
      break;
    }
    case RegMethod::rwalk: {
      state.path_score.resize(P, 0.0);
      state.path_accum.resize(P, 0.0);
      state.fisher.resize(P, 0.0);
      for (std::size_t j = 0; j < P; ++j) state.path_score[j] = (state.path_score[j] * n + state.path_accum[j]) / (n + 1.0);
      std::fill(state.path_accum.begin(), state.path_accum.end(), 0.0);
      break;
    }
    case RegMethod::lwf: state.frozen_student = snapshot(theta); break;
    case RegMethod::none:
    case RegMethod::ace: break;
  }
  ++state.consolidations;
}

// Per optimizer step: EMA Fisher proxy and the damped positive path integral.
inline void rwalk_accumulate(RegState& state, const RegConfig& cfg, std::span<const double> grad,
                             std::span<const double> delta_theta) {
  if (grad.size() != delta_theta.size()) throw ShapeMismatch("rwalk_accumulate: length mismatch");
  const std::size_t P = grad.size();
  state.fisher.resize(P, 0.0);
  state.path_accum.resize(P, 0.0);
  const double a = cfg.rwalk_fisher_alpha;
  for (std::size_t j = 0; j < P; ++j) {
    state.fisher[j] = a * state.fisher[j] + (1.0 - a) * grad[j] * grad[j];
    const double gain = std::max(0.0, -grad[j] * delta_theta[j]);
    state.path_accum[j] += gain / (0.5 * state.fisher[j] * delta_theta[j] * delta_theta[j] + cfg.epsilon);
  }
}

namespace detail {

inline RegPenalty weighted_quadratic(double lambda, std::span<const double> weight, const ParamVector& anchor,
                                     const ParamVector& theta) {
  if (anchor.size() != theta.size() || weight.size() != theta.size())
    throw ShapeMismatch("quadratic penalty: length mismatch");
  RegPenalty pen{0.0, std::vector<double>(theta.size())};
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double d = theta.values[j] - anchor.values[j];
    pen.value += lambda * weight[j] * d * d;
    pen.grad[j] = 2.0 * lambda * weight[j] * d;
  }
  return pen;
}

inline void log_softmax(std::span<const double> z, double temperature, std::span<double> out) {
  double zmax = -std::numeric_limits<double>::infinity();
  for (double v : z) zmax = std::max(zmax, v / temperature);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v / temperature - zmax);
  const double log_norm = zmax + std::log(sum);
  for (std::size_t c = 0; c < z.size(); ++c) out[c] = z[c] / temperature - log_norm;
}

}  // namespace detail

inline RegPenalty mas_penalty(const RegState& state, const RegConfig& cfg, const ParamVector& theta) {
  if (!state.anchor || state.mas_omega.empty()) throw StateError("mas_penalty: state not consolidated yet");
  return detail::weighted_quadratic(cfg.lambda, state.mas_omega, *state.anchor, theta);
}

inline RegPenalty rwalk_penalty(const RegState& state, const RegConfig& cfg, const ParamVector& theta) {
  if (!state.anchor) throw StateError("rwalk_penalty: state not consolidated yet");
  std::vector<double> w(theta.size(), 0.0);
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (j < state.fisher.size()) w[j] += state.fisher[j];
    if (j < state.path_score.size()) w[j] += state.path_score[j];
  }
  return detail::weighted_quadratic(cfg.lambda, w, *state.anchor, theta);
}

// lambda * tau^2 * mean over pixels of KL(softmax(z_old/tau) || softmax(z_new/tau)).
inline RegPenalty lwf_penalty(const RegState& state, const RegConfig& cfg, const ParamVector& theta,
                              const ModelSpec& spec, std::span<const Example> batch) {
  if (!state.frozen_student) throw StateError("lwf_penalty: no frozen student snapshot");
  RegPenalty pen{0.0, std::vector<double>(theta.size(), 0.0)};
  if (batch.empty()) return pen;
  std::size_t total_pixels = 0;
  for (const Example& e : batch) total_pixels += e.frame->pixels();
  const double tau = cfg.lwf_temperature;
  const double w = cfg.lambda * tau * tau / static_cast<double>(total_pixels);
  const std::size_t C = spec.num_classes;
  std::vector<double> log_p(C), log_q(C);
  for (const Example& e : batch) {
    const LogitGrid old_z = forward(spec, *state.frozen_student, *e.frame);
    pen.value += detail::per_pixel_backprop(
        spec, theta.values, *e.frame,
        [&](std::size_t p, std::span<const double> z, std::span<double> dz) {
          detail::log_softmax(std::span<const double>(old_z.pixel(p), C), tau, log_p);
          detail::log_softmax(z, tau, log_q);
          double kl = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            const double pc = std::exp(log_p[c]);
            kl += pc * (log_p[c] - log_q[c]);
            dz[c] = w * (std::exp(log_q[c]) - pc) / tau;
          }
          return w * kl;
        },
        pen.grad);
  }
  return pen;
}

// ER-ACE: incoming pixels use cross-entropy restricted to the classes present
// in the incoming labels; replay pixels keep the full cross-entropy. The result
// is the mean over all pixels of both parts.
inline LossGrad ace_loss(const ParamVector& theta, const ModelSpec& spec, std::span<const Example> incoming,
                         std::span<const Example> replay) {
  if (incoming.empty()) throw Error("ace_loss: incoming batch is empty");
  std::vector<char> present(spec.num_classes, 0);
  std::size_t total_pixels = 0;
  for (const Example& e : incoming) {
    detail::require_shapes(spec, theta, *e.frame);
    detail::check_labels(spec, *e.frame, *e.labels);
    for (int l : e.labels->labels) present[static_cast<std::size_t>(l)] = 1;
    total_pixels += e.frame->pixels();
  }
  if (std::none_of(present.begin(), present.end(), [](char c) { return c != 0; }))
    throw Error("ace_loss: incoming label set is empty");
  for (const Example& e : replay) {
    detail::require_shapes(spec, theta, *e.frame);
    detail::check_labels(spec, *e.frame, *e.labels);
    total_pixels += e.frame->pixels();
  }
  const double w = 1.0 / static_cast<double>(total_pixels);
  LossGrad out{0.0, std::vector<double>(theta.size(), 0.0)};
  auto accumulate = [&](std::span<const Example> part, std::span<const char> mask) {
    for (const Example& e : part) {
      const auto& y = e.labels->labels;
      out.loss += detail::per_pixel_backprop(
          spec, theta.values, *e.frame,
          [&](std::size_t p, std::span<const double> z, std::span<double> dz) {
            return detail::masked_cross_entropy(z, y[p], mask, w, dz);
          },
          out.grad);
    }
  };
  accumulate(incoming, present);
  accumulate(replay, {});
  return out;
}

// Owns the state of one configured method across epochs.
class Regularizer {
 public:
  explicit Regularizer(RegConfig cfg = {}) : cfg_(cfg) {}

  const RegConfig& config() const { return cfg_; }
  const RegState& state() const { return state_; }
  RegMethod method() const { return cfg_.method; }

  void boundary_tick(std::size_t epoch, const ModelSpec& spec, const ParamVector& theta,
                     std::span<const Example> sample_batch) {
    odcl::boundary_tick(state_, cfg_, epoch, spec, theta, sample_batch);
  }

  // Zero during warmup and for methods without an additive penalty.
  RegPenalty penalty(std::size_t epoch, const ModelSpec& spec, const ParamVector& theta,
                     std::span<const Example> batch) const {
    if (in_warmup(cfg_, epoch)) return {0.0, std::vector<double>(theta.size(), 0.0)};
    switch (cfg_.method) {
      case RegMethod::mas: return mas_penalty(state_, cfg_, theta);
      case RegMethod::rwalk: return rwalk_penalty(state_, cfg_, theta);
      case RegMethod::lwf: return lwf_penalty(state_, cfg_, theta, spec, batch);
      case RegMethod::none:
      case RegMethod::ace: break;
    }
    return {0.0, std::vector<double>(theta.size(), 0.0)};
  }

  void after_step(std::span<const double> grad, std::span<const double> delta_theta) {
    if (cfg_.method == RegMethod::rwalk) rwalk_accumulate(state_, cfg_, grad, delta_theta);
  }

 private:
  RegConfig cfg_;
  RegState state_;
};

}  // namespace odcl
