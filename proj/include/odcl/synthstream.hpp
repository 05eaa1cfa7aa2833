#pragma once

// Cyclic two-domain stream of synthetic segmentation frames.
//
// Frames are H x W grids of feature vectors. Domain A and domain B alternate
// every `cycle_len` frames (A1 B1 A2 B2 ...). Every frame is a pure function
// of (config, index), so any part of the stream can be regenerated on demand.
// The teacher is exact: it applies the domain's hyperplane labeling rule to
// every pixel.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "odcl/error.hpp"

namespace odcl {

enum class DomainId : std::uint8_t { A = 0, B = 1 };

inline char domain_name(DomainId d) { return d == DomainId::A ? 'A' : 'B'; }

struct StreamConfig {
  std::uint64_t seed = 1;
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t feat_dim = 6;
  std::size_t num_classes = 4;
  std::size_t cycle_len = 200;
  std::size_t num_cycles = 4;
  double r_v = 30.0;   // frames per virtual second
  double r_t = 3.0;    // virtual seconds per teacher label
  double r_sc = 60.0;  // virtual seconds per training epoch
  double noise_sigma = 0.5;
  // Index-dependent generator component: per-frame offset and phase shift.
  double offset_jitter = 0.5;
  double phase_jitter = std::numbers::pi;
  double texture_amplitude = 0.7;
  double domain_separation = 4.0;
  double prior_strength = 1.0;

  std::size_t pixels() const { return grid_h * grid_w; }
  std::size_t length() const { return 2 * cycle_len * num_cycles; }
  double seconds() const { return static_cast<double>(length()) / r_v; }
};

// Returns a list of human-readable problems; empty when the config is usable.
inline std::vector<ConfigIssue> check(const StreamConfig& c) {
  std::vector<ConfigIssue> issues;
  if (c.grid_h == 0) issues.push_back({"grid_h", "must be >= 1"});
  if (c.grid_w == 0) issues.push_back({"grid_w", "must be >= 1"});
  if (c.feat_dim < 2) issues.push_back({"feat_dim", "must be >= 2"});
  if (c.num_classes < 2) issues.push_back({"num_classes", "must be >= 2"});
  if (c.cycle_len == 0) issues.push_back({"cycle_len", "must be > 0"});
  if (c.num_cycles < 1) issues.push_back({"num_cycles", "must be >= 1"});
  if (!(c.r_v > 0)) issues.push_back({"r_v", "must be > 0"});
  if (!(c.r_t > 0)) issues.push_back({"r_t", "must be > 0"});
  if (!(c.r_sc > 0)) issues.push_back({"r_sc", "must be > 0"});
  if (!(c.noise_sigma >= 0)) issues.push_back({"noise_sigma", "must be >= 0"});
  if (!(c.offset_jitter >= 0)) issues.push_back({"offset_jitter", "must be >= 0"});
  if (!(c.phase_jitter >= 0)) issues.push_back({"phase_jitter", "must be >= 0"});
  if (!(c.texture_amplitude >= 0)) issues.push_back({"texture_amplitude", "must be >= 0"});
  if (!(c.domain_separation >= 0)) issues.push_back({"domain_separation", "must be >= 0"});
  return issues;
}

struct DomainSpec {
  DomainId id = DomainId::A;
  std::vector<double> class_prior;
  // Labeling rule: label = argmax_c  W[c] . (x - mean) + bias[c].
  std::vector<double> rule_weights;  // num_classes x feat_dim, row-major
  std::vector<double> rule_bias;
  // Texture: x = mean + amplitude * sin(2 pi (fr * r / H + fc * c / W) + phase) + ...
  std::vector<double> mean;
  std::vector<double> freq_rows;
  std::vector<double> freq_cols;
  std::vector<double> phase;
};

struct Frame {
  std::size_t index = 0;
  DomainId domain = DomainId::A;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t feat_dim = 0;
  std::vector<double> features;  // grid_h * grid_w * feat_dim, pixel-major

  std::size_t pixels() const { return grid_h * grid_w; }
  const double* pixel(std::size_t p) const { return features.data() + p * feat_dim; }
};

struct LabelGrid {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<int> labels;

  std::size_t pixels() const { return grid_h * grid_w; }
  bool operator==(const LabelGrid&) const = default;
};

// Lowest index wins ties.
inline std::size_t argmax(const double* v, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

namespace detail {

inline std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t index, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), tag};
  return std::mt19937_64(seq);
}

inline constexpr std::uint32_t kDomainTag = 0x444f4d41;
inline constexpr std::uint32_t kFrameTag = 0x4652414d;
inline constexpr std::uint32_t kProbeTag = 0x50524f42;

}  // namespace detail

class SyntheticStream {
 public:
  static constexpr double kMinDisagreement = 0.20;
  static constexpr std::size_t kProbeSize = 1000;

  explicit SyntheticStream(StreamConfig cfg) : cfg_(std::move(cfg)) {
    if (auto issues = check(cfg_); !issues.empty()) throw ConfigError("stream." + issues.front().key + ": " + issues.front().message);
    build_domains();
    const double d = rule_disagreement(kProbeSize, cfg_.seed);
    if (d < kMinDisagreement)
      throw ConfigError("stream: labeling rules disagree on only " + std::to_string(d) +
                        " of the probe set (need >= 0.20)");
  }

  const StreamConfig& config() const { return cfg_; }
  std::size_t length() const { return cfg_.length(); }
  const DomainSpec& domain(DomainId d) const { return domains_[static_cast<int>(d)]; }

  DomainId domain_of(std::size_t i) const {
    require_in_range(i);
    return (i / cfg_.cycle_len) % 2 == 0 ? DomainId::A : DomainId::B;
  }

  Frame frame_at(std::size_t i) const {
    const DomainId d = domain_of(i);
    const DomainSpec& dom = domain(d);
    const std::size_t F = cfg_.feat_dim;
    auto rng = detail::seeded_engine(cfg_.seed, i, detail::kFrameTag);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> shift(F), offset(F);
    for (auto& s : shift) s = cfg_.phase_jitter * unit(rng);
    for (auto& o : offset) o = cfg_.offset_jitter * normal(rng);

    Frame f;
    f.index = i;
    f.domain = d;
    f.grid_h = cfg_.grid_h;
    f.grid_w = cfg_.grid_w;
    f.feat_dim = F;
    f.features.resize(cfg_.pixels() * F);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t r = 0; r < cfg_.grid_h; ++r) {
      for (std::size_t c = 0; c < cfg_.grid_w; ++c) {
        double* x = f.features.data() + (r * cfg_.grid_w + c) * F;
        for (std::size_t k = 0; k < F; ++k) {
          const double arg = two_pi * (dom.freq_rows[k] * static_cast<double>(r) / cfg_.grid_h +
                                       dom.freq_cols[k] * static_cast<double>(c) / cfg_.grid_w) +
                             dom.phase[k] + shift[k];
          x[k] = dom.mean[k] + cfg_.texture_amplitude * std::sin(arg) + offset[k] +
                 cfg_.noise_sigma * normal(rng);
        }
      }
    }
    return f;
  }

  int label_feature(DomainId d, const double* x) const {
    const DomainSpec& dom = domain(d);
    const std::size_t F = cfg_.feat_dim;
    std::vector<double> score(cfg_.num_classes);
    for (std::size_t c = 0; c < cfg_.num_classes; ++c) {
      double s = dom.rule_bias[c];
      for (std::size_t k = 0; k < F; ++k) s += dom.rule_weights[c * F + k] * (x[k] - dom.mean[k]);
      score[c] = s;
    }
    return static_cast<int>(argmax(score.data(), score.size()));
  }

  LabelGrid teacher_label(const Frame& f) const {
    if (f.feat_dim != cfg_.feat_dim) throw ShapeMismatch("teacher_label: feat_dim mismatch");
    LabelGrid g{f.grid_h, f.grid_w, std::vector<int>(f.pixels())};
    for (std::size_t p = 0; p < f.pixels(); ++p) g.labels[p] = label_feature(f.domain, f.pixel(p));
    return g;
  }

  // Shift instants strictly inside [1, K): cycle_len, 2 cycle_len, ...
  std::vector<std::size_t> shift_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t s = cfg_.cycle_len; s < length(); s += cfg_.cycle_len) out.push_back(s);
    return out;
  }

  // Fraction of probe features (drawn from both domains' generators) on which
  // the two labeling rules disagree.
  double rule_disagreement(std::size_t probes, std::uint64_t probe_seed) const {
    auto rng = detail::seeded_engine(probe_seed, probes, detail::kProbeTag);
    std::uniform_int_distribution<std::size_t> pick_frame(0, length() - 1);
    std::uniform_int_distribution<std::size_t> pick_pixel(0, cfg_.pixels() - 1);
    std::size_t differ = 0;
    for (std::size_t n = 0; n < probes; ++n) {
      const Frame f = frame_at(pick_frame(rng));
      const double* x = f.pixel(pick_pixel(rng));
      if (label_feature(DomainId::A, x) != label_feature(DomainId::B, x)) ++differ;
    }
    return static_cast<double>(differ) / static_cast<double>(probes);
  }

 private:
  void require_in_range(std::size_t i) const {
    if (i >= length())
      throw StreamExhausted("stream index " + std::to_string(i) + " outside [0, " +
                            std::to_string(length()) + ")");
  }

  void build_domains() {
    const std::size_t F = cfg_.feat_dim;
    const std::size_t C = cfg_.num_classes;
    auto rng = detail::seeded_engine(cfg_.seed, 0, detail::kDomainTag);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> freq(0.5, 2.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

    std::vector<double> axis(F);
    double norm = 0.0;
    for (auto& a : axis) {
      a = normal(rng);
      norm += a * a;
    }
    norm = std::sqrt(norm);

    for (int d = 0; d < 2; ++d) {
      DomainSpec& dom = domains_[d];
      dom.id = static_cast<DomainId>(d);
      // A favours low class indices, B high ones.
      dom.class_prior.resize(C);
      double total = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        dom.class_prior[c] = static_cast<double>(d == 0 ? C - c : c + 1);
        total += dom.class_prior[c];
      }
      for (auto& p : dom.class_prior) p /= total;

      dom.rule_weights.resize(C * F);
      for (auto& w : dom.rule_weights) w = normal(rng);
      dom.rule_bias.resize(C);
      for (std::size_t c = 0; c < C; ++c) dom.rule_bias[c] = cfg_.prior_strength * std::log(dom.class_prior[c]);

      const double sign = d == 0 ? 0.5 : -0.5;
      dom.mean.resize(F);
      for (std::size_t k = 0; k < F; ++k) dom.mean[k] = sign * cfg_.domain_separation * axis[k] / norm;
      dom.freq_rows.resize(F);
      dom.freq_cols.resize(F);
      dom.phase.resize(F);
      for (std::size_t k = 0; k < F; ++k) {
        dom.freq_rows[k] = freq(rng);
        dom.freq_cols[k] = freq(rng);
        dom.phase[k] = phase(rng);
      }
    }
  }

  StreamConfig cfg_;
  std::array<DomainSpec, 2> domains_;
};

}  // namespace odcl
