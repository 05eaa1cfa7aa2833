#pragma once

// Shared helpers for the test suites: random instances and a central
// finite-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "odcl/gridnet.hpp"
#include "odcl/synthstream.hpp"

namespace odcl::testing {

inline Frame random_frame(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t f, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Frame fr;
  fr.grid_h = h;
  fr.grid_w = w;
  fr.feat_dim = f;
  fr.features.resize(h * w * f);
  for (double& x : fr.features) x = normal(rng);
  return fr;
}

inline LabelGrid random_labels(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t classes) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  LabelGrid y{h, w, std::vector<int>(h * w)};
  for (int& l : y.labels) l = pick(rng);
  return y;
}

inline ModelSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> small(2, 5);
  ModelSpec s;
  s.arch = std::bernoulli_distribution(0.5)(rng) ? Arch::mlp : Arch::linear;
  s.feat_dim = small(rng);
  s.hidden_dim = small(rng) + 1;
  s.num_classes = small(rng);
  s.init_seed = rng();
  s.init_scale = 0.5;
  return s;
}

inline ParamVector random_params(std::mt19937_64& rng, std::size_t n, double scale = 0.5) {
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector p{std::vector<double>(n)};
  for (double& v : p.values) v = normal(rng);
  return p;
}

// Central differences with step h.
inline std::vector<double> numeric_gradient(const std::function<double(const ParamVector&)>& f, ParamVector theta,
                                            double h = 1e-5) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta.values[i];
    theta.values[i] = orig + h;
    const double up = f(theta);
    theta.values[i] = orig - h;
    const double down = f(theta);
    theta.values[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest |a - n| / max(|a|, |n|, floor) over coordinates. The floor keeps
// coordinates whose true gradient is ~0 from turning rounding noise into a
// large relative error.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace odcl::testing
