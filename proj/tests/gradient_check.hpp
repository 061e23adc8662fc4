#pragma once

// Finite-difference check of the analytic ELBO gradient on a small randomized
// model, against the long-double oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "elbo_oracle.hpp"
#include "musel/dkl.hpp"
#include "musel/rng.hpp"

namespace musel::testing {

struct GradientCheck {
  double max_rel_error = 0.0;
  Eigen::Index worst = -1;
  int checked = 0;
  int skipped_kinks = 0;
};

inline ArchitectureConfig small_arch() {
  ArchitectureConfig a;
  a.layer_dims = {4, 6, 5, 4};
  a.num_inducing = 3;
  a.num_outputs = 2;
  a.target_scale = 2.0;
  return a;
}

struct SmallProblem {
  Model model;
  Batch batch;
  double dataset_size = 25.0;
};

inline SmallProblem random_small_problem(std::uint64_t seed, int points = 10) {
  SmallProblem p;
  p.model = init_model(seed, small_arch());
  RngStream rng(seed, "gradient-check");
  p.batch.inputs.resize(points, 4);
  p.batch.targets.resize(points, 2);
  for (int i = 0; i < points; ++i) {
    for (int c = 0; c < 4; ++c) p.batch.inputs(i, c) = rng.normal();
    for (int c = 0; c < 2; ++c) p.batch.targets(i, c) = 2.0 * rng.normal();
  }
  // Inducing points near the data features so kernel terms are not negligible.
  const Eigen::MatrixXd feats = p.model.net.forward(p.batch.inputs);
  for (auto& head : p.model.heads) {
    for (int r = 0; r < head.num_inducing(); ++r)
      for (int c = 0; c < head.inducing.cols(); ++c)
        head.inducing(r, c) = feats(r * 3 % points, c) + 0.3 * rng.normal();
    for (int r = 0; r < head.num_inducing(); ++r) {
      head.var_mean(r) = rng.normal();
      for (int c = 0; c < r; ++c) head.chol_raw(r, c) = 0.3 * rng.normal();
      head.chol_raw(r, r) = 0.5 * rng.normal();
    }
    head.raw_lengthscale = rng.uniform(-0.5, 1.0);
    head.raw_outputscale = rng.uniform(-0.5, 1.0);
    head.raw_noise = rng.uniform(-3.0, 0.0);
  }
  return p;
}

inline std::vector<bool> relu_pattern(const FeatureNet& net, const Eigen::MatrixXd& inputs) {
  std::vector<bool> pattern;
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    Eigen::MatrixXd a = h * net.layers[l].weight.transpose();
    a.rowwise() += net.layers[l].bias.transpose();
    for (Eigen::Index i = 0; i < a.size(); ++i) pattern.push_back(a.data()[i] > 0.0);
    h = a.cwiseMax(0.0);
  }
  return pattern;
}

inline GradientCheck check_gradient(const SmallProblem& p, double step = 1e-5) {
  const auto& arch = p.model.arch;
  const OracleShape shape{arch.layer_dims, arch.num_inducing, arch.num_outputs, arch.jitter,
                          arch.target_scale};
  Eigen::VectorXd analytic;
  elbo_gradient(p.model, p.batch, p.dataset_size, analytic);
  const Eigen::VectorXd theta = flatten_parameters(p.model);
  std::vector<Real> base(theta.data(), theta.data() + theta.size());
  const auto pattern = relu_pattern(p.model.net, p.batch.inputs);

  GradientCheck out;
  Model probe = p.model;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    bool kink = false;
    for (double sgn : {-1.0, 1.0}) {
      Eigen::VectorXd t = theta;
      t(i) += sgn * step;
      assign_parameters(probe, t);
      kink = kink || relu_pattern(probe.net, p.batch.inputs) != pattern;
    }
    if (kink) {
      ++out.skipped_kinks;
      continue;
    }
    auto plus = base;
    auto minus = base;
    plus[i] += step;
    minus[i] -= step;
    const Real fd = (oracle_elbo(plus, shape, p.batch.inputs, p.batch.targets, p.dataset_size) -
                     oracle_elbo(minus, shape, p.batch.inputs, p.batch.targets, p.dataset_size)) /
                    (2 * step);
    const double g = analytic(i);
    const double rel = std::abs(g - static_cast<double>(fd)) / std::max(std::abs(g), 1e-8);
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = i;
    }
    ++out.checked;
  }
  return out;
}

}  // namespace musel::testing
