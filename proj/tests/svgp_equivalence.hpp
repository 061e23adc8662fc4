#pragma once

// With inducing points at the training inputs and fixed hyperparameters, the
// optimal variational posterior reproduces the exact GP posterior. This
// optimizes only the variational mean and Cholesky factor with the production
// Adam step and reports the disagreement on held-out points.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "musel/dkl.hpp"
#include "musel/exact_gp.hpp"
#include "musel/rng.hpp"

namespace musel::testing {

struct EquivalenceResult {
  double max_mean_error = 0.0;
  double max_std_error = 0.0;
  double final_gradient_norm = 0.0;
};

inline EquivalenceResult svgp_exact_equivalence(std::uint64_t seed = 7) {
  constexpr int kTrain = 50;
  constexpr int kTest = 20;
  constexpr double kLengthscale = 0.8;
  constexpr double kOutputscale = 1.0;
  constexpr double kNoise = 0.05;
  constexpr double kJitter = 1e-6;
  RngStream rng(seed, "equivalence");

  // Jittered 10 x 5 grid with unit spacing keeps K_XX well conditioned.
  Eigen::MatrixXd x(kTrain, 2);
  Eigen::VectorXd y(kTrain);
  for (int i = 0; i < kTrain; ++i) {
    x(i, 0) = (i % 10) + rng.uniform(-0.2, 0.2);
    x(i, 1) = (i / 10) + rng.uniform(-0.2, 0.2);
    y(i) = std::sin(x(i, 0)) + 0.5 * std::cos(1.3 * x(i, 1)) + 0.1 * rng.normal();
  }
  Eigen::MatrixXd xt(kTest, 2);
  for (int i = 0; i < kTest; ++i) {
    xt(i, 0) = rng.uniform(0.0, 9.0);
    xt(i, 1) = rng.uniform(0.0, 4.0);
  }

  SvgpHead head;
  head.inducing = x;
  head.var_mean = Eigen::VectorXd::Zero(kTrain);
  head.chol_raw = Eigen::MatrixXd::Zero(kTrain, kTrain);
  for (int i = 0; i < kTrain; ++i) head.chol_raw(i, i) = inverse_softplus(1.0);
  head.raw_lengthscale = inverse_softplus(kLengthscale);
  head.raw_outputscale = inverse_softplus(kOutputscale);
  head.raw_noise = inverse_softplus(kNoise - kNoiseFloor);

  // Free parameters: m then the packed lower triangle of chol_raw.
  const Eigen::Index n_free = kTrain + kTrain * (kTrain + 1) / 2;
  Eigen::VectorXd theta(n_free), grad(n_free);
  auto pack = [&](const Eigen::VectorXd& m, const Eigen::MatrixXd& l, Eigen::VectorXd& out) {
    Eigen::Index k = 0;
    for (int i = 0; i < kTrain; ++i) out(k++) = m(i);
    for (int r = 0; r < kTrain; ++r)
      for (int c = 0; c <= r; ++c) out(k++) = l(r, c);
  };
  auto unpack = [&](const Eigen::VectorXd& in) {
    Eigen::Index k = 0;
    for (int i = 0; i < kTrain; ++i) head.var_mean(i) = in(k++);
    for (int r = 0; r < kTrain; ++r)
      for (int c = 0; c <= r; ++c) head.chol_raw(r, c) = in(k++);
  };
  pack(head.var_mean, head.chol_raw, theta);

  ArchitectureConfig adam;
  AdamState state;
  HeadGradient g;
  const struct {
    int steps;
    double lr;
  } schedule[] = {{4000, 1e-2}, {4000, 1e-3}, {3000, 1e-4}, {2000, 1e-5}};
  for (const auto& phase : schedule) {
    for (int s = 0; s < phase.steps; ++s) {
      head_objective(head, x, y, 1.0, kJitter, &g);
      pack(g.var_mean, g.chol_raw, grad);
      adam_ascent_step(state, theta, grad, phase.lr, adam);
      unpack(theta);
    }
  }
  head_objective(head, x, y, 1.0, kJitter, &g);
  pack(g.var_mean, g.chol_raw, grad);

  const ExactGp exact(x, y, kLengthscale, kOutputscale, kNoise);
  const LatentMoments approx = head_latent(head, xt, kJitter);
  EquivalenceResult out;
  out.final_gradient_norm = grad.norm();
  for (int i = 0; i < kTest; ++i) {
    const auto e = exact.predict(xt.row(i).transpose());
    const double std = std::sqrt(approx.var(i) + head.noise_variance());
    out.max_mean_error = std::max(out.max_mean_error, std::abs(approx.mean(i) - e.mean));
    out.max_std_error = std::max(out.max_std_error, std::abs(std - e.std));
  }
  return out;
}

}  // namespace musel::testing
