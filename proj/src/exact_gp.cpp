#include "musel/exact_gp.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "musel/errors.hpp"

namespace musel {

ExactGp::ExactGp(Eigen::MatrixXd inputs, Eigen::VectorXd targets, double lengthscale,
                 double outputscale, double noise_variance)
    : inputs_(std::move(inputs)),
      targets_(std::move(targets)),
      lengthscale_(lengthscale),
      outputscale_(outputscale),
      noise_(noise_variance) {
  const Eigen::Index n = inputs_.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) k(i, j) = kernel(inputs_.row(i), inputs_.row(j));
  double jitter = 0.0;
  for (int attempt = 0; attempt < 4; ++attempt) {
    llt_.compute(k + (noise_ + jitter) * Eigen::MatrixXd::Identity(n, n));
    if (llt_.info() == Eigen::Success) {
      alpha_ = llt_.solve(targets_);
      return;
    }
    jitter = jitter == 0.0 ? 1e-8 : jitter * 100.0;
  }
  throw NumericalError("exact GP factorization failed");
}

double ExactGp::kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  return outputscale_ * outputscale_ *
         std::exp(-0.5 * (a - b).squaredNorm() / (lengthscale_ * lengthscale_));
}

ExactGp::Moments ExactGp::predict(const Eigen::VectorXd& z) const {
  const Eigen::Index n = inputs_.rows();
  Eigen::VectorXd kz(n);
  for (Eigen::Index i = 0; i < n; ++i) kz(i) = kernel(inputs_.row(i), z);
  const double mean = kz.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(kz);
  const double latent = std::max(0.0, kernel(z, z) - v.squaredNorm());
  return {mean, std::sqrt(latent + noise_), latent};
}

double ExactGp::log_marginal_likelihood() const {
  const double n = static_cast<double>(inputs_.rows());
  const double logdet = 2.0 * llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * targets_.dot(alpha_) - 0.5 * logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace musel
