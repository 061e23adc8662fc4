#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace musel {

/// Exact GP regression with an RBF kernel, O(n^3). Serves as a reference for
/// the sparse variational heads; not used on the training path.
class ExactGp {
 public:
  /// Rows of `inputs` are training points. Throws NumericalError if the noisy
  /// kernel matrix cannot be factorized even after adding jitter.
  ExactGp(Eigen::MatrixXd inputs, Eigen::VectorXd targets, double lengthscale, double outputscale,
          double noise_variance);

  struct Moments {
    double mean;
    double std;  // includes observation noise
    double latent_var;
  };
  Moments predict(const Eigen::VectorXd& z) const;

  double log_marginal_likelihood() const;

 private:
  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;

  Eigen::MatrixXd inputs_;
  Eigen::VectorXd targets_;
  double lengthscale_;
  double outputscale_;
  double noise_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

}  // namespace musel
