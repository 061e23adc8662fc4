#pragma once

// Deep-kernel regression backbone: an MLP feature extractor shared by one
// sparse variational GP head per output dimension, trained by mini-batch ELBO
// ascent with analytic gradients.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "musel/rng.hpp"

namespace musel {

struct ArchitectureConfig {
  /// Input, hidden and feature widths. ReLU after every layer except the last.
  std::vector<int> layer_dims{4, 32, 64, 32};
  int num_inducing = 20;
  int num_outputs = 2;
  double init_lengthscale = 1.0;
  double init_outputscale = 1.0;
  double init_noise = 0.01;
  double jitter = 1e-6;
  /// Targets are divided by this before entering the likelihood; predictions
  /// are scaled back.
  double target_scale = 1.0;
  int batch_size = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int input_dim() const { return layer_dims.front(); }
  int feature_dim() const { return layer_dims.back(); }
};

void to_json(nlohmann::json& j, const ArchitectureConfig& a);
void from_json(const nlohmann::json& j, ArchitectureConfig& a);

double softplus(double x);
double inverse_softplus(double y);
double sigmoid(double x);

/// Floor added to the softplus of the raw noise parameter.
inline constexpr double kNoiseFloor = 1e-6;

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct FeatureNet {
  std::vector<DenseLayer> layers;

  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
  /// Row-per-sample forward pass.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
};

/// Sparse variational GP head with an RBF kernel. Positive quantities are
/// stored unconstrained and mapped through softplus.
struct SvgpHead {
  Eigen::MatrixXd inducing;  // M x d, feature space
  Eigen::VectorXd var_mean;  // M
  /// Lower-triangular Cholesky factor of S; the diagonal holds raw values.
  Eigen::MatrixXd chol_raw;
  double raw_lengthscale = 0.0;
  double raw_outputscale = 0.0;
  double raw_noise = 0.0;

  int num_inducing() const { return static_cast<int>(inducing.rows()); }
  double lengthscale() const { return softplus(raw_lengthscale); }
  double outputscale() const { return softplus(raw_outputscale); }
  double noise_variance() const { return softplus(raw_noise) + kNoiseFloor; }
  /// L with positive diagonal; S = L L^T.
  Eigen::MatrixXd chol() const;
};

struct AdamState {
  Eigen::VectorXd first;
  Eigen::VectorXd second;
  long step = 0;
};

struct Model {
  ArchitectureConfig arch;
  std::uint64_t seed = 0;
  FeatureNet net;
  std::vector<SvgpHead> heads;
  /// Training visits per dataset sample, in insertion order.
  std::vector<long> visits;
  AdamState optimizer;
};

struct Prediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

Model init_model(std::uint64_t seed, const ArchitectureConfig& arch = {});

std::size_t parameter_count(const Model& model);

/// Flat parameter vector. Layout: for each layer, weight (row-major) then
/// bias; then for each head: inducing (row-major), variational mean, packed
/// lower triangle of chol_raw (row by row), raw lengthscale, raw outputscale,
/// raw noise.
Eigen::VectorXd flatten_parameters(const Model& model);
void assign_parameters(Model& model, const Eigen::VectorXd& params);

Eigen::VectorXd forward_features(const Model& model, const Eigen::VectorXd& x);

/// Kernel matrix of the head's RBF kernel between row sets.
Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double lengthscale,
                           double outputscale);

/// Factorizes K_ZZ + jitter I, escalating jitter up to 1e-4. Throws
/// NumericalError if every attempt fails.
Eigen::MatrixXd inducing_cholesky(const SvgpHead& head, double jitter);

/// Per-head latent predictive moments on feature rows.
struct LatentMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};
LatentMoments head_latent(const SvgpHead& head, const Eigen::MatrixXd& features, double jitter);

/// Prediction in effect units, std including observation noise.
Prediction predict(const Model& model, const Eigen::VectorXd& x);
/// Batched prediction for inputs given as rows.
std::vector<Prediction> predict_batch(const Model& model, const Eigen::MatrixXd& inputs);

/// Gradient of one head's objective with respect to its parameters and the
/// feature rows it was evaluated on.
struct HeadGradient {
  Eigen::MatrixXd inducing;
  Eigen::VectorXd var_mean;
  Eigen::MatrixXd chol_raw;  // lower triangle, chain rule through softplus on the diagonal
  double raw_lengthscale = 0.0;
  double raw_outputscale = 0.0;
  double raw_noise = 0.0;
  Eigen::MatrixXd features;
};

/// data_scale * sum_i E_q[log N(y_i | f_i, noise)] - KL[q(u) || p(u)] for one head.
double head_objective(const SvgpHead& head, const Eigen::MatrixXd& features,
                      const Eigen::VectorXd& targets, double data_scale, double jitter,
                      HeadGradient* grad = nullptr);

/// KL[q(u) || p(u)] of one head.
double head_kl(const SvgpHead& head, double jitter);

/// A mini-batch: one row per sample. Targets are in effect units.
struct Batch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
};

/// (N / |batch|) * expected log-likelihood - KL, summed over heads.
double elbo(const Model& model, const Batch& batch, double dataset_size);

/// ELBO value and its gradient in flatten_parameters layout.
double elbo_gradient(const Model& model, const Batch& batch, double dataset_size,
                     Eigen::VectorXd& gradient);

struct Dataset {
  std::vector<Eigen::VectorXd> inputs;
  std::vector<Eigen::VectorXd> targets;
  std::size_t size() const { return inputs.size(); }
};

struct EpochStats {
  double mean_loss = 0.0;  // mean over batches of -ELBO / N
  std::size_t samples = 0;
  std::size_t batches = 0;
};

/// One prioritized epoch: the m_train least-visited samples (ties: earlier
/// insertion first), shuffled, in mini-batches of arch.batch_size, with one
/// Adam ascent step per batch. Throws NumericalError on a non-finite ELBO.
EpochStats train_epoch(Model& model, const Dataset& data, double learning_rate,
                       std::size_t m_train, RngStream& rng);

/// Applies one Adam ascent step along gradient.
void adam_ascent_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& gradient,
                      double learning_rate, const ArchitectureConfig& arch);

nlohmann::json checkpoint_to_json(const Model& model);
Model checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace musel
