#include "musel/dkl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>

#include <Eigen/Cholesky>

#include "musel/errors.hpp"

namespace musel {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void to_json(nlohmann::json& j, const ArchitectureConfig& a) {
  j = nlohmann::json{{"layer_dims", a.layer_dims},
                     {"num_inducing", a.num_inducing},
                     {"num_outputs", a.num_outputs},
                     {"init_lengthscale", a.init_lengthscale},
                     {"init_outputscale", a.init_outputscale},
                     {"init_noise", a.init_noise},
                     {"jitter", a.jitter},
                     {"target_scale", a.target_scale},
                     {"batch_size", a.batch_size},
                     {"adam_beta1", a.adam_beta1},
                     {"adam_beta2", a.adam_beta2},
                     {"adam_eps", a.adam_eps}};
}

void from_json(const nlohmann::json& j, ArchitectureConfig& a) {
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
  };
  get("layer_dims", a.layer_dims);
  get("num_inducing", a.num_inducing);
  get("num_outputs", a.num_outputs);
  get("init_lengthscale", a.init_lengthscale);
  get("init_outputscale", a.init_outputscale);
  get("init_noise", a.init_noise);
  get("jitter", a.jitter);
  get("target_scale", a.target_scale);
  get("batch_size", a.batch_size);
  get("adam_beta1", a.adam_beta1);
  get("adam_beta2", a.adam_beta2);
  get("adam_eps", a.adam_eps);
  if (a.layer_dims.size() < 2 || a.num_inducing < 1 || a.num_outputs < 1 || a.batch_size < 1 ||
      !(a.target_scale > 0.0))
    throw ConfigError("invalid architecture config");
}

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double inverse_softplus(double y) {
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

MatrixXd SvgpHead::chol() const {
  MatrixXd l = chol_raw.triangularView<Eigen::StrictlyLower>();
  for (Eigen::Index i = 0; i < l.rows(); ++i) l(i, i) = softplus(chol_raw(i, i));
  return l;
}

MatrixXd FeatureNet::forward(const MatrixXd& inputs) const {
  MatrixXd h = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixXd a = h * layers[l].weight.transpose();
    a.rowwise() += layers[l].bias.transpose();
    if (l + 1 < layers.size()) a = a.cwiseMax(0.0);
    h = std::move(a);
  }
  return h;
}

Model init_model(std::uint64_t seed, const ArchitectureConfig& arch) {
  Model model;
  model.arch = arch;
  model.seed = seed;
  RngStream rng(seed, "model-init");
  for (std::size_t l = 0; l + 1 < arch.layer_dims.size(); ++l) {
    const int in = arch.layer_dims[l];
    const int out = arch.layer_dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    DenseLayer layer{MatrixXd(out, in), VectorXd(out)};
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    for (int r = 0; r < out; ++r) layer.bias(r) = rng.uniform(-bound, bound);
    model.net.layers.push_back(std::move(layer));
  }
  const int m = arch.num_inducing;
  const int d = arch.feature_dim();
  for (int h = 0; h < arch.num_outputs; ++h) {
    SvgpHead head;
    head.inducing.resize(m, d);
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < d; ++k) head.inducing(i, k) = rng.normal();
    head.var_mean = VectorXd::Zero(m);
    head.chol_raw = MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) head.chol_raw(i, i) = inverse_softplus(1.0);
    head.raw_lengthscale = inverse_softplus(arch.init_lengthscale);
    head.raw_outputscale = inverse_softplus(arch.init_outputscale);
    head.raw_noise = inverse_softplus(arch.init_noise - kNoiseFloor);
    model.heads.push_back(std::move(head));
  }
  const auto n = static_cast<Eigen::Index>(parameter_count(model));
  model.optimizer.first = VectorXd::Zero(n);
  model.optimizer.second = VectorXd::Zero(n);
  return model;
}

std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const auto& l : model.net.layers) n += l.weight.size() + l.bias.size();
  for (const auto& h : model.heads) {
    const auto m = static_cast<std::size_t>(h.num_inducing());
    n += h.inducing.size() + m + m * (m + 1) / 2 + 3;
  }
  return n;
}

namespace {

// Walks every parameter slot in flatten_parameters order.
template <typename NetT, typename HeadsT, typename Fn>
void visit_parameters(NetT& net, HeadsT& heads, Fn&& fn) {
  for (auto& l : net.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) fn(l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) fn(l.bias(r));
  }
  for (auto& h : heads) {
    for (Eigen::Index r = 0; r < h.inducing.rows(); ++r)
      for (Eigen::Index c = 0; c < h.inducing.cols(); ++c) fn(h.inducing(r, c));
    for (Eigen::Index r = 0; r < h.var_mean.size(); ++r) fn(h.var_mean(r));
    for (Eigen::Index r = 0; r < h.chol_raw.rows(); ++r)
      for (Eigen::Index c = 0; c <= r; ++c) fn(h.chol_raw(r, c));
    fn(h.raw_lengthscale);
    fn(h.raw_outputscale);
    fn(h.raw_noise);
  }
}

}  // namespace

VectorXd flatten_parameters(const Model& model) {
  VectorXd out(static_cast<Eigen::Index>(parameter_count(model)));
  Eigen::Index i = 0;
  visit_parameters(model.net, model.heads, [&](const double& v) { out(i++) = v; });
  return out;
}

void assign_parameters(Model& model, const VectorXd& params) {
  if (static_cast<std::size_t>(params.size()) != parameter_count(model))
    throw ConfigError("parameter vector has the wrong length");
  Eigen::Index i = 0;
  visit_parameters(model.net, model.heads, [&](double& v) { v = params(i++); });
}

VectorXd forward_features(const Model& model, const VectorXd& x) {
  return model.net.forward(x.transpose()).row(0).transpose();
}

MatrixXd rbf_kernel(const MatrixXd& a, const MatrixXd& b, double lengthscale, double outputscale) {
  const VectorXd an = a.rowwise().squaredNorm();
  const VectorXd bn = b.rowwise().squaredNorm();
  MatrixXd d2 = (-2.0 * a * b.transpose()).colwise() + an;
  d2.rowwise() += bn.transpose();
  d2 = d2.cwiseMax(0.0);
  const double s2 = outputscale * outputscale;
  return (d2 * (-0.5 / (lengthscale * lengthscale))).array().exp().matrix() * s2;
}

namespace {

// Pairwise squared distances, exact for coincident rows.
MatrixXd squared_distances(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd d2(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    d2.col(j) = (a.rowwise() - b.row(j)).rowwise().squaredNorm();
  return d2;
}

MatrixXd kernel_from_d2(const MatrixXd& d2, double ls, double s) {
  return (d2 * (-0.5 / (ls * ls))).array().exp().matrix() * (s * s);
}

struct InducingFactor {
  Eigen::LLT<MatrixXd> llt;
  double jitter = 0.0;
};

InducingFactor factor_inducing(const MatrixXd& kzz, double jitter) {
  const Eigen::Index m = kzz.rows();
  if (!kzz.allFinite()) throw NumericalError("non-finite K_ZZ");
  for (double j = jitter; j <= 1e-4 * (1.0 + 1e-12); j *= 10.0) {
    InducingFactor f;
    f.jitter = j;
    f.llt.compute(kzz + j * MatrixXd::Identity(m, m));
    if (f.llt.info() == Eigen::Success && f.llt.matrixLLT().diagonal().allFinite()) return f;
    if (j <= 0.0) break;
  }
  throw NumericalError("K_ZZ factorization failed after jitter escalation");
}

// Accumulates gradients of sum(G .* K(X1, X2)) into inputs and hypers.
void kernel_backward(const MatrixXd& g, const MatrixXd& k, const MatrixXd& d2, const MatrixXd& x1,
                     const MatrixXd& x2, double ls, double s, MatrixXd* gx1, MatrixXd* gx2,
                     double& g_ls, double& g_s) {
  const MatrixXd w = g.cwiseProduct(k);
  const double inv_l2 = 1.0 / (ls * ls);
  g_s += 2.0 * w.sum() / s;
  g_ls += w.cwiseProduct(d2).sum() / (ls * ls * ls);
  if (gx1) {
    const VectorXd rs = w.rowwise().sum();
    *gx1 += -inv_l2 * (x1.array().colwise() * rs.array()).matrix() + inv_l2 * (w * x2);
  }
  if (gx2) {
    const VectorXd cs = w.colwise().sum().transpose();
    *gx2 += inv_l2 * (w.transpose() * x1) - inv_l2 * (x2.array().colwise() * cs.array()).matrix();
  }
}

}  // namespace

MatrixXd inducing_cholesky(const SvgpHead& head, double jitter) {
  const MatrixXd kzz = kernel_from_d2(squared_distances(head.inducing, head.inducing),
                                      head.lengthscale(), head.outputscale());
  return factor_inducing(kzz, jitter).llt.matrixL();
}

LatentMoments head_latent(const SvgpHead& head, const MatrixXd& features, double jitter) {
  const double ls = head.lengthscale();
  const double s = head.outputscale();
  const MatrixXd kzz = kernel_from_d2(squared_distances(head.inducing, head.inducing), ls, s);
  const InducingFactor f = factor_inducing(kzz, jitter);
  const MatrixXd kxz = kernel_from_d2(squared_distances(features, head.inducing), ls, s);
  const MatrixXd at = f.llt.solve(kxz.transpose());  // K_ZZ^-1 k_Zx, M x n
  const MatrixXd lt_a = head.chol().transpose() * at;
  LatentMoments out;
  out.mean = at.transpose() * head.var_mean;
  out.var = (s * s - kxz.cwiseProduct(at.transpose()).rowwise().sum().array() +
             lt_a.colwise().squaredNorm().transpose().array())
                .cwiseMax(0.0)
                .matrix();
  return out;
}

std::vector<Prediction> predict_batch(const Model& model, const MatrixXd& inputs) {
  const MatrixXd feats = model.net.forward(inputs);
  const auto n = static_cast<std::size_t>(inputs.rows());
  const auto r = static_cast<Eigen::Index>(model.heads.size());
  std::vector<Prediction> out(n, Prediction{VectorXd(r), VectorXd(r)});
  const double scale = model.arch.target_scale;
  for (Eigen::Index h = 0; h < r; ++h) {
    const SvgpHead& head = model.heads[static_cast<std::size_t>(h)];
    const LatentMoments lm = head_latent(head, feats, model.arch.jitter);
    const double noise = head.noise_variance();
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      out[i].mean(h) = scale * lm.mean(ii);
      out[i].std(h) = scale * std::sqrt(lm.var(ii) + noise);
    }
  }
  return out;
}

Prediction predict(const Model& model, const VectorXd& x) {
  return predict_batch(model, x.transpose()).front();
}

double head_kl(const SvgpHead& head, double jitter) {
  const MatrixXd kzz = kernel_from_d2(squared_distances(head.inducing, head.inducing),
                                      head.lengthscale(), head.outputscale());
  const InducingFactor f = factor_inducing(kzz, jitter);
  const MatrixXd lc = head.chol();
  const MatrixXd lk = f.llt.matrixL();
  const MatrixXd lk_inv_lc = lk.triangularView<Eigen::Lower>().solve(lc);
  const VectorXd kinv_m = f.llt.solve(head.var_mean);
  const double logdet_k = 2.0 * lk.diagonal().array().log().sum();
  const double logdet_s = 2.0 * lc.diagonal().array().log().sum();
  return 0.5 * (lk_inv_lc.squaredNorm() + head.var_mean.dot(kinv_m) -
                static_cast<double>(head.num_inducing()) + logdet_k - logdet_s);
}

double head_objective(const SvgpHead& head, const MatrixXd& features, const VectorXd& targets,
                      double data_scale, double jitter, HeadGradient* grad) {
  const Eigen::Index m = head.num_inducing();
  const Eigen::Index b = features.rows();
  const double ls = head.lengthscale();
  const double s = head.outputscale();
  const double noise = head.noise_variance();
  const MatrixXd& z = head.inducing;

  const MatrixXd d2_zz = squared_distances(z, z);
  const MatrixXd kzz = kernel_from_d2(d2_zz, ls, s);
  const InducingFactor f = factor_inducing(kzz, jitter);
  const MatrixXd d2_xz = squared_distances(features, z);
  const MatrixXd kxz = kernel_from_d2(d2_xz, ls, s);

  const MatrixXd a = f.llt.solve(kxz.transpose()).transpose();  // K_xZ K_ZZ^-1
  const MatrixXd lc = head.chol();
  const MatrixXd sm = lc * lc.transpose();
  const MatrixXd as = a * sm;
  const VectorXd mu = a * head.var_mean;
  const VectorXd var = (s * s - a.cwiseProduct(kxz).rowwise().sum().array() +
                        as.cwiseProduct(a).rowwise().sum().array())
                           .matrix();
  const VectorXd resid = targets - mu;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const double ell = -0.5 * static_cast<double>(b) * (log2pi + std::log(noise)) -
                     (resid.squaredNorm() + var.sum()) / (2.0 * noise);

  const MatrixXd lk = f.llt.matrixL();
  const MatrixXd kinv = f.llt.solve(MatrixXd::Identity(m, m));
  const VectorXd kinv_m = kinv * head.var_mean;
  const double logdet_k = 2.0 * lk.diagonal().array().log().sum();
  const double logdet_s = 2.0 * lc.diagonal().array().log().sum();
  const double kl = 0.5 * ((kinv.cwiseProduct(sm)).sum() + head.var_mean.dot(kinv_m) -
                           static_cast<double>(m) + logdet_k - logdet_s);

  const double value = data_scale * ell - kl;
  if (!grad) return value;

  const VectorXd g_mu = resid * (data_scale / noise);
  const double g_var = -data_scale / (2.0 * noise);
  const double g_noise = data_scale * (-0.5 * static_cast<double>(b) / noise +
                                       (resid.squaredNorm() + var.sum()) / (2.0 * noise * noise));

  const MatrixXd g_a = g_mu * head.var_mean.transpose() + g_var * (2.0 * as - kxz);
  const MatrixXd g_kxz = -g_var * a + g_a * kinv;
  const MatrixXd kinv_s_kinv = kinv * sm * kinv;
  const MatrixXd g_kzz = -a.transpose() * g_a * kinv +
                         0.5 * (kinv_s_kinv + kinv_m * kinv_m.transpose() - kinv);
  const MatrixXd g_s_data = g_var * (a.transpose() * a);
  MatrixXd g_lc = 2.0 * g_s_data * lc - kinv * lc;
  g_lc.diagonal() += lc.diagonal().cwiseInverse();

  grad->var_mean = a.transpose() * g_mu - kinv_m;
  grad->chol_raw = g_lc.triangularView<Eigen::Lower>();
  for (Eigen::Index i = 0; i < m; ++i) grad->chol_raw(i, i) *= sigmoid(head.chol_raw(i, i));

  double g_ls = 0.0;
  double g_s = 2.0 * s * g_var * static_cast<double>(b);  // prior variance k(x, x)
  grad->inducing = MatrixXd::Zero(m, z.cols());
  grad->features = MatrixXd::Zero(b, features.cols());
  kernel_backward(g_kxz, kxz, d2_xz, features, z, ls, s, &grad->features, &grad->inducing, g_ls,
                  g_s);
  kernel_backward(g_kzz, kzz, d2_zz, z, z, ls, s, &grad->inducing, &grad->inducing, g_ls, g_s);
  grad->raw_lengthscale = g_ls * sigmoid(head.raw_lengthscale);
  grad->raw_outputscale = g_s * sigmoid(head.raw_outputscale);
  grad->raw_noise = g_noise * sigmoid(head.raw_noise);
  return value;
}

namespace {

struct Forward {
  std::vector<MatrixXd> pre;    // pre-activations per layer
  std::vector<MatrixXd> input;  // input to each layer
  MatrixXd out;
};

Forward forward_cached(const FeatureNet& net, const MatrixXd& x) {
  Forward f;
  MatrixXd h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    f.input.push_back(h);
    MatrixXd a = h * net.layers[l].weight.transpose();
    a.rowwise() += net.layers[l].bias.transpose();
    f.pre.push_back(a);
    h = l + 1 < net.layers.size() ? MatrixXd(a.cwiseMax(0.0)) : a;
  }
  f.out = std::move(h);
  return f;
}

double check_finite(double v) {
  if (!std::isfinite(v)) throw NumericalError("non-finite ELBO");
  return v;
}

}  // namespace

double elbo(const Model& model, const Batch& batch, double dataset_size) {
  const MatrixXd feats = model.net.forward(batch.inputs);
  const double scale = dataset_size / static_cast<double>(batch.inputs.rows());
  double total = 0.0;
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    const VectorXd y = batch.targets.col(static_cast<Eigen::Index>(h)) / model.arch.target_scale;
    total += head_objective(model.heads[h], feats, y, scale, model.arch.jitter);
  }
  return check_finite(total);
}

double elbo_gradient(const Model& model, const Batch& batch, double dataset_size,
                     VectorXd& gradient) {
  const Forward fwd = forward_cached(model.net, batch.inputs);
  const double scale = dataset_size / static_cast<double>(batch.inputs.rows());
  double total = 0.0;
  MatrixXd g_feat = MatrixXd::Zero(fwd.out.rows(), fwd.out.cols());
  std::vector<HeadGradient> head_grads(model.heads.size());
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    const VectorXd y = batch.targets.col(static_cast<Eigen::Index>(h)) / model.arch.target_scale;
    total += head_objective(model.heads[h], fwd.out, y, scale, model.arch.jitter, &head_grads[h]);
    g_feat += head_grads[h].features;
  }
  check_finite(total);

  FeatureNet g_net = model.net;
  MatrixXd g_pre = g_feat;
  for (std::size_t l = model.net.layers.size(); l-- > 0;) {
    g_net.layers[l].weight = g_pre.transpose() * fwd.input[l];
    g_net.layers[l].bias = g_pre.colwise().sum().transpose();
    if (l > 0) {
      const MatrixXd g_h = g_pre * model.net.layers[l].weight;
      g_pre = g_h.cwiseProduct((fwd.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }

  std::vector<SvgpHead> g_heads(model.heads.size());
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    g_heads[h].inducing = head_grads[h].inducing;
    g_heads[h].var_mean = head_grads[h].var_mean;
    g_heads[h].chol_raw = head_grads[h].chol_raw;
    g_heads[h].raw_lengthscale = head_grads[h].raw_lengthscale;
    g_heads[h].raw_outputscale = head_grads[h].raw_outputscale;
    g_heads[h].raw_noise = head_grads[h].raw_noise;
  }
  gradient.resize(static_cast<Eigen::Index>(parameter_count(model)));
  Eigen::Index i = 0;
  visit_parameters(g_net, g_heads, [&](const double& v) { gradient(i++) = v; });
  return total;
}

void adam_ascent_step(AdamState& st, VectorXd& params, const VectorXd& g, double lr,
                      const ArchitectureConfig& arch) {
  if (st.first.size() != params.size()) {
    st.first = VectorXd::Zero(params.size());
    st.second = VectorXd::Zero(params.size());
    st.step = 0;
  }
  ++st.step;
  st.first = arch.adam_beta1 * st.first + (1.0 - arch.adam_beta1) * g;
  st.second = arch.adam_beta2 * st.second + (1.0 - arch.adam_beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(arch.adam_beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(arch.adam_beta2, static_cast<double>(st.step));
  params.array() +=
      lr * (st.first.array() / c1) / ((st.second.array() / c2).sqrt() + arch.adam_eps);
}

EpochStats train_epoch(Model& model, const Dataset& data, double learning_rate,
                       std::size_t m_train, RngStream& rng) {
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("train_epoch: empty dataset");
  model.visits.resize(n, 0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return model.visits[a] < model.visits[b]; });
  order.resize(std::min(n, m_train));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);

  const auto in_dim = data.inputs.front().size();
  const auto out_dim = data.targets.front().size();
  const std::size_t bs = static_cast<std::size_t>(model.arch.batch_size);
  VectorXd params = flatten_parameters(model);
  VectorXd grad;
  EpochStats stats;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t len = std::min(bs, order.size() - start);
    Batch batch{MatrixXd(len, in_dim), MatrixXd(len, out_dim)};
    for (std::size_t r = 0; r < len; ++r) {
      const std::size_t idx = order[start + r];
      batch.inputs.row(static_cast<Eigen::Index>(r)) = data.inputs[idx].transpose();
      batch.targets.row(static_cast<Eigen::Index>(r)) = data.targets[idx].transpose();
      ++model.visits[idx];
    }
    const double value = elbo_gradient(model, batch, static_cast<double>(n), grad);
    if (!grad.allFinite()) throw NumericalError("non-finite ELBO gradient");
    adam_ascent_step(model.optimizer, params, grad, learning_rate, model.arch);
    assign_parameters(model, params);
    loss_sum += -value / static_cast<double>(n);
    ++stats.batches;
  }
  stats.samples = order.size();
  stats.mean_loss = loss_sum / static_cast<double>(stats.batches);
  return stats;
}

namespace {

nlohmann::json matrix_entry(const std::string& name, const MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", data}};
}

MatrixXd matrix_from(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || static_cast<Eigen::Index>(data.size()) != shape[0] * shape[1])
    throw ConfigError("checkpoint entry '" + j.value("name", "?") + "' has a bad shape");
  MatrixXd m(shape[0], shape[1]);
  for (Eigen::Index r = 0; r < shape[0]; ++r)
    for (Eigen::Index c = 0; c < shape[1]; ++c) m(r, c) = data[static_cast<std::size_t>(r * shape[1] + c)];
  return m;
}

}  // namespace

nlohmann::json checkpoint_to_json(const Model& model) {
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t l = 0; l < model.net.layers.size(); ++l) {
    const std::string p = "net." + std::to_string(l);
    params.push_back(matrix_entry(p + ".weight", model.net.layers[l].weight));
    params.push_back(matrix_entry(p + ".bias", model.net.layers[l].bias));
  }
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    const auto& head = model.heads[h];
    const std::string p = "head." + std::to_string(h);
    params.push_back(matrix_entry(p + ".inducing", head.inducing));
    params.push_back(matrix_entry(p + ".var_mean", head.var_mean));
    params.push_back(matrix_entry(p + ".chol_raw", head.chol_raw));
    params.push_back(matrix_entry(p + ".raw_hypers",
                                  Eigen::Vector3d(head.raw_lengthscale, head.raw_outputscale,
                                                  head.raw_noise)));
  }
  return {{"format", "musel-checkpoint-v1"},
          {"seed", model.seed},
          {"arch", model.arch},
          {"parameters", params},
          {"visits", model.visits},
          {"optimizer",
           {{"step", model.optimizer.step},
            {"first", std::vector<double>(model.optimizer.first.data(),
                                          model.optimizer.first.data() + model.optimizer.first.size())},
            {"second", std::vector<double>(model.optimizer.second.data(),
                                           model.optimizer.second.data() +
                                               model.optimizer.second.size())}}}};
}

Model checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "musel-checkpoint-v1") throw ConfigError("unknown checkpoint format");
  Model model = init_model(j.at("seed").get<std::uint64_t>(), j.at("arch").get<ArchitectureConfig>());
  std::map<std::string, MatrixXd> entries;
  for (const auto& e : j.at("parameters")) entries[e.at("name").get<std::string>()] = matrix_from(e);
  auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto it = entries.find(name);
    if (it == entries.end() || it->second.rows() != rows || it->second.cols() != cols)
      throw ConfigError("checkpoint entry '" + name + "' missing or mis-shaped");
    return it->second;
  };
  for (std::size_t l = 0; l < model.net.layers.size(); ++l) {
    auto& layer = model.net.layers[l];
    const std::string p = "net." + std::to_string(l);
    layer.weight = take(p + ".weight", layer.weight.rows(), layer.weight.cols());
    layer.bias = take(p + ".bias", layer.bias.size(), 1);
  }
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    auto& head = model.heads[h];
    const std::string p = "head." + std::to_string(h);
    head.inducing = take(p + ".inducing", head.inducing.rows(), head.inducing.cols());
    head.var_mean = take(p + ".var_mean", head.var_mean.size(), 1);
    head.chol_raw = take(p + ".chol_raw", head.chol_raw.rows(), head.chol_raw.cols());
    const MatrixXd hy = take(p + ".raw_hypers", 3, 1);
    head.raw_lengthscale = hy(0);
    head.raw_outputscale = hy(1);
    head.raw_noise = hy(2);
  }
  model.visits = j.at("visits").get<std::vector<long>>();
  const auto& opt = j.at("optimizer");
  model.optimizer.step = opt.at("step").get<long>();
  const auto first = opt.at("first").get<std::vector<double>>();
  const auto second = opt.at("second").get<std::vector<double>>();
  model.optimizer.first = Eigen::Map<const VectorXd>(first.data(), static_cast<Eigen::Index>(first.size()));
  model.optimizer.second =
      Eigen::Map<const VectorXd>(second.data(), static_cast<Eigen::Index>(second.size()));
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write checkpoint " + path);
  os << checkpoint_to_json(model).dump() << '\n';
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read checkpoint " + path);
  return checkpoint_from_json(nlohmann::json::parse(is));
}

}  // namespace musel
