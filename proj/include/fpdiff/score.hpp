#pragma once

// Score functions: exact oracles for Gaussian-mixture data pushed through the
// closed-form transition kernel, and a small fully-connected score network
// with explicit backpropagation (verified against finite differences in the
// test suite; no autodiff dependency).

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "fpdiff/forward_model.hpp"
#include "fpdiff/rng.hpp"
#include "fpdiff/schedule.hpp"

namespace fpdiff {

using ScoreFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)>;
using BatchScoreFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, double)>;

inline Eigen::VectorXd gaussian_score(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                      const Eigen::VectorXd& x) {
  if (mean.size() != x.size() || cov.rows() != x.size() || cov.cols() != x.size())
    throw std::invalid_argument("gaussian_score: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("gaussian_score: covariance not positive definite");
  return -llt.solve(x - mean);
}

// Conditional score grad_x log p_t(x_t | x_0) of a Gaussian transition kernel.
inline Eigen::VectorXd conditional_score(const GaussianKernel& kernel, const Eigen::VectorXd& x0,
                                         const Eigen::VectorXd& xt) {
  Eigen::LLT<Eigen::MatrixXd> llt(kernel.cov);
  if (llt.info() != Eigen::Success)
    throw std::domain_error(
        "conditional_score: singular kernel covariance; evaluate at t >= kTimeEps");
  return -llt.solve(xt - kernel.mean_map * x0);
}

struct MixtureSpec {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
  int n_components() const { return static_cast<int>(weights.size()); }

  void validate() const {
    if (weights.size() == 0 ||
        static_cast<std::size_t>(weights.size()) != means.size() ||
        means.size() != covs.size())
      throw std::invalid_argument("MixtureSpec: component count mismatch");
    if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-12)
      throw std::domain_error("MixtureSpec: weights must be a simplex vector");
    for (std::size_t k = 0; k < covs.size(); ++k) {
      if (means[k].size() != means[0].size())
        throw std::invalid_argument("MixtureSpec: mean dimension mismatch");
      Eigen::LLT<Eigen::MatrixXd> llt(covs[k]);
      if (llt.info() != Eigen::Success)
        throw std::domain_error("MixtureSpec: covariance not SPD");
    }
  }

  Eigen::MatrixXd sample(Eigen::Index n, GaussianRng& rng) const {
    validate();
    const int d = dim();
    std::vector<Eigen::MatrixXd> chol;
    chol.reserve(covs.size());
    for (const auto& c : covs) chol.push_back(Eigen::LLT<Eigen::MatrixXd>(c).matrixL());
    Eigen::MatrixXd out(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double u = rng.uniform();
      double acc = 0.0;
      int k = n_components() - 1;
      for (int i = 0; i < n_components(); ++i) {
        acc += weights[i];
        if (u <= acc) {
          k = i;
          break;
        }
      }
      out.col(j) = means[static_cast<std::size_t>(k)] +
                   chol[static_cast<std::size_t>(k)] * rng.gaussian_vector(d);
    }
    return out;
  }
};

namespace detail {

struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd prec;
  double lognorm;
};

inline GaussianComponent make_component(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::Index d = mean.size();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("mixture component covariance not positive definite");
  GaussianComponent c;
  c.mean = mean;
  c.prec = llt.solve(Eigen::MatrixXd::Identity(d, d));
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  c.lognorm = -0.5 * (d * std::log(2.0 * M_PI) + logdet);
  return c;
}

}  // namespace detail

// Mixture law of X_t when X_0 ~ mix and X_t | X_0 follows the model's kernel:
// component k becomes N(M mu_k, M S_k M^T + C). Log-sum-exp stabilized.
class MixtureAtTime {
 public:
  MixtureAtTime(const MixtureSpec& mix, const GaussianKernel& kernel) {
    mix.validate();
    log_weights_ = mix.weights.array().log();
    for (int k = 0; k < mix.n_components(); ++k) {
      const Eigen::VectorXd mean = kernel.mean_map * mix.means[static_cast<std::size_t>(k)];
      Eigen::MatrixXd cov = kernel.mean_map * mix.covs[static_cast<std::size_t>(k)] *
                                kernel.mean_map.transpose() +
                            kernel.cov;
      cov = 0.5 * (cov + cov.transpose());
      comps_.push_back(detail::make_component(mean, cov));
    }
  }

  double log_density(const Eigen::VectorXd& x) const {
    Eigen::VectorXd logp(static_cast<Eigen::Index>(comps_.size()));
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      const Eigen::VectorXd c = x - comps_[k].mean;
      logp[static_cast<Eigen::Index>(k)] = log_weights_[static_cast<Eigen::Index>(k)] +
                                           comps_[k].lognorm - 0.5 * c.dot(comps_[k].prec * c);
    }
    const double m = logp.maxCoeff();
    return m + std::log((logp.array() - m).exp().sum());
  }

  Eigen::VectorXd score(const Eigen::VectorXd& x) const {
    const Eigen::Index n = static_cast<Eigen::Index>(comps_.size());
    Eigen::VectorXd logp(n);
    std::vector<Eigen::VectorXd> comp_scores(comps_.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      const Eigen::VectorXd c = x - comps_[k].mean;
      const Eigen::VectorXd pc = comps_[k].prec * c;
      logp[static_cast<Eigen::Index>(k)] = log_weights_[static_cast<Eigen::Index>(k)] +
                                           comps_[k].lognorm - 0.5 * c.dot(pc);
      comp_scores[k] = -pc;
    }
    const double m = logp.maxCoeff();
    const Eigen::VectorXd resp = (logp.array() - m).exp();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(x.size());
    for (std::size_t k = 0; k < comps_.size(); ++k)
      s += resp[static_cast<Eigen::Index>(k)] * comp_scores[k];
    return s / resp.sum();
  }

 private:
  Eigen::VectorXd log_weights_;
  std::vector<detail::GaussianComponent> comps_;
};

inline Eigen::VectorXd mixture_score_at_time(const MixtureSpec& mix, const ForwardModel& model,
                                             const Eigen::VectorXd& x, double t) {
  return MixtureAtTime(mix, transition_kernel(model, t)).score(x);
}

// Reusable exact score of mixture data under a kernel-supported model.
// Integration grids revisit the same times, so the pushed-forward mixture is
// cached per distinct t.
inline ScoreFn make_mixture_score(MixtureSpec mix, ForwardModel model) {
  auto cache = std::make_shared<std::map<double, MixtureAtTime>>();
  return [mix = std::move(mix), model = std::move(model), cache](const Eigen::VectorXd& x,
                                                                 double t) {
    auto it = cache->find(t);
    if (it == cache->end())
      it = cache->emplace(t, MixtureAtTime(mix, transition_kernel(model, t))).first;
    return it->second.score(x);
  };
}

// ---------------------------------------------------------------------------
// Score network: MLP on [x; time features], tanh hidden activations, linear
// output of the data dimension. Time enters as sinusoidal features of the
// normalized integrated schedule tau = B(t)/B(T) at n_freqs dyadic
// frequencies.

struct ScoreNetArch {
  int data_dim = 0;
  std::vector<int> hidden;
  int n_freqs = 8;

  int input_dim() const { return data_dim + 2 * n_freqs; }
};

struct ScoreNetGrad {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  double loss = 0.0;
};

class ScoreNet {
 public:
  ScoreNet() = default;

  // He-style init: W ~ N(0, 2/fan_in), biases zero.
  static ScoreNet init(const ScoreNetArch& arch, const TimeSchedule& schedule, RngSpec rng) {
    if (arch.data_dim <= 0 || arch.n_freqs <= 0)
      throw std::invalid_argument("ScoreNet: invalid architecture");
    ScoreNet net;
    net.arch_ = arch;
    net.schedule_ = schedule;
    GaussianRng gen(rng);
    int in = arch.input_dim();
    std::vector<int> outs = arch.hidden;
    outs.push_back(arch.data_dim);
    for (int out : outs) {
      const double std = std::sqrt(2.0 / in);
      Eigen::MatrixXd w(out, in);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = std * gen.gaussian();
      net.weights_.push_back(std::move(w));
      net.biases_.push_back(Eigen::VectorXd::Zero(out));
      in = out;
    }
    return net;
  }

  const ScoreNetArch& arch() const { return arch_; }
  const TimeSchedule& schedule() const { return schedule_; }
  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

  Eigen::MatrixXd features(const Eigen::MatrixXd& x, const Eigen::VectorXd& ts) const {
    const Eigen::Index n = x.cols();
    Eigen::MatrixXd in(arch_.input_dim(), n);
    in.topRows(arch_.data_dim) = x;
    const double b_total = schedule_.integral(schedule_.horizon);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double tau = schedule_.integral(ts[j]) / b_total;
      for (int f = 0; f < arch_.n_freqs; ++f) {
        const double a = 2.0 * M_PI * std::pow(2.0, f) * tau;
        in(arch_.data_dim + 2 * f, j) = std::sin(a);
        in(arch_.data_dim + 2 * f + 1, j) = std::cos(a);
      }
    }
    return in;
  }

  Eigen::MatrixXd eval_batch(const Eigen::MatrixXd& x, const Eigen::VectorXd& ts) const {
    check_shapes(x, ts);
    Eigen::MatrixXd h = features(x, ts);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = (weights_[l] * h).colwise() + biases_[l];
      if (l + 1 < weights_.size()) h = h.array().tanh();
    }
    return h;
  }

  Eigen::MatrixXd eval_batch(const Eigen::MatrixXd& x, double t) const {
    return eval_batch(x, Eigen::VectorXd::Constant(x.cols(), t));
  }

  Eigen::VectorXd eval(const Eigen::VectorXd& x, double t) const {
    return eval_batch(Eigen::MatrixXd(x), Eigen::VectorXd::Constant(1, t)).col(0);
  }

  // Gradient of  L = 1/N sum_j w_j || net(x_j, t_j) - target_j ||^2  with
  // respect to every weight and bias, plus the loss value itself.
  ScoreNetGrad grad_weighted_mse(const Eigen::MatrixXd& x, const Eigen::VectorXd& ts,
                                 const Eigen::MatrixXd& targets,
                                 const Eigen::VectorXd& sample_weights) const {
    check_shapes(x, ts);
    const Eigen::Index n = x.cols();
    if (targets.cols() != n || sample_weights.size() != n ||
        targets.rows() != arch_.data_dim)
      throw std::invalid_argument("ScoreNet: batch shape mismatch");

    const std::size_t n_layers = weights_.size();
    std::vector<Eigen::MatrixXd> acts(n_layers + 1);
    acts[0] = features(x, ts);
    for (std::size_t l = 0; l < n_layers; ++l) {
      acts[l + 1] = (weights_[l] * acts[l]).colwise() + biases_[l];
      if (l + 1 < n_layers) acts[l + 1] = acts[l + 1].array().tanh();
    }

    const Eigen::MatrixXd resid = acts[n_layers] - targets;
    ScoreNetGrad g;
    g.loss = (resid.array().square().colwise().sum() *
              sample_weights.transpose().array()).sum() / static_cast<double>(n);

    Eigen::MatrixXd delta =
        (2.0 / static_cast<double>(n)) *
        (resid.array().rowwise() * sample_weights.transpose().array()).matrix();
    g.weights.resize(n_layers);
    g.biases.resize(n_layers);
    for (std::size_t l = n_layers; l-- > 0;) {
      g.weights[l] = delta * acts[l].transpose();
      g.biases[l] = delta.rowwise().sum();
      if (l > 0) {
        delta = (weights_[l].transpose() * delta).array() *
                (1.0 - acts[l].array().square());
      }
    }
    return g;
  }

  Eigen::Index n_params() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l)
      n += weights_[l].size() + biases_[l].size();
    return n;
  }

  Eigen::VectorXd pack() const {
    Eigen::VectorXd v(n_params());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      v.segment(off, weights_[l].size()) =
          Eigen::Map<const Eigen::VectorXd>(weights_[l].data(), weights_[l].size());
      off += weights_[l].size();
      v.segment(off, biases_[l].size()) = biases_[l];
      off += biases_[l].size();
    }
    return v;
  }

  void unpack(const Eigen::VectorXd& v) {
    if (v.size() != n_params()) throw std::invalid_argument("ScoreNet::unpack: size mismatch");
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Eigen::Map<Eigen::VectorXd>(weights_[l].data(), weights_[l].size()) =
          v.segment(off, weights_[l].size());
      off += weights_[l].size();
      biases_[l] = v.segment(off, biases_[l].size());
      off += biases_[l].size();
    }
  }

  static Eigen::VectorXd pack_grad(const ScoreNetGrad& g) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < g.weights.size(); ++l)
      n += g.weights[l].size() + g.biases[l].size();
    Eigen::VectorXd v(n);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < g.weights.size(); ++l) {
      v.segment(off, g.weights[l].size()) =
          Eigen::Map<const Eigen::VectorXd>(g.weights[l].data(), g.weights[l].size());
      off += g.weights[l].size();
      v.segment(off, g.biases[l].size()) = g.biases[l];
      off += g.biases[l].size();
    }
    return v;
  }

 private:
  void check_shapes(const Eigen::MatrixXd& x, const Eigen::VectorXd& ts) const {
    if (weights_.empty()) throw std::logic_error("ScoreNet: uninitialized");
    if (x.rows() != arch_.data_dim || ts.size() != x.cols())
      throw std::invalid_argument("ScoreNet: input shape mismatch");
  }

  ScoreNetArch arch_;
  TimeSchedule schedule_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

}  // namespace fpdiff
