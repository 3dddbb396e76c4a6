#pragma once

// Denoising score matching with a learnable forward process.
//
// The loss draws (x0, t, xi) per example, forms x_t = M(t) x0 + C(t)^{1/2} xi
// through the closed-form kernel, and regresses the network onto the
// conditional score -C(t)^{-1/2} xi. Score-network gradients are exact
// backpropagation; forward-parameter gradients go through the Gaussian
// reparameterization by central finite differences on the (small) parameter
// vector, with common random numbers so the differenced function is
// deterministic.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpdiff/forward_model.hpp"
#include "fpdiff/matrix_param.hpp"
#include "fpdiff/rng.hpp"
#include "fpdiff/schedule.hpp"
#include "fpdiff/score.hpp"
#include "fpdiff/simulate.hpp"

namespace fpdiff {

enum class StageMode { JOINT, MIX, SCORE_ONLY };
enum class LossWeighting { KERNEL_VARIANCE, UNIT };

// Learnable forward-process parameters. FP_NOISE carries spd, FP_DRIFT
// carries anti, FP_GENERAL both, VP neither.
struct ForwardParams {
  std::optional<SpdParam> spd;
  std::optional<AntisymParam> anti;

  Eigen::Index n_params() const {
    Eigen::Index n = 0;
    if (spd) n += spd->orth.generator.size() + spd->log_eigs.size();
    if (anti) n += anti->orth.generator.size() + anti->block_eigs.size();
    return n;
  }

  Eigen::VectorXd pack() const {
    Eigen::VectorXd v(n_params());
    Eigen::Index off = 0;
    auto put = [&](const Eigen::VectorXd& s) {
      v.segment(off, s.size()) = s;
      off += s.size();
    };
    if (spd) {
      put(spd->orth.generator);
      put(spd->log_eigs);
    }
    if (anti) {
      put(anti->orth.generator);
      put(anti->block_eigs);
    }
    return v;
  }

  void unpack(const Eigen::VectorXd& v) {
    if (v.size() != n_params()) throw std::invalid_argument("ForwardParams::unpack: size");
    Eigen::Index off = 0;
    auto get = [&](Eigen::VectorXd& s) {
      s = v.segment(off, s.size());
      off += s.size();
    };
    if (spd) {
      get(spd->orth.generator);
      get(spd->log_eigs);
    }
    if (anti) {
      get(anti->orth.generator);
      get(anti->block_eigs);
    }
  }

  static ForwardParams identity_for(ModelKind kind, int dim) {
    ForwardParams fp;
    if (kind == ModelKind::FP_NOISE || kind == ModelKind::FP_GENERAL) {
      SpdParam p;
      p.orth.dim = dim;
      p.orth.generator = Eigen::VectorXd::Zero(OrthogonalParam::generator_size(dim));
      p.log_eigs = Eigen::VectorXd::Zero(dim);
      fp.spd = std::move(p);
    }
    if (kind == ModelKind::FP_DRIFT || kind == ModelKind::FP_GENERAL) {
      AntisymParam p;
      p.orth.dim = dim;
      p.orth.generator = Eigen::VectorXd::Zero(OrthogonalParam::generator_size(dim));
      p.block_eigs = Eigen::VectorXd::Zero(dim / 2);
      fp.anti = std::move(p);
    }
    return fp;
  }
};

inline ForwardModel realize_model(ModelKind kind, int dim, const TimeSchedule& schedule,
                                  const ForwardParams& fp, double scale_m = 1.0) {
  switch (kind) {
    case ModelKind::VP:
      return ForwardModel::vp(dim, schedule);
    case ModelKind::FP_DRIFT:
      if (!fp.anti) throw std::invalid_argument("realize_model: FP_DRIFT needs anti params");
      return ForwardModel::fp_drift(*fp.anti, schedule);
    case ModelKind::FP_NOISE:
      if (!fp.spd) throw std::invalid_argument("realize_model: FP_NOISE needs spd params");
      return ForwardModel::fp_noise(*fp.spd, schedule);
    case ModelKind::FP_GENERAL:
      if (!fp.spd || !fp.anti)
        throw std::invalid_argument("realize_model: FP_GENERAL needs both parameter sets");
      return ForwardModel::fp_linear(realize_spd(*fp.spd), realize_antisym(*fp.anti), schedule,
                                     scale_m);
    default:
      throw std::domain_error("realize_model: kind not trainable");
  }
}

// ---------------------------------------------------------------------------
// Closed-form kernel operations in the eigenbasis of the forward parameters.
// Mathematically identical to transition_kernel (tested against it) but a
// kernel evaluation per example costs only scalar exponentials.

class KernelOps {
 public:
  KernelOps(ModelKind kind, int dim, const TimeSchedule& schedule, const ForwardParams& fp)
      : kind_(kind), dim_(dim), schedule_(schedule) {
    switch (kind) {
      case ModelKind::VP:
        lam_ = Eigen::VectorXd::Ones(dim);
        basis_ = Eigen::MatrixXd::Identity(dim, dim);
        break;
      case ModelKind::FP_NOISE: {
        if (!fp.spd) throw std::invalid_argument("KernelOps: FP_NOISE needs spd params");
        basis_ = realize_orthogonal(fp.spd->orth);
        lam_ = fp.spd->log_eigs.array().exp();
        break;
      }
      case ModelKind::FP_DRIFT: {
        if (!fp.anti) throw std::invalid_argument("KernelOps: FP_DRIFT needs anti params");
        lam_ = Eigen::VectorXd::Ones(dim);
        basis_ = realize_orthogonal(fp.anti->orth);
        block_eigs_ = fp.anti->block_eigs;
        rotating_ = true;
        break;
      }
      default:
        throw std::domain_error(std::string("KernelOps: no closed-form kernel for ") +
                                to_string(kind));
    }
  }

  double integrated(double t) const { return schedule_.integral(t); }

  // mean-map factor applied to a vector: exp(-(R^-1/2 + w) B(t)) x
  Eigen::VectorXd mean_apply(const Eigen::VectorXd& x, double t) const {
    const double b = integrated(t);
    Eigen::VectorXd y = basis_.transpose() * x;
    if (rotating_) {
      // exp(-w B) acts as a rotation by -l_i B in each parameter block
      for (Eigen::Index k = 0; k < block_eigs_.size(); ++k) {
        const double a = block_eigs_[k] * b;
        const double c = std::cos(a), s = std::sin(a);
        const double u = y[2 * k], v = y[2 * k + 1];
        y[2 * k] = c * u - s * v;
        y[2 * k + 1] = s * u + c * v;
      }
      y *= std::exp(-0.5 * b);
    } else {
      y.array() *= (-0.5 * b * lam_.array()).exp();
    }
    return basis_ * y;
  }

  // C(t)^{1/2} xi and C(t)^{-1/2} xi with C = I - exp(-B R^-1)
  Eigen::VectorXd cov_sqrt_apply(const Eigen::VectorXd& xi, double t) const {
    return cov_pow_apply(xi, t, 0.5);
  }
  Eigen::VectorXd cov_isqrt_apply(const Eigen::VectorXd& xi, double t) const {
    return cov_pow_apply(xi, t, -0.5);
  }

  GaussianKernel kernel(double t) const {
    GaussianKernel k;
    const double b = integrated(t);
    Eigen::MatrixXd mm(dim_, dim_);
    for (int j = 0; j < dim_; ++j) mm.col(j) = mean_apply(Eigen::VectorXd::Unit(dim_, j), t);
    k.mean_map = mm;
    const Eigen::VectorXd cdiag = 1.0 - (-b * lam_.array()).exp();
    k.cov = basis_ * cdiag.asDiagonal() * basis_.transpose();
    k.cov = 0.5 * (k.cov + k.cov.transpose());
    return k;
  }

 private:
  Eigen::VectorXd cov_pow_apply(const Eigen::VectorXd& xi, double t, double p) const {
    const double b = integrated(t);
    Eigen::VectorXd y = basis_.transpose() * xi;
    const Eigen::ArrayXd cdiag = 1.0 - (-b * lam_.array()).exp();
    if (p < 0.0 && cdiag.minCoeff() <= 0.0)
      throw std::domain_error("KernelOps: singular covariance; evaluate at t >= kTimeEps");
    y.array() *= cdiag.pow(p);
    return basis_ * y;
  }

  ModelKind kind_;
  int dim_;
  TimeSchedule schedule_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd lam_;
  Eigen::VectorXd block_eigs_;
  bool rotating_ = false;
};

inline double loss_weight(LossWeighting mode, const TimeSchedule& schedule, double t) {
  if (mode == LossWeighting::UNIT) return 1.0;
  return 1.0 - std::exp(-schedule.integral(t));
}

// ---------------------------------------------------------------------------
// Training state and configuration.

struct TrainConfig {
  MixtureSpec dataset;
  ModelKind kind = ModelKind::VP;
  int dim = 2;
  TimeSchedule schedule{};
  double scale_m = 1.0;
  ScoreNetArch arch{0, {128, 128, 128}, 8};
  double learning_rate = 2e-4;
  int batch_size = 96;
  int iterations = 2000;  // per stage
  StageMode mode = StageMode::SCORE_ONLY;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  LossWeighting weighting = LossWeighting::KERNEL_VARIANCE;
  std::uint64_t seed = 0;
  int log_every = 100;
  double grad_fd_step = 1e-4;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::domain_error("TrainConfig: learning rate > 0");
    if (batch_size < 1) throw std::domain_error("TrainConfig: batch size >= 1");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw std::domain_error("TrainConfig: lambdas >= 0");
    schedule.validate();
    dataset.validate();
  }
};

struct AdamMoments {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  int steps = 0;
};

struct LossRecord {
  int step = 0;
  double loss = 0.0;
  double reg = 0.0;
};

struct TrainState {
  ScoreNet net;
  ForwardParams forward;
  AdamMoments score_moments;
  AdamMoments forward_moments;
  int step = 0;
  std::vector<LossRecord> history;
};

class TrainAbortError : public std::runtime_error {
 public:
  TrainAbortError(int step, double loss, const std::string& diag)
      : std::runtime_error("training aborted at step " + std::to_string(step) +
                           " (loss = " + std::to_string(loss) + "): " + diag),
        step_(step),
        loss_(loss) {}
  int step() const { return step_; }
  double loss() const { return loss_; }

 private:
  int step_;
  double loss_;
};

// Standard Adam update (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) with bias
// correction; moments live in `mom`.
inline void optimizer_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                           AdamMoments& mom, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (mom.m.size() == 0) {
    mom.m = Eigen::VectorXd::Zero(params.size());
    mom.v = Eigen::VectorXd::Zero(params.size());
  }
  if (grad.size() != params.size() || mom.m.size() != params.size())
    throw std::invalid_argument("optimizer_step: shape mismatch");
  mom.steps += 1;
  mom.m = kBeta1 * mom.m + (1.0 - kBeta1) * grad;
  mom.v = kBeta2 * mom.v.array().matrix() + (1.0 - kBeta2) * grad.array().square().matrix();
  const double c1 = 1.0 - std::pow(kBeta1, mom.steps);
  const double c2 = 1.0 - std::pow(kBeta2, mom.steps);
  params.array() -=
      lr * (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + kEps);
}

// ---------------------------------------------------------------------------
// DSM loss.

struct DsmDraws {
  Eigen::MatrixXd x0;  // d x n data samples
  Eigen::VectorXd ts;  // n times in [kTimeEps, horizon]
  Eigen::MatrixXd xi;  // d x n standard Gaussian noise
};

inline DsmDraws draw_dsm_batch(const MixtureSpec& data, const TimeSchedule& schedule, int n,
                               GaussianRng& rng) {
  DsmDraws d;
  d.x0 = data.sample(n, rng);
  d.ts.resize(n);
  for (int j = 0; j < n; ++j)
    d.ts[j] = kTimeEps + (schedule.horizon - kTimeEps) * rng.uniform();
  d.xi = rng.gaussian_matrix(d.x0.rows(), n);
  return d;
}

struct DsmBatch {
  Eigen::MatrixXd xt;       // perturbed samples
  Eigen::MatrixXd targets;  // conditional scores
  Eigen::VectorXd weights;  // loss weights w(t)
};

inline DsmBatch dsm_make_batch(const KernelOps& ops, const TimeSchedule& schedule,
                               LossWeighting weighting, const DsmDraws& draws) {
  const Eigen::Index n = draws.ts.size();
  DsmBatch b;
  b.xt.resize(draws.x0.rows(), n);
  b.targets.resize(draws.x0.rows(), n);
  b.weights.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double t = draws.ts[j];
    b.xt.col(j) = ops.mean_apply(draws.x0.col(j), t) + ops.cov_sqrt_apply(draws.xi.col(j), t);
    b.targets.col(j) = -ops.cov_isqrt_apply(draws.xi.col(j), t);
    b.weights[j] = loss_weight(weighting, schedule, t);
  }
  return b;
}

inline double dsm_loss_given(const ScoreNet& net, ModelKind kind, int dim,
                             const TimeSchedule& schedule, const ForwardParams& fp,
                             LossWeighting weighting, const DsmDraws& draws) {
  const KernelOps ops(kind, dim, schedule, fp);
  const DsmBatch b = dsm_make_batch(ops, schedule, weighting, draws);
  const Eigen::MatrixXd resid = net.eval_batch(b.xt, draws.ts) - b.targets;
  return (resid.array().square().colwise().sum() * b.weights.transpose().array()).sum() /
         static_cast<double>(draws.ts.size());
}

// Monte-Carlo DSM loss of an arbitrary score function. Goes through the
// public transition_kernel route (independent of KernelOps), so it doubles
// as an oracle for the training path.
inline double dsm_loss_value(const ForwardModel& model, const ScoreFn& score,
                             const DsmDraws& draws, LossWeighting weighting) {
  double acc = 0.0;
  const Eigen::Index n = draws.ts.size();
  for (Eigen::Index j = 0; j < n; ++j) {
    const double t = draws.ts[j];
    const GaussianKernel k = transition_kernel(model, t);
    const Eigen::MatrixXd csqrt = spd_sqrt(k.cov);
    const Eigen::VectorXd xt = k.mean_map * draws.x0.col(j) + csqrt * draws.xi.col(j);
    const Eigen::VectorXd target = conditional_score(k, draws.x0.col(j), xt);
    acc += loss_weight(weighting, model.schedule(), t) * (score(xt, t) - target).squaredNorm();
  }
  return acc / static_cast<double>(n);
}

struct DsmResult {
  double loss = 0.0;
  ScoreNetGrad score_grad;
  Eigen::VectorXd forward_grad;  // empty when the forward process is frozen
  DsmBatch batch;                // reused by the regularizer
};

inline DsmResult dsm_loss(const TrainState& state, const TrainConfig& config,
                          const DsmDraws& draws, bool forward_live) {
  DsmResult r;
  const KernelOps ops(config.kind, config.dim, config.schedule, state.forward);
  r.batch = dsm_make_batch(ops, config.schedule, config.weighting, draws);
  r.score_grad =
      state.net.grad_weighted_mse(r.batch.xt, draws.ts, r.batch.targets, r.batch.weights);
  r.loss = r.score_grad.loss;

  if (forward_live && state.forward.n_params() > 0) {
    const Eigen::VectorXd theta = state.forward.pack();
    r.forward_grad.resize(theta.size());
    ForwardParams fp = state.forward;
    const double h = config.grad_fd_step;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      fp.unpack(tp);
      const double lp = dsm_loss_given(state.net, config.kind, config.dim, config.schedule, fp,
                                       config.weighting, draws);
      fp.unpack(tm);
      const double lm = dsm_loss_given(state.net, config.kind, config.dim, config.schedule, fp,
                                       config.weighting, draws);
      r.forward_grad[i] = (lp - lm) / (2.0 * h);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Probability-flow regularizer L_reg = l1 E||v_pc||^2 + l2 E (eps^T v_pc)^2,
// estimated at the DSM batch's perturbed samples. Gradients flow to the
// forward-process parameters only.

inline double reg_penalty_given(const ScoreNet& net, ModelKind kind, int dim,
                                const TimeSchedule& schedule, const ForwardParams& fp,
                                double lambda1, double lambda2, const DsmDraws& draws,
                                const Eigen::MatrixXd& eps) {
  const KernelOps ops(kind, dim, schedule, fp);
  const ForwardModel model = realize_model(kind, dim, schedule, fp);
  const Eigen::MatrixXd& r_inv = model.r_inv_field().constant_matrix();

  // rebuild x_t under these forward parameters (reparameterized draws)
  const Eigen::Index n = draws.ts.size();
  Eigen::MatrixXd xt(dim, n);
  for (Eigen::Index j = 0; j < n; ++j)
    xt.col(j) =
        ops.mean_apply(draws.x0.col(j), draws.ts[j]) + ops.cov_sqrt_apply(draws.xi.col(j), draws.ts[j]);

  const Eigen::MatrixXd s = net.eval_batch(xt, draws.ts);
  double acc1 = 0.0, acc2 = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double t = draws.ts[j];
    const Eigen::VectorXd v =
        model.drift_matrix(t) * xt.col(j) - 0.5 * schedule.rate(t) * (r_inv * s.col(j));
    acc1 += v.squaredNorm();
    const double proj = eps.col(j).dot(v);
    acc2 += proj * proj;
  }
  return (lambda1 * acc1 + lambda2 * acc2) / static_cast<double>(n);
}

struct RegResult {
  double penalty = 0.0;
  Eigen::VectorXd forward_grad;
};

inline RegResult reg_penalty(const TrainState& state, const TrainConfig& config,
                             const DsmDraws& draws, const Eigen::MatrixXd& eps,
                             bool forward_live) {
  RegResult r;
  if (config.lambda1 == 0.0 && config.lambda2 == 0.0) {
    if (forward_live && state.forward.n_params() > 0)
      r.forward_grad = Eigen::VectorXd::Zero(state.forward.n_params());
    return r;
  }
  r.penalty = reg_penalty_given(state.net, config.kind, config.dim, config.schedule,
                                state.forward, config.lambda1, config.lambda2, draws, eps);
  if (forward_live && state.forward.n_params() > 0) {
    const Eigen::VectorXd theta = state.forward.pack();
    r.forward_grad.resize(theta.size());
    ForwardParams fp = state.forward;
    const double h = config.grad_fd_step;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      fp.unpack(tp);
      const double pp = reg_penalty_given(state.net, config.kind, config.dim, config.schedule,
                                          fp, config.lambda1, config.lambda2, draws, eps);
      fp.unpack(tm);
      const double pm = reg_penalty_given(state.net, config.kind, config.dim, config.schedule,
                                          fp, config.lambda1, config.lambda2, draws, eps);
      r.forward_grad[i] = (pp - pm) / (2.0 * h);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training driver. JOINT runs one stage with everything live; MIX runs a
// joint stage then a score-only stage with the forward process frozen;
// SCORE_ONLY keeps the forward process fixed throughout.

using StageCallback = std::function<void(int stage, const TrainState&)>;

inline TrainState fit(const TrainConfig& config, const StageCallback& on_stage = {}) {
  config.validate();
  if (config.dataset.dim() != config.dim)
    throw std::invalid_argument("fit: dataset dimension mismatch");

  ScoreNetArch arch = config.arch;
  arch.data_dim = config.dim;

  TrainState state;
  state.net = ScoreNet::init(arch, config.schedule, RngSpec{config.seed, hash_purpose("init")});
  state.forward = ForwardParams::identity_for(config.kind, config.dim);

  GaussianRng data_rng(RngSpec{config.seed, hash_purpose("train-data")});
  GaussianRng reg_rng(RngSpec{config.seed, hash_purpose("train-reg")});

  const bool has_reg = config.lambda1 > 0.0 || config.lambda2 > 0.0;
  const int n_stages = config.mode == StageMode::MIX ? 2 : 1;

  for (int stage = 0; stage < n_stages; ++stage) {
    const bool forward_live =
        (config.mode == StageMode::JOINT && stage == 0) ||
        (config.mode == StageMode::MIX && stage == 0);
    for (int it = 0; it < config.iterations; ++it) {
      const DsmDraws draws =
          draw_dsm_batch(config.dataset, config.schedule, config.batch_size, data_rng);
      DsmResult dsm;
      RegResult reg;
      try {
        dsm = dsm_loss(state, config, draws, forward_live);
        if (has_reg && forward_live) {
          const Eigen::MatrixXd eps = reg_rng.gaussian_matrix(config.dim, config.batch_size);
          reg = reg_penalty(state, config, draws, eps, forward_live);
        }
      } catch (const TrainAbortError&) {
        throw;
      } catch (const std::exception& e) {
        // parameters drifted somewhere the kernel machinery cannot follow
        throw TrainAbortError(state.step, std::numeric_limits<double>::quiet_NaN(), e.what());
      }

      if (!std::isfinite(dsm.loss) || !std::isfinite(reg.penalty)) {
        throw TrainAbortError(
            state.step, dsm.loss,
            "non-finite loss; |score params| = " + std::to_string(state.net.pack().norm()) +
                ", |forward params| = " + std::to_string(state.forward.pack().norm()));
      }

      Eigen::VectorXd score_params = state.net.pack();
      optimizer_step(score_params, ScoreNet::pack_grad(dsm.score_grad), state.score_moments,
                     config.learning_rate);
      state.net.unpack(score_params);

      if (forward_live && state.forward.n_params() > 0) {
        Eigen::VectorXd fwd = state.forward.pack();
        Eigen::VectorXd grad = dsm.forward_grad;
        if (reg.forward_grad.size() == grad.size() && has_reg) grad += reg.forward_grad;
        optimizer_step(fwd, grad, state.forward_moments, config.learning_rate);
        state.forward.unpack(fwd);
      }

      state.step += 1;
      if (state.step % config.log_every == 0 || it + 1 == config.iterations)
        state.history.push_back({state.step, dsm.loss, reg.penalty});
    }
    if (on_stage) on_stage(stage, state);
  }
  return state;
}

}  // namespace fpdiff
