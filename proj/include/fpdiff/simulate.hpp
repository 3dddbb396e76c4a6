#pragma once

// SDE / ODE integrators. Fixed uniform time grids throughout; all randomness
// comes from per-path GaussianRng streams, so runs are reproducible and paths
// are independent. Batch variants step every path at once (one GEMM per step
// for constant-coefficient models) and are bit-identical to the per-path
// integrators under matching stream ids.

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fpdiff/forward_model.hpp"
#include "fpdiff/rng.hpp"
#include "fpdiff/score.hpp"

namespace fpdiff {

// State history on an ascending time grid. Reverse-time integrations are
// stored re-ordered so that times still ascend; logdet[k], when present, is
// the divergence integral accumulated from the integration start to row k.
struct Trajectory {
  Eigen::VectorXd times;
  Eigen::MatrixXd states;  // (n_points) x dim
  std::optional<Eigen::VectorXd> logdet;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, const std::string& what)
      : std::runtime_error("integration diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

using FlowField = std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)>;

inline BatchScoreFn batch_from(const ScoreFn& score) {
  return [score](const Eigen::MatrixXd& x, double t) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = score(x.col(j), t);
    return out;
  };
}

namespace detail {

inline void check_finite_step(const Eigen::VectorXd& x, int step) {
  if (!x.allFinite()) throw DivergenceError(step, "non-finite state");
}

}  // namespace detail

inline Trajectory euler_maruyama_forward(const ForwardModel& model, const Eigen::VectorXd& x0,
                                         int n_steps, RngSpec rng) {
  if (n_steps < 1) throw std::invalid_argument("euler_maruyama_forward: n_steps >= 1");
  model.check_state(x0);
  const double horizon = model.schedule().horizon;
  const double dt = horizon / n_steps;
  GaussianRng gen(rng);

  const bool linear = model.has_constant_coefficients();

  Trajectory traj;
  traj.times.resize(n_steps + 1);
  traj.states.resize(n_steps + 1, model.dim());
  Eigen::VectorXd x = x0;
  traj.times[0] = 0.0;
  traj.states.row(0) = x.transpose();
  for (int k = 0; k < n_steps; ++k) {
    const double t = k * dt;
    const Eigen::VectorXd noise = gen.gaussian_vector(model.dim());
    if (linear) {
      x += dt * (model.drift_matrix(t) * x) +
           std::sqrt(dt) * (model.diffusion_coeff(x, t) * noise);
    } else {
      x += dt * model.drift(x, t) + std::sqrt(dt) * (model.diffusion_coeff(x, t) * noise);
    }
    detail::check_finite_step(x, k + 1);
    traj.times[k + 1] = (k + 1) * dt;
    traj.states.row(k + 1) = x.transpose();
  }
  traj.times[n_steps] = horizon;
  return traj;
}

// Reverse-time denoising SDE from t = horizon down to t = kTimeEps:
//   dY = [f(Y, t) - (g g^T)(Y, t) score(Y, t)] dt + g dW  (backwards in time).
inline Trajectory euler_maruyama_reverse(const ForwardModel& model, const ScoreFn& score,
                                         const Eigen::VectorXd& x_terminal, int n_steps,
                                         RngSpec rng) {
  if (n_steps < 1) throw std::invalid_argument("euler_maruyama_reverse: n_steps >= 1");
  model.check_state(x_terminal);
  const double horizon = model.schedule().horizon;
  const double dt = (horizon - kTimeEps) / n_steps;
  GaussianRng gen(rng);

  Trajectory traj;
  traj.times.resize(n_steps + 1);
  traj.states.resize(n_steps + 1, model.dim());
  Eigen::VectorXd y = x_terminal;
  traj.times[n_steps] = horizon;
  traj.states.row(n_steps) = y.transpose();
  for (int k = 0; k < n_steps; ++k) {
    const double t = horizon - k * dt;
    const Eigen::VectorXd noise = gen.gaussian_vector(model.dim());
    const Eigen::VectorXd rev_drift =
        model.drift(y, t) - model.diffusion_matrix(y, t) * score(y, t);
    y += -dt * rev_drift + std::sqrt(dt) * (model.diffusion_coeff(y, t) * noise);
    detail::check_finite_step(y, k + 1);
    const int row = n_steps - (k + 1);
    traj.times[row] = horizon - (k + 1) * dt;
    traj.states.row(row) = y.transpose();
  }
  traj.times[0] = kTimeEps;
  return traj;
}

// ---------------------------------------------------------------------------
// Batch integrators: column j of the state matrix is path j, driven by stream
// id rng.stream + j. Snapshot indices are step counts (0..n_steps).

inline std::vector<Eigen::MatrixXd> euler_maruyama_forward_batch(
    const ForwardModel& model, const Eigen::MatrixXd& x0s, int n_steps, RngSpec rng,
    const std::vector<int>& snapshot_steps) {
  if (n_steps < 1) throw std::invalid_argument("euler_maruyama_forward_batch: n_steps >= 1");
  if (x0s.rows() != model.dim())
    throw std::invalid_argument("euler_maruyama_forward_batch: dimension mismatch");
  const int d = model.dim();
  const Eigen::Index n_paths = x0s.cols();
  const double dt = model.schedule().horizon / n_steps;
  const bool linear = model.has_constant_coefficients();

  std::vector<GaussianRng> gens;
  gens.reserve(static_cast<std::size_t>(n_paths));
  for (Eigen::Index j = 0; j < n_paths; ++j)
    gens.emplace_back(rng.with_stream(rng.stream + static_cast<std::uint64_t>(j)));

  std::vector<Eigen::MatrixXd> snaps;
  Eigen::MatrixXd x = x0s;
  Eigen::MatrixXd noise(d, n_paths);
  auto take = [&](int step) {
    for (int s : snapshot_steps)
      if (s == step) snaps.push_back(x);
  };
  take(0);
  for (int k = 0; k < n_steps; ++k) {
    const double t = k * dt;
    for (Eigen::Index j = 0; j < n_paths; ++j)
      for (int i = 0; i < d; ++i) noise(i, j) = gens[static_cast<std::size_t>(j)].gaussian();
    if (linear) {
      const Eigen::MatrixXd f = model.drift_matrix(t);
      const Eigen::MatrixXd g = model.diffusion_coeff(x0s.col(0), t);
      x += dt * (f * x) + std::sqrt(dt) * (g * noise);
    } else {
      for (Eigen::Index j = 0; j < n_paths; ++j) {
        const Eigen::VectorXd xj = x.col(j);
        x.col(j) += dt * model.drift(xj, t) +
                    std::sqrt(dt) * (model.diffusion_coeff(xj, t) * noise.col(j));
      }
    }
    if (!x.allFinite()) throw DivergenceError(k + 1, "non-finite state in batch");
    take(k + 1);
  }
  return snaps;
}

inline Eigen::MatrixXd euler_maruyama_reverse_batch(const ForwardModel& model,
                                                    const BatchScoreFn& score,
                                                    const Eigen::MatrixXd& x_terminals,
                                                    int n_steps, RngSpec rng) {
  if (n_steps < 1) throw std::invalid_argument("euler_maruyama_reverse_batch: n_steps >= 1");
  if (x_terminals.rows() != model.dim())
    throw std::invalid_argument("euler_maruyama_reverse_batch: dimension mismatch");
  const int d = model.dim();
  const Eigen::Index n_paths = x_terminals.cols();
  const double horizon = model.schedule().horizon;
  const double dt = (horizon - kTimeEps) / n_steps;
  const bool linear = model.has_constant_coefficients();

  std::vector<GaussianRng> gens;
  gens.reserve(static_cast<std::size_t>(n_paths));
  for (Eigen::Index j = 0; j < n_paths; ++j)
    gens.emplace_back(rng.with_stream(rng.stream + static_cast<std::uint64_t>(j)));

  Eigen::MatrixXd y = x_terminals;
  Eigen::MatrixXd noise(d, n_paths);
  for (int k = 0; k < n_steps; ++k) {
    const double t = horizon - k * dt;
    for (Eigen::Index j = 0; j < n_paths; ++j)
      for (int i = 0; i < d; ++i) noise(i, j) = gens[static_cast<std::size_t>(j)].gaussian();
    const Eigen::MatrixXd s = score(y, t);
    if (linear) {
      const Eigen::MatrixXd f = model.drift_matrix(t);
      const Eigen::MatrixXd gg = model.diffusion_matrix(y.col(0), t);
      const Eigen::MatrixXd g = model.diffusion_coeff(y.col(0), t);
      y += -dt * (f * y - gg * s) + std::sqrt(dt) * (g * noise);
    } else {
      for (Eigen::Index j = 0; j < n_paths; ++j) {
        const Eigen::VectorXd yj = y.col(j);
        const Eigen::VectorXd rev =
            model.drift(yj, t) - model.diffusion_matrix(yj, t) * s.col(j);
        y.col(j) += -dt * rev + std::sqrt(dt) * (model.diffusion_coeff(yj, t) * noise.col(j));
      }
    }
    if (!y.allFinite()) throw DivergenceError(k + 1, "non-finite state in batch");
  }
  return y;
}

// ---------------------------------------------------------------------------
// Probability-flow ODE field (deterministic process with the SDE's marginals):
//   v = f - 1/2 div(g g^T) - 1/2 (g g^T) score.

inline Eigen::VectorXd probability_flow_field(const ForwardModel& model, const ScoreFn& score,
                                              const Eigen::VectorXd& x, double t) {
  const double bp = model.schedule().rate(t);
  return model.drift(x, t) - 0.5 * bp * divergence_term(model.r_inv_field(), x) -
         0.5 * (model.diffusion_matrix(x, t) * score(x, t));
}

enum class FlowDirection { Forward, Reverse };

// Classic RK4 on dx/dt = v(x, t) from t0 to t1 (t1 < t0 integrates backwards).
// With with_logdet the divergence of v (central differences, h = 1e-5) is
// integrated alongside the state; guarded to dim <= 16 where exact
// per-coordinate differences stay cheap.
inline Trajectory integrate_flow_field(const FlowField& v, const Eigen::VectorXd& x0, double t0,
                                       double t1, int n_steps, bool with_logdet) {
  if (n_steps < 1) throw std::invalid_argument("integrate_flow_field: n_steps >= 1");
  const Eigen::Index d = x0.size();
  if (with_logdet && d > 16)
    throw std::domain_error("integrate_flow_field: logdet limited to dim <= 16");
  const double h = (t1 - t0) / n_steps;
  const bool ascending = t1 >= t0;

  auto div_v = [&](const Eigen::VectorXd& x, double t) {
    const double eps = 1e-5;
    double acc = 0.0;
    Eigen::VectorXd xp = x, xm = x;
    for (Eigen::Index i = 0; i < d; ++i) {
      xp[i] = x[i] + eps;
      xm[i] = x[i] - eps;
      acc += (v(xp, t)[i] - v(xm, t)[i]) / (2.0 * eps);
      xp[i] = x[i];
      xm[i] = x[i];
    }
    return acc;
  };

  Eigen::VectorXd x = x0;
  double ld = 0.0;
  Trajectory traj;
  traj.times.resize(n_steps + 1);
  traj.states.resize(n_steps + 1, d);
  if (with_logdet) traj.logdet = Eigen::VectorXd::Zero(n_steps + 1);

  auto store = [&](int k, const Eigen::VectorXd& xs, double ts, double lds) {
    const int row = ascending ? k : n_steps - k;
    traj.times[row] = ts;
    traj.states.row(row) = xs.transpose();
    if (traj.logdet) (*traj.logdet)[row] = lds;
  };
  store(0, x, t0, 0.0);

  for (int k = 0; k < n_steps; ++k) {
    const double t = t0 + k * h;
    const Eigen::VectorXd k1 = v(x, t);
    const Eigen::VectorXd k2 = v(x + 0.5 * h * k1, t + 0.5 * h);
    const Eigen::VectorXd k3 = v(x + 0.5 * h * k2, t + 0.5 * h);
    const Eigen::VectorXd k4 = v(x + h * k3, t + h);
    if (with_logdet) {
      const double l1 = div_v(x, t);
      const double l2 = div_v(x + 0.5 * h * k1, t + 0.5 * h);
      const double l3 = div_v(x + 0.5 * h * k2, t + 0.5 * h);
      const double l4 = div_v(x + h * k3, t + h);
      ld += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    }
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::check_finite_step(x, k + 1);
    store(k + 1, x, t0 + (k + 1) * h, ld);
  }
  return traj;
}

inline Trajectory integrate_flow(const ForwardModel& model, const ScoreFn& score,
                                 const Eigen::VectorXd& x_start, FlowDirection direction,
                                 int n_steps, bool with_logdet) {
  FlowField field = [&model, score](const Eigen::VectorXd& x, double t) {
    return probability_flow_field(model, score, x, t);
  };
  const double horizon = model.schedule().horizon;
  const double t0 = direction == FlowDirection::Forward ? kTimeEps : horizon;
  const double t1 = direction == FlowDirection::Forward ? horizon : kTimeEps;
  return integrate_flow_field(field, x_start, t0, t1, n_steps, with_logdet);
}

}  // namespace fpdiff
