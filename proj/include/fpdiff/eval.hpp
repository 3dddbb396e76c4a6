#pragma once

// Quantitative evaluation: moments against N(0, I), Gaussian and sliced
// Wasserstein-2 distances, probability-flow likelihood in bits/dim, the
// path-space ELBO, the 3D projection-alignment score, and the anisotropic
// mixing-rate comparison.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fpdiff/forward_model.hpp"
#include "fpdiff/rng.hpp"
#include "fpdiff/score.hpp"
#include "fpdiff/simulate.hpp"

namespace fpdiff {

// Squared W2 distance from N(0, I) to N(mu, Sigma):
//   ||mu||^2 + Tr(I + Sigma - 2 Sigma^{1/2}) = ||mu||^2 + sum_i (1 - sqrt(l_i))^2.
inline double w2_gaussian(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() != mu.size())
    throw std::invalid_argument("w2_gaussian: dimension mismatch");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::domain_error("w2_gaussian: covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::domain_error("w2_gaussian: covariance not positive definite");
  return mu.squaredNorm() + (1.0 - es.eigenvalues().array().sqrt()).square().sum();
}

struct MomentReport {
  Eigen::Index n = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (n-1 divisor)
  double max_mean_abs = 0.0;
  double max_cov_dev = 0.0;  // entrywise deviation from the N(0, I) target
};

inline MomentReport empirical_moments(const Eigen::MatrixXd& samples) {
  if (samples.cols() < 2) throw std::invalid_argument("empirical_moments: need >= 2 samples");
  MomentReport r;
  r.n = samples.cols();
  r.mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - r.mean;
  r.cov = centered * centered.transpose() / static_cast<double>(r.n - 1);
  r.max_mean_abs = r.mean.cwiseAbs().maxCoeff();
  r.max_cov_dev =
      (r.cov - Eigen::MatrixXd::Identity(samples.rows(), samples.rows())).cwiseAbs().maxCoeff();
  return r;
}

namespace detail {

// 1D W2 between sorted projections; interpolates quantiles when the sample
// counts differ.
inline double w2_1d(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = std::max(a.size(), b.size());
  auto quantile = [](const std::vector<double>& s, double q) {
    const double pos = q * static_cast<double>(s.size()) - 0.5;
    if (pos <= 0.0) return s.front();
    if (pos >= static_cast<double>(s.size() - 1)) return s.back();
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return (1.0 - frac) * s[lo] + frac * s[lo + 1];
  };
  double acc = 0.0;
  if (a.size() == b.size()) {
    for (std::size_t i = 0; i < n; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      const double d = quantile(a, q) - quantile(b, q);
      acc += d * d;
    }
  }
  return std::sqrt(acc / static_cast<double>(n));
}

}  // namespace detail

// Average 1D W2 over random unit directions (columns of samples are points).
inline double sliced_w2(const Eigen::MatrixXd& samples_a, const Eigen::MatrixXd& samples_b,
                        int n_projections, RngSpec rng) {
  if (samples_a.rows() != samples_b.rows())
    throw std::invalid_argument("sliced_w2: dimension mismatch");
  if (n_projections < 1) throw std::invalid_argument("sliced_w2: n_projections >= 1");
  GaussianRng gen(rng);
  const Eigen::Index d = samples_a.rows();
  double acc = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    Eigen::VectorXd u = gen.gaussian_vector(d);
    const double norm = u.norm();
    u = norm > 0.0 ? Eigen::VectorXd(u / norm) : Eigen::VectorXd::Unit(d, 0);
    const Eigen::VectorXd pa = samples_a.transpose() * u;
    const Eigen::VectorXd pb = samples_b.transpose() * u;
    acc += detail::w2_1d(std::vector<double>(pa.data(), pa.data() + pa.size()),
                         std::vector<double>(pb.data(), pb.data() + pb.size()));
  }
  return acc / n_projections;
}

// ---------------------------------------------------------------------------
// Probability-flow likelihood: encode data to t = horizon along the flow,
// score against the N(0, I) prior, and correct by the accumulated divergence
// integral (instantaneous change of variables).

struct NllReport {
  double bits_per_dim = 0.0;
  double stderr_bits = 0.0;
  Eigen::Index n = 0;
};

inline NllReport nll_bits_per_dim(const ForwardModel& model, const ScoreFn& score,
                                  const Eigen::MatrixXd& data, int n_steps) {
  if (model.dim() > 16)
    throw std::domain_error("nll_bits_per_dim: exact divergence limited to dim <= 16");
  const int d = model.dim();
  const double ln2 = std::log(2.0);
  std::vector<double> bits;
  bits.reserve(static_cast<std::size_t>(data.cols()));
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const Trajectory traj =
        integrate_flow(model, score, data.col(j), FlowDirection::Forward, n_steps, true);
    const Eigen::VectorXd z = traj.states.row(traj.states.rows() - 1).transpose();
    const double log_prior = -0.5 * (d * std::log(2.0 * M_PI) + z.squaredNorm());
    const double loglik = log_prior + (*traj.logdet)[traj.logdet->size() - 1];
    bits.push_back(-loglik / (d * ln2));
  }
  NllReport r;
  r.n = static_cast<Eigen::Index>(bits.size());
  double mean = 0.0;
  for (double b : bits) mean += b;
  mean /= static_cast<double>(bits.size());
  double var = 0.0;
  for (double b : bits) var += (b - mean) * (b - mean);
  var /= std::max<std::size_t>(1, bits.size() - 1);
  r.bits_per_dim = mean;
  r.stderr_bits = std::sqrt(var / static_cast<double>(bits.size()));
  return r;
}

// ---------------------------------------------------------------------------
// Path-space ELBO
//   E[log p_T(X_T) | X_0 = x]
//   - int_0^T E[ 1/2 ||s||^2_{g g^T} + div(g g^T s - f) | X_0 = x ] dt,
// estimated with n_mc forward Euler-Maruyama trajectories; the divergence is
// exact per-coordinate central differencing (dim <= 16).

struct ElboReport {
  double value = 0.0;
  double stderr_value = 0.0;
  int n_mc = 0;
};

inline ElboReport elbo_path(const ForwardModel& model, const ScoreFn& score,
                            const Eigen::VectorXd& x, int n_mc, int n_steps, RngSpec rng) {
  if (model.dim() > 16)
    throw std::domain_error("elbo_path: exact divergence limited to dim <= 16");
  model.check_state(x);
  const int d = model.dim();
  const double horizon = model.schedule().horizon;
  const double dt = (horizon - kTimeEps) / n_steps;

  auto u_field = [&](const Eigen::VectorXd& y, double t) {
    return Eigen::VectorXd(model.diffusion_matrix(y, t) * score(y, t) - model.drift(y, t));
  };
  auto div_u = [&](const Eigen::VectorXd& y, double t) {
    const double h = 1e-5;
    double acc = 0.0;
    Eigen::VectorXd yp = y, ym = y;
    for (int i = 0; i < d; ++i) {
      yp[i] = y[i] + h;
      ym[i] = y[i] - h;
      acc += (u_field(yp, t)[i] - u_field(ym, t)[i]) / (2.0 * h);
      yp[i] = y[i];
      ym[i] = y[i];
    }
    return acc;
  };

  std::vector<double> estimates;
  estimates.reserve(static_cast<std::size_t>(n_mc));
  for (int path = 0; path < n_mc; ++path) {
    GaussianRng gen(rng.with_stream(rng.stream + static_cast<std::uint64_t>(path)));
    Eigen::VectorXd y = x;
    double integral = 0.0;
    for (int k = 0; k < n_steps; ++k) {
      const double t = kTimeEps + k * dt;
      const Eigen::VectorXd s = score(y, t);
      const double a =
          0.5 * s.dot(model.diffusion_matrix(y, t) * s) + div_u(y, t);
      integral += a * dt;
      y += dt * model.drift(y, t) +
           std::sqrt(dt) * (model.diffusion_coeff(y, t) * gen.gaussian_vector(d));
      if (!y.allFinite()) throw DivergenceError(k + 1, "elbo trajectory diverged");
    }
    const double log_prior = -0.5 * (d * std::log(2.0 * M_PI) + y.squaredNorm());
    estimates.push_back(log_prior - integral);
  }

  ElboReport r;
  r.n_mc = n_mc;
  double mean = 0.0;
  for (double e : estimates) mean += e;
  mean /= static_cast<double>(estimates.size());
  double var = 0.0;
  for (double e : estimates) var += (e - mean) * (e - mean);
  var /= std::max<std::size_t>(1, estimates.size() - 1);
  r.value = mean;
  r.stderr_value = std::sqrt(var / static_cast<double>(estimates.size()));
  return r;
}

// ---------------------------------------------------------------------------
// Alignment of a 3D field with the vertical projection field onto the plane
// z = plane_z: v_proj = (0, 0, -1) above the plane and (0, 0, 1) below it.
// Cosine-based, so positive rescaling of the field leaves the score fixed.

struct PlaneGridSpec {
  double x_min = -3.0, x_max = 3.0;
  int nx = 21;
  double z_min = -1.0, z_max = 5.0;
  int nz = 21;
  double y0 = 0.0;
};

struct AlignmentReport {
  double mean_alignment = 0.0;
  Eigen::Index n_points = 0;
  Eigen::Index n_excluded = 0;
  std::vector<double> cosines;
};

inline AlignmentReport alignment_metric(
    const std::function<Eigen::Vector3d(const Eigen::Vector3d&)>& field, double plane_z,
    const PlaneGridSpec& grid) {
  if (grid.nx < 2 || grid.nz < 2) throw std::invalid_argument("alignment_metric: grid too small");
  AlignmentReport r;
  double acc = 0.0;
  for (int ix = 0; ix < grid.nx; ++ix) {
    const double x = grid.x_min + (grid.x_max - grid.x_min) * ix / (grid.nx - 1);
    for (int iz = 0; iz < grid.nz; ++iz) {
      const double z = grid.z_min + (grid.z_max - grid.z_min) * iz / (grid.nz - 1);
      if (std::abs(z - plane_z) < 1e-12) {
        ++r.n_excluded;
        continue;
      }
      const Eigen::Vector3d v = field(Eigen::Vector3d(x, grid.y0, z));
      const double norm = v.norm();
      if (norm < 1e-12) {
        ++r.n_excluded;
        continue;
      }
      const double cosine = (z > plane_z ? -v.z() : v.z()) / norm;
      r.cosines.push_back(cosine);
      acc += cosine;
      ++r.n_points;
    }
  }
  if (r.n_points > 0) r.mean_alignment = acc / static_cast<double>(r.n_points);
  return r;
}

// ---------------------------------------------------------------------------
// Anisotropic mixing comparison at matched noise budget Tr(R^-1): the first
// integrated time B(t) at which the forward marginal's sliced W2 to N(0, I)
// drops below the threshold, for each model. Both models consume identical
// random streams.

struct MixingResult {
  double b_cross = 0.0;
  bool censored = false;
};

inline MixingResult mixing_time(const ForwardModel& model, const Eigen::MatrixXd& data,
                                double threshold, RngSpec rng, int n_steps, int n_checks,
                                int n_projections) {
  const Eigen::MatrixXd reference =
      GaussianRng(rng.derive("mixing-reference")).gaussian_matrix(model.dim(), data.cols());
  std::vector<int> snaps;
  for (int c = 1; c <= n_checks; ++c) snaps.push_back(c * n_steps / n_checks);
  const auto states =
      euler_maruyama_forward_batch(model, data, n_steps, rng.derive("mixing-paths"), snaps);
  const RngSpec proj = rng.derive("mixing-projections");
  for (std::size_t c = 0; c < snaps.size(); ++c) {
    const double sw2 = sliced_w2(states[c], reference, n_projections, proj);
    if (sw2 < threshold) {
      const double t = model.schedule().horizon * snaps[c] / n_steps;
      return {model.schedule().integral(t), false};
    }
  }
  return {model.schedule().integral(model.schedule().horizon), true};
}

inline std::pair<MixingResult, MixingResult> mixing_rate_compare(
    const ForwardModel& iso_model, const ForwardModel& aniso_model, const Eigen::MatrixXd& data,
    double threshold, RngSpec rng, int n_steps = 400, int n_checks = 40,
    int n_projections = 64) {
  const double tr_iso = iso_model.r_inv_field().constant_matrix().trace();
  const double tr_aniso = aniso_model.r_inv_field().constant_matrix().trace();
  if (std::abs(tr_iso - tr_aniso) > 1e-9)
    throw std::domain_error("mixing_rate_compare: Tr(R^-1) must match within 1e-9");
  return {mixing_time(iso_model, data, threshold, rng, n_steps, n_checks, n_projections),
          mixing_time(aniso_model, data, threshold, rng, n_steps, n_checks, n_projections)};
}

}  // namespace fpdiff
