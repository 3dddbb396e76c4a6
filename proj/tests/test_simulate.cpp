#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <Eigen/Dense>

#include "fpdiff/forward_model.hpp"
#include "fpdiff/schedule.hpp"
#include "fpdiff/score.hpp"
#include "fpdiff/simulate.hpp"
#include "oracles.hpp"

using namespace fpdiff;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const TimeSchedule kDefault{0.1, 20.0, 1.0};

ForwardModel degenerate_model(int dim) {
  // zero metric and zero symplectic form: f = 0 and g = 0 everywhere
  return ForwardModel::fp_general(SpatialMetricField::constant(MatrixXd::Zero(dim, dim)),
                                  MatrixXd::Zero(dim, dim), kDefault);
}

}  // namespace

TEST_CASE("degenerate dynamics stay put") {
  const auto model = degenerate_model(2);
  const VectorXd x0 = Eigen::Vector2d(0.7, -1.1);
  const auto traj = euler_maruyama_forward(model, x0, 50, {42, 0});
  CHECK(traj.states.rows() == 51);
  for (int k = 0; k <= 50; ++k)
    CHECK((traj.states.row(k).transpose() - x0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(traj.times[0] == 0.0);
  CHECK(traj.times[50] == kDefault.horizon);
}

TEST_CASE("identical rng spec reproduces trajectories bit-exactly") {
  const auto model = ForwardModel::vp(3, kDefault);
  GaussianRng seed_rng({5, 5});
  const VectorXd x0 = seed_rng.gaussian_vector(3);
  const auto a = euler_maruyama_forward(model, x0, 100, {123, 7});
  const auto b = euler_maruyama_forward(model, x0, 100, {123, 7});
  CHECK(a.states == b.states);
  const auto c = euler_maruyama_forward(model, x0, 100, {123, 8});
  CHECK(a.states != c.states);
}

TEST_CASE("batch forward matches per-path integration bit-exactly") {
  SpdParam p{{2, VectorXd::Constant(1, 0.4)}, Eigen::Vector2d(0.3, -0.5)};
  const auto model = ForwardModel::fp_noise(p, kDefault);
  GaussianRng seed_rng({5, 6});
  const MatrixXd x0s = seed_rng.gaussian_matrix(2, 5);
  const RngSpec base{99, 1000};
  const auto snaps = euler_maruyama_forward_batch(model, x0s, 40, base, {20, 40});
  REQUIRE(snaps.size() == 2);
  for (int j = 0; j < 5; ++j) {
    const auto traj = euler_maruyama_forward(model, x0s.col(j), 40,
                                             base.with_stream(base.stream + j));
    CHECK(traj.states.row(20).transpose() == snaps[0].col(j));
    CHECK(traj.states.row(40).transpose() == snaps[1].col(j));
  }
}

TEST_CASE("forward marginals match the closed-form kernel") {
  const auto model = ForwardModel::vp(1, kDefault);
  const int n_paths = 20000;
  const MatrixXd x0s = MatrixXd::Constant(1, n_paths, 1.0);
  const auto snaps = euler_maruyama_forward_batch(model, x0s, 1000, {2718, 0}, {1000});
  const auto kernel = transition_kernel(model, 1.0);
  const double want_mean = kernel.mean_map(0, 0);
  const double want_var = kernel.cov(0, 0);
  const double got_mean = snaps[0].row(0).mean();
  const double se = std::sqrt(want_var / n_paths);
  CHECK(std::abs(got_mean - want_mean) < 3.0 * se);
}

TEST_CASE("weak order improves with step refinement") {
  const TimeSchedule gentle{0.1, 5.0, 1.0};
  const auto model = ForwardModel::vp(1, gentle);
  const auto kernel = transition_kernel(model, 1.0);
  const double want = kernel.mean_map(0, 0);
  const int n_paths = 50000;
  const MatrixXd x0s = MatrixXd::Constant(1, n_paths, 1.0);
  const double se = std::sqrt(kernel.cov(0, 0) / n_paths);

  double prev = 1e9;
  for (int n_steps : {16, 32, 64}) {
    const auto snaps = euler_maruyama_forward_batch(model, x0s, n_steps, {31, 0}, {n_steps});
    const double err = std::abs(snaps[0].row(0).mean() - want);
    CHECK(err < prev + 3.0 * se);
    prev = err;
  }
}

TEST_CASE("reverse SDE preserves the stationary law") {
  const auto model = ForwardModel::vp(2, kDefault);
  const BatchScoreFn stationary_score = [](const MatrixXd& x, double) { return MatrixXd(-x); };
  const int n_paths = 20000;
  GaussianRng gen({7, 0});
  const MatrixXd x_terminals = gen.gaussian_matrix(2, n_paths);
  const MatrixXd out =
      euler_maruyama_reverse_batch(model, stationary_score, x_terminals, 500, {7, 100});
  const MatrixXd cov = oracles::sample_cov(out);
  CHECK((cov - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.05);
  CHECK(oracles::sample_mean(out).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("reverse SDE recovers 1D Gaussian data") {
  const auto model = ForwardModel::vp(1, kDefault);
  const double mu0 = 1.5, sigma0 = 0.8;
  MixtureSpec mix;
  mix.weights = VectorXd::Ones(1);
  mix.means = {VectorXd::Constant(1, mu0)};
  mix.covs = {MatrixXd::Constant(1, 1, sigma0 * sigma0)};
  const ScoreFn score = make_mixture_score(mix, model);
  const BatchScoreFn batch_score = [&score](const MatrixXd& x, double t) {
    MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = score(x.col(j), t);
    return out;
  };
  const int n_paths = 20000;
  GaussianRng gen({8, 0});
  const MatrixXd x_terminals = gen.gaussian_matrix(1, n_paths);
  const MatrixXd out =
      euler_maruyama_reverse_batch(model, batch_score, x_terminals, 1000, {8, 100});
  const double se = sigma0 / std::sqrt(static_cast<double>(n_paths));
  CHECK(std::abs(out.row(0).mean() - mu0) < 3.0 * se + 0.01);
}

TEST_CASE("probability flow field closed forms") {
  const auto model = ForwardModel::vp(2, kDefault);
  const ScoreFn stationary = [](const VectorXd& x, double) { return VectorXd(-x); };
  GaussianRng rng({9, 0});
  for (int i = 0; i < 10; ++i) {
    const VectorXd x = rng.gaussian_vector(2);
    const double t = 0.1 + 0.8 * rng.uniform();
    CHECK(probability_flow_field(model, stationary, x, t).cwiseAbs().maxCoeff() < 1e-14);
  }

  // constant R^-1: the div(g g^T) contribution is exactly zero
  SpdParam p{{2, VectorXd::Constant(1, 0.3)}, Eigen::Vector2d(0.5, -0.2)};
  const auto noise_model = ForwardModel::fp_noise(p, kDefault);
  const ScoreFn any_score = [](const VectorXd& x, double) { return VectorXd(-0.7 * x); };
  const VectorXd x = Eigen::Vector2d(0.4, -1.3);
  const double t = 0.6;
  const VectorXd v = probability_flow_field(noise_model, any_score, x, t);
  const VectorXd manual =
      noise_model.drift(x, t) - 0.5 * noise_model.diffusion_matrix(x, t) * any_score(x, t);
  CHECK((v - manual).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("flow integration: zero field and contraction logdet") {
  const FlowField zero = [](const VectorXd& x, double) {
    return VectorXd(VectorXd::Zero(x.size()));
  };
  const VectorXd x0 = Eigen::Vector3d(1.0, -2.0, 0.5);
  const auto traj = integrate_flow_field(zero, x0, 0.0, 1.0, 20, true);
  CHECK((traj.states.row(20).transpose() - x0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(traj.logdet->cwiseAbs().maxCoeff() == 0.0);

  const FlowField contract = [](const VectorXd& x, double) { return VectorXd(-x); };
  const auto traj2 = integrate_flow_field(contract, x0, 0.0, 1.0, 200, true);
  CHECK(std::abs((*traj2.logdet)[200] - (-3.0)) < 1e-6);
  // analytic solution x(t) = e^{-t} x0
  CHECK((traj2.states.row(200).transpose() - std::exp(-1.0) * x0).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("symplectic flow conserves energy") {
  MatrixXd omega(2, 2);
  omega << 0.0, 1.0, -1.0, 0.0;
  const FlowField rotation = [&omega](const VectorXd& x, double) { return VectorXd(omega * x); };
  const VectorXd x0 = Eigen::Vector2d(1.2, -0.3);
  const auto traj = integrate_flow_field(rotation, x0, 0.0, 1.0, 1000, false);
  const double e0 = 0.5 * x0.squaredNorm();
  for (int k = 0; k <= 1000; k += 100) {
    const double e = 0.5 * traj.states.row(k).squaredNorm();
    CHECK(std::abs(e - e0) / e0 < 1e-6);
  }
}

TEST_CASE("flow marginals agree with SDE marginals") {
  const auto model = ForwardModel::vp(2, kDefault);
  MixtureSpec mix;
  mix.weights = VectorXd::Ones(1);
  mix.means = {Eigen::Vector2d(1.0, -0.5)};
  MatrixXd cov0(2, 2);
  cov0 << 0.5, 0.1, 0.1, 0.3;
  mix.covs = {cov0};
  const ScoreFn score = make_mixture_score(mix, model);

  const double t_stop = 0.3;
  const int n_paths = 5000;
  GaussianRng gen({10, 0});
  Eigen::MatrixXd ends(2, n_paths);
  for (int j = 0; j < n_paths; ++j) {
    const auto traj = integrate_flow_field(
        [&](const VectorXd& y, double t) { return probability_flow_field(model, score, y, t); },
        gen.gaussian_vector(2), kDefault.horizon, t_stop, 120, false);
    ends.col(j) = traj.states.row(0).transpose();
  }
  const auto kernel = transition_kernel(model, t_stop);
  const VectorXd want_mean = kernel.mean_map * mix.means[0];
  const MatrixXd want_cov = kernel.mean_map * cov0 * kernel.mean_map.transpose() + kernel.cov;
  CHECK((oracles::sample_mean(ends) - want_mean).cwiseAbs().maxCoeff() < 0.05);
  CHECK((oracles::sample_cov(ends) - want_cov).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("integration guards") {
  const auto model = ForwardModel::vp(2, kDefault);
  CHECK_THROWS_AS(euler_maruyama_forward(model, VectorXd::Zero(2), 0, {1, 0}),
                  std::invalid_argument);
  const FlowField blow = [](const VectorXd& x, double) {
    return VectorXd(1e300 * x.array().square().matrix() + VectorXd::Ones(x.size()) * 1e300);
  };
  CHECK_THROWS_AS(integrate_flow_field(blow, VectorXd::Ones(2), 0.0, 1.0, 10, false),
                  DivergenceError);
  CHECK_THROWS_AS(
      integrate_flow_field([](const VectorXd& x, double) { return x; }, VectorXd::Zero(17), 0.0,
                           1.0, 10, true),
      std::domain_error);
}
