#pragma once

// Forward-SDE family. Every member evolves
//   dX_t = m * rate(t)/2 * [-R^-1(X_t) X_t - 2 w X_t + div R^-1(X_t)] dt
//        + sqrt(rate(t) R^-1(X_t)) dW_t
// whose stationary law is N(0, (1/m) I) for SPD R^-1 and antisymmetric w.
// VE is the one exception (pure diffusion, no stationary law).

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "fpdiff/matrix_param.hpp"
#include "fpdiff/metric_field.hpp"
#include "fpdiff/rng.hpp"
#include "fpdiff/schedule.hpp"

namespace fpdiff {

enum class ModelKind { VP, VE, FP_DRIFT, FP_NOISE, FP_LINEAR, FP_GENERAL, FP_DAMPED };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::VP: return "vp";
    case ModelKind::VE: return "ve";
    case ModelKind::FP_DRIFT: return "fp_drift";
    case ModelKind::FP_NOISE: return "fp_noise";
    case ModelKind::FP_LINEAR: return "fp_linear";
    case ModelKind::FP_GENERAL: return "fp_general";
    case ModelKind::FP_DAMPED: return "fp_damped";
  }
  return "?";
}

class ForwardModel {
 public:
  static ForwardModel vp(int dim, TimeSchedule schedule) {
    return ForwardModel(dim, ModelKind::VP,
                        SpatialMetricField::constant(Eigen::MatrixXd::Identity(dim, dim)),
                        Eigen::MatrixXd::Zero(dim, dim), schedule, 1.0);
  }

  static ForwardModel ve(int dim, TimeSchedule schedule, double sigma_min = 0.01,
                         double sigma_max = 50.0) {
    if (!(sigma_max > sigma_min) || !(sigma_min > 0.0))
      throw std::domain_error("ForwardModel::ve: need sigma_max > sigma_min > 0");
    ForwardModel m(dim, ModelKind::VE,
                   SpatialMetricField::constant(Eigen::MatrixXd::Identity(dim, dim)),
                   Eigen::MatrixXd::Zero(dim, dim), schedule, 1.0);
    m.sigma_min_ = sigma_min;
    m.sigma_max_ = sigma_max;
    return m;
  }

  static ForwardModel fp_drift(const AntisymParam& omega, TimeSchedule schedule) {
    const int dim = omega.orth.dim;
    return ForwardModel(dim, ModelKind::FP_DRIFT,
                        SpatialMetricField::constant(Eigen::MatrixXd::Identity(dim, dim)),
                        realize_antisym(omega), schedule, 1.0);
  }

  static ForwardModel fp_noise(const SpdParam& r_inv, TimeSchedule schedule) {
    const int dim = r_inv.orth.dim;
    return ForwardModel(dim, ModelKind::FP_NOISE,
                        SpatialMetricField::constant(realize_spd(r_inv)),
                        Eigen::MatrixXd::Zero(dim, dim), schedule, 1.0);
  }

  static ForwardModel fp_linear(Eigen::MatrixXd r_inv, Eigen::MatrixXd omega,
                                TimeSchedule schedule, double scale_m = 1.0) {
    const int dim = static_cast<int>(r_inv.rows());
    return ForwardModel(dim, ModelKind::FP_LINEAR,
                        SpatialMetricField::constant(std::move(r_inv)), std::move(omega),
                        schedule, scale_m);
  }

  static ForwardModel fp_general(SpatialMetricField r_inv, Eigen::MatrixXd omega,
                                 TimeSchedule schedule, double scale_m = 1.0) {
    const int dim = r_inv.dim();
    return ForwardModel(dim, ModelKind::FP_GENERAL, std::move(r_inv), std::move(omega),
                        schedule, scale_m);
  }

  static ForwardModel fp_damped(const DampedBlocks& blocks, TimeSchedule schedule) {
    auto [omega, r_inv] = assemble_damped(blocks);
    const int dim = static_cast<int>(omega.rows());
    return ForwardModel(dim, ModelKind::FP_DAMPED,
                        SpatialMetricField::constant(std::move(r_inv)), std::move(omega),
                        schedule, 1.0);
  }

  int dim() const { return dim_; }
  ModelKind kind() const { return kind_; }
  const SpatialMetricField& r_inv_field() const { return r_inv_; }
  const Eigen::MatrixXd& omega() const { return omega_; }
  const TimeSchedule& schedule() const { return schedule_; }
  double scale_m() const { return scale_m_; }
  double sigma_min() const { return sigma_min_; }
  double sigma_max() const { return sigma_max_; }

  bool has_constant_coefficients() const { return r_inv_.is_constant(); }

  double ve_sigma(double t) const {
    return sigma_min_ * std::pow(sigma_max_ / sigma_min_, t / schedule_.horizon);
  }

  // Drift matrix F(t) with f(x, t) = F(t) x, valid for constant-coefficient
  // models (the divergence term vanishes).
  Eigen::MatrixXd drift_matrix(double t) const {
    if (kind_ == ModelKind::VE) return Eigen::MatrixXd::Zero(dim_, dim_);
    if (!has_constant_coefficients())
      throw std::logic_error("drift_matrix: coefficients are not constant");
    const double bp = schedule_.rate(t);
    return scale_m_ * 0.5 * bp * (-r_inv_.constant_matrix() - 2.0 * omega_);
  }

  Eigen::VectorXd drift(const Eigen::VectorXd& x, double t) const {
    check_state(x);
    if (kind_ == ModelKind::VE) {
      schedule_.check_time(t);
      return Eigen::VectorXd::Zero(dim_);
    }
    const double bp = schedule_.rate(t);
    return scale_m_ * 0.5 * bp *
           (-(r_inv_.evaluate(x) * x) - 2.0 * (omega_ * x) + divergence_term(r_inv_, x));
  }

  // Diffusion coefficient g(x, t) = sqrt(rate(t) R^-1(x)), symmetric PSD.
  Eigen::MatrixXd diffusion_coeff(const Eigen::VectorXd& x, double t) const {
    check_state(x);
    if (kind_ == ModelKind::VE) {
      schedule_.check_time(t);
      const double s = ve_sigma(t);
      const double g = s * std::sqrt(2.0 * std::log(sigma_max_ / sigma_min_) / schedule_.horizon);
      return g * Eigen::MatrixXd::Identity(dim_, dim_);
    }
    const double bp = schedule_.rate(t);
    if (has_constant_coefficients()) return std::sqrt(bp) * sqrt_r_inv_;
    return std::sqrt(bp) * spd_sqrt(r_inv_.evaluate(x));
  }

  // g g^T at (x, t); avoids the square root for consumers that need the
  // diffusion matrix itself.
  Eigen::MatrixXd diffusion_matrix(const Eigen::VectorXd& x, double t) const {
    check_state(x);
    if (kind_ == ModelKind::VE) {
      const Eigen::MatrixXd g = diffusion_coeff(x, t);
      return g * g;
    }
    return schedule_.rate(t) * r_inv_.evaluate(x);
  }

  void check_state(const Eigen::VectorXd& x) const {
    if (x.size() != dim_) throw std::invalid_argument("ForwardModel: state dimension mismatch");
    if (!x.allFinite()) throw std::domain_error("ForwardModel: non-finite state");
  }

 private:
  ForwardModel(int dim, ModelKind kind, SpatialMetricField r_inv, Eigen::MatrixXd omega,
               TimeSchedule schedule, double scale_m)
      : dim_(dim),
        kind_(kind),
        r_inv_(std::move(r_inv)),
        omega_(std::move(omega)),
        schedule_(schedule),
        scale_m_(scale_m) {
    schedule_.validate();
    if (dim_ <= 0) throw std::invalid_argument("ForwardModel: dim must be positive");
    if (omega_.rows() != dim_ || omega_.cols() != dim_ || r_inv_.dim() != dim_)
      throw std::invalid_argument("ForwardModel: coefficient dimension mismatch");
    if (!(scale_m_ > 0.0)) throw std::domain_error("ForwardModel: scale m must be positive");
    const double wscale = std::max(1.0, omega_.cwiseAbs().maxCoeff());
    if ((omega_ + omega_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * wscale)
      throw std::domain_error("ForwardModel: omega must be antisymmetric");
    if (r_inv_.is_constant()) sqrt_r_inv_ = spd_sqrt(r_inv_.constant_matrix());
  }

  int dim_;
  ModelKind kind_;
  SpatialMetricField r_inv_;
  Eigen::MatrixXd omega_;
  TimeSchedule schedule_;
  double scale_m_;
  double sigma_min_ = 0.01, sigma_max_ = 50.0;
  Eigen::MatrixXd sqrt_r_inv_;
};

// ---------------------------------------------------------------------------
// Closed-form transition kernel (constant coefficients, with w = 0 or
// R^-1 = I; the mixed case has no proven covariance formula and is rejected).
// X_t | X_0 ~ N(mean_map X_0, cov) with
//   mean_map = exp(-m (R^-1/2 + w) B(t)),  cov = (1/m)(I - exp(-m B(t) R^-1)).

struct GaussianKernel {
  Eigen::MatrixXd mean_map;
  Eigen::MatrixXd cov;
};

inline GaussianKernel transition_kernel(const ForwardModel& model, double t) {
  if (model.kind() == ModelKind::VE || model.kind() == ModelKind::FP_DAMPED)
    throw std::domain_error(std::string("transition_kernel: unsupported kind ") +
                            to_string(model.kind()));
  if (!model.has_constant_coefficients())
    throw std::domain_error("transition_kernel: spatially-varying R^-1 unsupported");

  const int d = model.dim();
  const Eigen::MatrixXd& r_inv = model.r_inv_field().constant_matrix();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  const bool omega_zero = model.omega().cwiseAbs().maxCoeff() < 1e-12;
  const bool r_identity = (r_inv - id).cwiseAbs().maxCoeff() < 1e-12;
  if (!omega_zero && !r_identity)
    throw std::domain_error(
        "transition_kernel: R^-1 != I with omega != 0 has no closed-form covariance");

  const double b = model.schedule().integral(t);
  const double m = model.scale_m();
  GaussianKernel k;
  k.mean_map = matrix_exp((-m * b) * (0.5 * r_inv + model.omega()));
  Eigen::MatrixXd cov = (id - matrix_exp((-m * b) * r_inv)) / m;
  k.cov = 0.5 * (cov + cov.transpose());
  return k;
}

// ---------------------------------------------------------------------------
// Fokker-Planck-Kolmogorov residual of a candidate stationary density:
//   residual(x) = -sum_i d_i[f_i p] + 1/2 sum_ij d_i d_j[(g g^T)_ij p]
// with the time change factored out: f = m/2 (-R^-1 x - 2 w x + div R^-1),
// g g^T = R^-1. Zero (to roundoff) iff the density is stationary at x.

struct AnalyticDensity {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;  // optional
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hessian;   // optional
};

inline AnalyticDensity gaussian_density(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::Index d = mean.size();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::domain_error("gaussian_density: covariance not positive definite");
  const Eigen::MatrixXd prec = llt.solve(Eigen::MatrixXd::Identity(d, d));
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double lognorm = -0.5 * (d * std::log(2.0 * M_PI) + logdet);

  AnalyticDensity den;
  den.value = [mean, prec, lognorm](const Eigen::VectorXd& x) {
    const Eigen::VectorXd c = x - mean;
    return std::exp(lognorm - 0.5 * c.dot(prec * c));
  };
  den.gradient = [den, mean, prec](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(-den.value(x) * (prec * (x - mean)));
  };
  den.hessian = [den, mean, prec](const Eigen::VectorXd& x) {
    const Eigen::VectorXd q = prec * (x - mean);
    return Eigen::MatrixXd(den.value(x) * (q * q.transpose() - prec));
  };
  return den;
}

namespace detail {

inline constexpr double kDensityFdStep = 1e-4;

inline Eigen::VectorXd density_gradient(const AnalyticDensity& den, const Eigen::VectorXd& x) {
  if (den.gradient) return den.gradient(x);
  const double h = kDensityFdStep;
  Eigen::VectorXd g(x.size()), xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] += h;
    xm[i] -= h;
    g[i] = (den.value(xp) - den.value(xm)) / (2.0 * h);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return g;
}

inline Eigen::MatrixXd density_hessian(const AnalyticDensity& den, const Eigen::VectorXd& x) {
  if (den.hessian) return den.hessian(x);
  const double h = kDensityFdStep;
  const Eigen::Index d = x.size();
  Eigen::MatrixXd hess(d, d);
  const double p0 = den.value(x);
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    hess(i, i) = (den.value(xp) - 2.0 * p0 + den.value(xm)) / (h * h);
    for (Eigen::Index j = i + 1; j < d; ++j) {
      Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[i] += h; xpp[j] += h;
      xpm[i] += h; xpm[j] -= h;
      xmp[i] -= h; xmp[j] += h;
      xmm[i] -= h; xmm[j] -= h;
      hess(i, j) = hess(j, i) =
          (den.value(xpp) - den.value(xpm) - den.value(xmp) + den.value(xmm)) / (4.0 * h * h);
    }
  }
  return hess;
}

// Residual for a linear drift f(x) = A x with constant diffusion D = g g^T.
inline double fpk_residual_linear(const Eigen::MatrixXd& a, const Eigen::MatrixXd& d,
                                  const AnalyticDensity& den, const Eigen::VectorXd& x) {
  const double p = den.value(x);
  const Eigen::VectorXd grad = density_gradient(den, x);
  const Eigen::MatrixXd hess = density_hessian(den, x);
  return -(a.trace() * p + (a * x).dot(grad)) + 0.5 * d.cwiseProduct(hess).sum();
}

}  // namespace detail

inline double fpk_residual(const ForwardModel& model, const AnalyticDensity& density,
                           const Eigen::VectorXd& x) {
  model.check_state(x);
  if (model.kind() == ModelKind::VE)
    throw std::domain_error("fpk_residual: VE has no stationary density");
  const double m = model.scale_m();
  const auto& field = model.r_inv_field();

  if (field.is_constant()) {
    const Eigen::MatrixXd a =
        0.5 * m * (-field.constant_matrix() - 2.0 * model.omega());
    return detail::fpk_residual_linear(a, field.constant_matrix(), density, x);
  }

  // Diagonal field: D_ii depends on x_i only.
  const double p = density.value(x);
  const Eigen::VectorXd grad = detail::density_gradient(density, x);
  const Eigen::MatrixXd hess = detail::density_hessian(density, x);
  const int d = model.dim();

  double res = 0.0;
  const Eigen::VectorXd wx = model.omega() * x;
  for (int i = 0; i < d; ++i) {
    const double dii = field.evaluate(x)(i, i);
    const double d1 = field.entry_deriv(i, x[i]);
    const double d2 = field.entry_deriv2(i, x[i]);
    const double fi = 0.5 * m * (-dii * x[i] - 2.0 * wx[i] + d1);
    const double dfi = 0.5 * m * (-d1 * x[i] - dii + d2);
    res -= dfi * p + fi * grad[i];
    res += 0.5 * (d2 * p + 2.0 * d1 * grad[i] + dii * hess(i, i));
  }
  // off-diagonal drift contribution of the symplectic part: f_i includes
  // -m w_ij x_j, whose own-coordinate derivative is zero (w_ii = 0), so only
  // the f_i * grad_i product above carries it; nothing further to add.
  return res;
}

// ---------------------------------------------------------------------------
// Completeness detector: a linear drift A x with constant diffusion R^-1 keeps
// the standard Gaussian stationary iff A = -R^-1/2 + antisymmetric. Reports
// the symmetric-part defect and a density-normalized FPK residual over a
// deterministic probe grid.

struct CompletenessReport {
  bool is_stationary_gaussian = false;
  double symmetric_defect = 0.0;
  double max_grid_residual = 0.0;
};

inline CompletenessReport completeness_probe(const Eigen::MatrixXd& linear_drift,
                                             const Eigen::MatrixXd& r_inv) {
  if (linear_drift.rows() != linear_drift.cols() || linear_drift.rows() != r_inv.rows() ||
      r_inv.rows() != r_inv.cols())
    throw std::invalid_argument("completeness_probe: dimension mismatch");
  const int d = static_cast<int>(linear_drift.rows());

  CompletenessReport report;
  report.symmetric_defect =
      (linear_drift + linear_drift.transpose() + r_inv).cwiseAbs().maxCoeff();

  const AnalyticDensity den =
      gaussian_density(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));

  // Probe points: full tensor grid {-2,-1,0,1,2}^d in low dimensions, a
  // fixed-seed Gaussian cloud otherwise. Residuals are normalized by the
  // density value so detection does not wash out at distant points.
  std::vector<Eigen::VectorXd> points;
  const double levels[] = {-2.0, -1.0, 0.0, 1.0, 2.0};
  if (std::pow(5.0, d) <= 4096.0) {
    const int total = static_cast<int>(std::pow(5.0, d));
    for (int idx = 0; idx < total; ++idx) {
      Eigen::VectorXd x(d);
      int rem = idx;
      for (int i = 0; i < d; ++i) {
        x[i] = levels[rem % 5];
        rem /= 5;
      }
      points.push_back(std::move(x));
    }
  } else {
    GaussianRng rng(RngSpec{0x9d5c0ffeeULL, 17});
    for (int k = 0; k < 4096; ++k) points.push_back(1.5 * rng.gaussian_vector(d));
  }

  for (const auto& x : points) {
    const double p = den.value(x);
    const double res = detail::fpk_residual_linear(linear_drift, r_inv, den, x);
    report.max_grid_residual = std::max(report.max_grid_residual, std::abs(res) / p);
  }
  report.is_stationary_gaussian =
      report.symmetric_defect < 1e-8 && report.max_grid_residual < 1e-6;
  return report;
}

}  // namespace fpdiff
