#pragma once

// Spatial inverse-metric descriptor R^-1(x): either a constant SPD/PSD matrix
// or a diagonal field whose i-th entry is a smooth scalar function of x_i.
// Derivatives are analytic when supplied, central finite differences (h=1e-5)
// otherwise.

#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace fpdiff {

struct ScalarField1D {
  std::function<double(double)> value;
  std::function<double(double)> deriv;   // optional
  std::function<double(double)> deriv2;  // optional
};

class SpatialMetricField {
 public:
  static SpatialMetricField constant(Eigen::MatrixXd m) {
    if (m.rows() != m.cols())
      throw std::invalid_argument("SpatialMetricField: constant matrix must be square");
    SpatialMetricField f;
    f.constant_ = std::move(m);
    f.dim_ = static_cast<int>(f.constant_.rows());
    return f;
  }

  static SpatialMetricField diagonal(std::vector<ScalarField1D> entries) {
    SpatialMetricField f;
    f.dim_ = static_cast<int>(entries.size());
    f.entries_ = std::move(entries);
    for (const auto& e : f.entries_)
      if (!e.value) throw std::invalid_argument("SpatialMetricField: missing value function");
    return f;
  }

  bool is_constant() const { return entries_.empty(); }
  int dim() const { return dim_; }

  const Eigen::MatrixXd& constant_matrix() const {
    if (!is_constant())
      throw std::logic_error("SpatialMetricField: not a constant field");
    return constant_;
  }

  Eigen::MatrixXd evaluate(const Eigen::VectorXd& x) const {
    check_dim(x);
    if (is_constant()) return constant_;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim_, dim_);
    for (int i = 0; i < dim_; ++i) m(i, i) = entries_[i].value(x[i]);
    return m;
  }

  double entry_deriv(int i, double xi) const {
    const auto& e = entries_[i];
    if (e.deriv) return e.deriv(xi);
    return central_diff(e.value, xi);
  }

  double entry_deriv2(int i, double xi) const {
    const auto& e = entries_[i];
    if (e.deriv2) return e.deriv2(xi);
    if (e.deriv) return central_diff(e.deriv, xi);
    const double h = kFdStep;
    return (e.value(xi + h) - 2.0 * e.value(xi) + e.value(xi - h)) / (h * h);
  }

  void check_dim(const Eigen::VectorXd& x) const {
    if (x.size() != dim_)
      throw std::invalid_argument("SpatialMetricField: dimension mismatch");
  }

  static constexpr double kFdStep = 1e-5;

 private:
  static double central_diff(const std::function<double(double)>& f, double x) {
    const double h = kFdStep;
    return (f(x + h) - f(x - h)) / (2.0 * h);
  }

  int dim_ = 0;
  Eigen::MatrixXd constant_;
  std::vector<ScalarField1D> entries_;
};

// Row divergences (sum_j d/dx_j R^-1_ij)(x). Analytic derivatives when the
// field carries them, finite differences otherwise.
inline Eigen::VectorXd divergence_term(const SpatialMetricField& field, const Eigen::VectorXd& x) {
  field.check_dim(x);
  if (field.is_constant()) return Eigen::VectorXd::Zero(field.dim());
  Eigen::VectorXd div(field.dim());
  for (int i = 0; i < field.dim(); ++i) div[i] = field.entry_deriv(i, x[i]);
  return div;
}

// Finite-difference route, independent of any analytic derivatives the field
// may carry. Used as a self-consistency oracle.
inline Eigen::VectorXd divergence_term_fd(const SpatialMetricField& field, const Eigen::VectorXd& x) {
  field.check_dim(x);
  if (field.is_constant()) return Eigen::VectorXd::Zero(field.dim());
  const double h = SpatialMetricField::kFdStep;
  Eigen::VectorXd div(field.dim());
  Eigen::VectorXd xp = x, xm = x;
  for (int i = 0; i < field.dim(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    div[i] = (field.evaluate(xp)(i, i) - field.evaluate(xm)(i, i)) / (2.0 * h);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return div;
}

}  // namespace fpdiff
