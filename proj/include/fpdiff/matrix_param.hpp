#pragma once

// Exponential-map parameterizations of the orthogonal, symmetric
// positive-definite, and antisymmetric matrices that define forward models.
//
// Conventions:
//   Q    = exp(H), H antisymmetric built from a strictly-upper-triangular
//          generator vector (row-major order).
//   R^-1 = Q diag(exp(log_eigs)) Q^T   (positive by construction)
//   w    = Q blockdiag([[0, l_i], [-l_i, 0]], ...) Q^T; odd dimensions get a
//          trailing 1x1 zero block (the full-rank case needs even dim).

#include <cmath>
#include <stdexcept>
#include <utility>

#include <Eigen/Dense>

namespace fpdiff {

inline void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* what) {
  if (!m.allFinite()) throw std::domain_error(std::string(what) + ": non-finite entries");
}

// Matrix exponential by scaling-and-squaring with the order-13 Pade
// approximant (Higham 2005). Relative accuracy ~1e-15 for desk-scale norms.
inline Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("matrix_exp: input must be square");
  require_finite(m, "matrix_exp");

  static constexpr double kPade13[] = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
      1187353796428800.0,  129060195264000.0,   10559470521600.0,
      670442572800.0,      33522128640.0,       1323241920.0,
      40840800.0,          960960.0,            16380.0,
      182.0,               1.0};
  static constexpr double kTheta13 = 5.371920351148152;

  const Eigen::Index n = m.rows();
  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > kTheta13)
    squarings = static_cast<int>(std::ceil(std::log2(norm1 / kTheta13)));

  const Eigen::MatrixXd a = m / std::pow(2.0, squarings);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd a2 = a * a;
  const Eigen::MatrixXd a4 = a2 * a2;
  const Eigen::MatrixXd a6 = a2 * a4;

  const Eigen::MatrixXd u =
      a * (a6 * (kPade13[13] * a6 + kPade13[11] * a4 + kPade13[9] * a2) +
           kPade13[7] * a6 + kPade13[5] * a4 + kPade13[3] * a2 + kPade13[1] * id);
  const Eigen::MatrixXd v =
      a6 * (kPade13[12] * a6 + kPade13[10] * a4 + kPade13[8] * a2) +
      kPade13[6] * a6 + kPade13[4] * a4 + kPade13[2] * a2 + kPade13[0] * id;

  Eigen::MatrixXd r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < squarings; ++i) r = r * r;
  return r;
}

struct OrthogonalParam {
  int dim = 0;
  Eigen::VectorXd generator;  // dim*(dim-1)/2 strictly-upper entries of H

  static Eigen::Index generator_size(int dim) {
    return static_cast<Eigen::Index>(dim) * (dim - 1) / 2;
  }
};

struct SpdParam {
  OrthogonalParam orth;
  Eigen::VectorXd log_eigs;  // eigenvalues are exp(log_eigs[i])
};

struct AntisymParam {
  OrthogonalParam orth;
  Eigen::VectorXd block_eigs;  // floor(dim/2) rotation-block eigenvalues
};

struct DampedBlocks {
  Eigen::VectorXd a_eigs;  // diagonal of A (symplectic coupling), > 0
  Eigen::VectorXd b_eigs;  // diagonal of B (velocity-block noise), > 0
};

// Antisymmetric generator from its strictly-upper-triangular entries.
inline Eigen::MatrixXd antisym_from_upper(int dim, const Eigen::VectorXd& upper) {
  if (upper.size() != OrthogonalParam::generator_size(dim))
    throw std::invalid_argument("antisym_from_upper: generator length mismatch");
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::Index k = 0;
  for (int i = 0; i < dim; ++i)
    for (int j = i + 1; j < dim; ++j, ++k) {
      h(i, j) = upper[k];
      h(j, i) = -upper[k];
    }
  return h;
}

inline Eigen::MatrixXd realize_orthogonal(const OrthogonalParam& p) {
  return matrix_exp(antisym_from_upper(p.dim, p.generator));
}

inline Eigen::MatrixXd realize_spd(const SpdParam& p) {
  if (p.log_eigs.size() != p.orth.dim)
    throw std::invalid_argument("realize_spd: log_eigs length mismatch");
  const Eigen::MatrixXd q = realize_orthogonal(p.orth);
  const Eigen::MatrixXd r =
      q * p.log_eigs.array().exp().matrix().asDiagonal() * q.transpose();
  return 0.5 * (r + r.transpose());
}

inline Eigen::MatrixXd realize_antisym(const AntisymParam& p) {
  const int dim = p.orth.dim;
  if (p.block_eigs.size() != dim / 2)
    throw std::invalid_argument("realize_antisym: block_eigs length mismatch");
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(dim, dim);
  for (int i = 0; i < dim / 2; ++i) {
    d(2 * i, 2 * i + 1) = p.block_eigs[i];
    d(2 * i + 1, 2 * i) = -p.block_eigs[i];
  }
  // odd dim: trailing 1x1 block stays zero
  const Eigen::MatrixXd q = realize_orthogonal(p.orth);
  const Eigen::MatrixXd w = q * d * q.transpose();
  return 0.5 * (w - w.transpose());
}

// Symmetric PSD square root. Rejects genuinely negative spectra; eigenvalues
// within roundoff of zero are clamped so degenerate (damped) metrics work.
inline Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& r_inv) {
  if (r_inv.rows() != r_inv.cols())
    throw std::invalid_argument("spd_sqrt: input must be square");
  require_finite(r_inv, "spd_sqrt");
  if ((r_inv - r_inv.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::domain_error("spd_sqrt: input not symmetric within 1e-10");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r_inv);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("spd_sqrt: eigendecomposition failed");
  Eigen::VectorXd lam = es.eigenvalues();
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -1e-10 * scale)
      throw std::domain_error("spd_sqrt: input not positive semi-definite");
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  const Eigen::MatrixXd s =
      es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (s + s.transpose());
}

// (B + I)^-1 for antisymmetric B via the closed-form per-block inverse
// [[1, -l], [l, 1]] / (1 + l^2) in the basis that block-diagonalizes B.
// I + B is always invertible (eigenvalues 1 +- i*l).
inline Eigen::MatrixXd antisym_shift_inverse(const Eigen::MatrixXd& b) {
  if (b.rows() != b.cols())
    throw std::invalid_argument("antisym_shift_inverse: input must be square");
  require_finite(b, "antisym_shift_inverse");
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  if ((b + b.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::domain_error("antisym_shift_inverse: input not antisymmetric");

  const Eigen::Index n = b.rows();
  Eigen::RealSchur<Eigen::MatrixXd> schur(b);
  if (schur.info() != Eigen::Success)
    throw std::runtime_error("antisym_shift_inverse: Schur decomposition failed");
  const Eigen::MatrixXd& t = schur.matrixT();
  const Eigen::MatrixXd& q = schur.matrixU();

  Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n;) {
    if (i + 1 < n && std::abs(t(i + 1, i)) > 1e-12 * scale) {
      const double up = t(i, i + 1);
      const double lo = t(i + 1, i);
      const double det = 1.0 - up * lo;  // = 1 + l^2
      inv(i, i) = 1.0 / det;
      inv(i + 1, i + 1) = 1.0 / det;
      inv(i, i + 1) = -up / det;
      inv(i + 1, i) = -lo / det;
      i += 2;
    } else {
      inv(i, i) = 1.0 / (1.0 + t(i, i));
      i += 1;
    }
  }
  return q * inv * q.transpose();
}

// Degenerate phase-space blocks: w = [[0, A], [-A, 0]], R^-1 = [[0, 0], [0, B]]
// with diagonal A, B > 0. Zero blocks are exact.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> assemble_damped(const DampedBlocks& blocks) {
  const Eigen::Index d = blocks.a_eigs.size();
  if (blocks.b_eigs.size() != d)
    throw std::invalid_argument("assemble_damped: block size mismatch");
  if (d == 0 || (blocks.a_eigs.array() <= 0.0).any() || (blocks.b_eigs.array() <= 0.0).any())
    throw std::domain_error("assemble_damped: block eigenvalues must be positive");

  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  Eigen::MatrixXd r_inv = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  omega.topRightCorner(d, d) = blocks.a_eigs.asDiagonal();
  omega.bottomLeftCorner(d, d) = -blocks.a_eigs.asDiagonal().toDenseMatrix();
  r_inv.bottomRightCorner(d, d) = blocks.b_eigs.asDiagonal();
  return {std::move(omega), std::move(r_inv)};
}

}  // namespace fpdiff
