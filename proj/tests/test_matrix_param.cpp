#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <Eigen/Dense>

#include "fpdiff/matrix_param.hpp"
#include "fpdiff/rng.hpp"
#include "oracles.hpp"

using namespace fpdiff;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double max_abs(const MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

OrthogonalParam random_orth_param(int dim, GaussianRng& rng, double scale = 1.0) {
  OrthogonalParam p;
  p.dim = dim;
  p.generator = scale * rng.gaussian_vector(OrthogonalParam::generator_size(dim));
  return p;
}

}  // namespace

TEST_CASE("matrix_exp closed forms") {
  CHECK(max_abs(matrix_exp(MatrixXd::Zero(3, 3)) - MatrixXd::Identity(3, 3)) < 1e-15);

  MatrixXd planar(2, 2);
  planar << 0.0, M_PI / 2.0, -M_PI / 2.0, 0.0;
  MatrixXd expected(2, 2);
  expected << 0.0, 1.0, -1.0, 0.0;
  CHECK(max_abs(matrix_exp(planar) - expected) < 1e-14);

  MatrixXd diag = Eigen::Vector2d(1.0, 2.0).asDiagonal();
  MatrixXd ediag = Eigen::Vector2d(std::exp(1.0), std::exp(2.0)).asDiagonal();
  CHECK(max_abs(matrix_exp(diag) - ediag) < 1e-13);
}

TEST_CASE("matrix_exp matches power series on random matrices") {
  GaussianRng rng({2024, 1});
  for (int trial = 0; trial < 30; ++trial) {
    const int dim = 2 + static_cast<int>(rng.uniform_index(5));
    MatrixXd m = oracles::random_matrix(dim, dim, rng);
    m *= (trial % 3 + 1) * 1.5 / m.norm();  // spread norms up to ~4.5
    const MatrixXd got = matrix_exp(m);
    const MatrixXd want = oracles::expm_series(m);
    CHECK(max_abs(got - want) / std::max(1.0, max_abs(want)) < 1e-12);
  }
}

TEST_CASE("matrix_exp inverse property") {
  GaussianRng rng({2024, 2});
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 2 + static_cast<int>(rng.uniform_index(4));
    MatrixXd m = oracles::random_matrix(dim, dim, rng);
    if (m.norm() > 5.0) m *= 5.0 / m.norm();
    const MatrixXd prod = matrix_exp(-m) * matrix_exp(m);
    CHECK(max_abs(prod - MatrixXd::Identity(dim, dim)) < 1e-9);
  }
}

TEST_CASE("matrix_exp input validation") {
  CHECK_THROWS_AS(matrix_exp(MatrixXd::Zero(2, 3)), std::invalid_argument);
  MatrixXd bad = MatrixXd::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(matrix_exp(bad), std::domain_error);
}

TEST_CASE("realize_orthogonal closed forms") {
  OrthogonalParam zero{2, VectorXd::Zero(1)};
  CHECK(max_abs(realize_orthogonal(zero) - MatrixXd::Identity(2, 2)) < 1e-15);

  OrthogonalParam quarter{2, VectorXd::Constant(1, M_PI / 2.0)};
  MatrixXd expected(2, 2);
  expected << 0.0, 1.0, -1.0, 0.0;
  CHECK(max_abs(realize_orthogonal(quarter) - expected) < 1e-14);

  OrthogonalParam wrong{3, VectorXd::Zero(1)};
  CHECK_THROWS_AS(realize_orthogonal(wrong), std::invalid_argument);
}

TEST_CASE("realize_orthogonal gives orthogonal unit-determinant matrices") {
  GaussianRng rng({7, 3});
  for (int dim = 2; dim <= 8; ++dim) {
    for (int trial = 0; trial < 5; ++trial) {
      const MatrixXd q = realize_orthogonal(random_orth_param(dim, rng));
      CHECK(max_abs(q.transpose() * q - MatrixXd::Identity(dim, dim)) < 1e-10);
      CHECK(std::abs(q.determinant() - 1.0) < 1e-8);
    }
  }
}

TEST_CASE("realize_spd spectrum and symmetry") {
  GaussianRng rng({7, 4});

  SpdParam unit{random_orth_param(3, rng), VectorXd::Zero(3)};
  CHECK(max_abs(realize_spd(unit) - MatrixXd::Identity(3, 3)) < 1e-12);

  SpdParam diag{{2, VectorXd::Zero(1)}, Eigen::Vector2d(std::log(2.0), std::log(3.0))};
  CHECK(max_abs(realize_spd(diag) - MatrixXd(Eigen::Vector2d(2.0, 3.0).asDiagonal())) < 1e-12);

  for (int trial = 0; trial < 10; ++trial) {
    SpdParam p{random_orth_param(3, rng), rng.gaussian_vector(3)};
    const MatrixXd r = realize_spd(p);
    CHECK(max_abs(r - r.transpose()) < 1e-12);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(r);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    VectorXd want = p.log_eigs.array().exp();
    std::sort(want.data(), want.data() + want.size());
    const VectorXd got = es.eigenvalues();
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("realize_antisym block structure") {
  GaussianRng rng({7, 5});

  AntisymParam zero{random_orth_param(4, rng), VectorXd::Zero(2)};
  CHECK(max_abs(realize_antisym(zero)) < 1e-14);

  AntisymParam canon{{2, VectorXd::Zero(1)}, VectorXd::Constant(1, 1.0)};
  MatrixXd expected(2, 2);
  expected << 0.0, 1.0, -1.0, 0.0;
  CHECK(max_abs(realize_antisym(canon) - expected) < 1e-14);

  for (int trial = 0; trial < 10; ++trial) {
    AntisymParam p{random_orth_param(4, rng), rng.gaussian_vector(2)};
    const MatrixXd w = realize_antisym(p);
    CHECK(max_abs(w + w.transpose()) < 1e-12);
    // singular values come in pairs |l_i|, |l_i|
    Eigen::JacobiSVD<MatrixXd> svd(w);
    VectorXd want(4);
    want << std::abs(p.block_eigs[0]), std::abs(p.block_eigs[0]), std::abs(p.block_eigs[1]),
        std::abs(p.block_eigs[1]);
    std::sort(want.data(), want.data() + 4, std::greater<double>());
    CHECK((svd.singularValues() - want).cwiseAbs().maxCoeff() < 1e-10);
  }

  // odd dimension: trailing zero block leaves a null direction
  AntisymParam odd{random_orth_param(5, rng), rng.gaussian_vector(2)};
  const MatrixXd w5 = realize_antisym(odd);
  CHECK(max_abs(w5 + w5.transpose()) < 1e-12);
  Eigen::JacobiSVD<MatrixXd> svd5(w5);
  CHECK(svd5.singularValues()(4) < 1e-12);
}

TEST_CASE("antisymmetric quadratic form vanishes") {
  GaussianRng rng({7, 6});
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = 2 + static_cast<int>(rng.uniform_index(5));
    AntisymParam p{random_orth_param(dim, rng), rng.gaussian_vector(dim / 2)};
    const MatrixXd w = realize_antisym(p);
    const VectorXd x = rng.gaussian_vector(dim);
    CHECK(std::abs(x.dot(w * x)) < 1e-10 * x.squaredNorm());
  }
}

TEST_CASE("spd_sqrt") {
  CHECK(max_abs(spd_sqrt(MatrixXd::Identity(3, 3)) - MatrixXd::Identity(3, 3)) < 1e-13);
  CHECK(max_abs(spd_sqrt(MatrixXd(Eigen::Vector2d(4.0, 9.0).asDiagonal())) -
                MatrixXd(Eigen::Vector2d(2.0, 3.0).asDiagonal())) < 1e-13);

  GaussianRng rng({7, 7});
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd a = oracles::random_spd(5, rng);
    const MatrixXd s = spd_sqrt(a);
    CHECK(max_abs(s * s - a) < 1e-9);
    CHECK(max_abs(s - s.transpose()) < 1e-12);
    // sqrt of the square recovers the original SPD matrix
    CHECK(max_abs(spd_sqrt(a * a) - a) < 1e-8);
  }

  MatrixXd indef = Eigen::Vector2d(1.0, -1.0).asDiagonal();
  CHECK_THROWS_AS(spd_sqrt(indef), std::domain_error);
  MatrixXd asym(2, 2);
  asym << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(spd_sqrt(asym), std::domain_error);
}

TEST_CASE("antisym_shift_inverse") {
  CHECK(max_abs(antisym_shift_inverse(MatrixXd::Zero(3, 3)) - MatrixXd::Identity(3, 3)) < 1e-14);

  MatrixXd b(2, 2);
  b << 0.0, 1.0, -1.0, 0.0;
  MatrixXd expected(2, 2);
  expected << 0.5, -0.5, 0.5, 0.5;
  // direct 2x2 inversion oracle
  CHECK(max_abs((b + MatrixXd::Identity(2, 2)).inverse() - expected) < 1e-15);
  CHECK(max_abs(antisym_shift_inverse(b) - expected) < 1e-12);

  GaussianRng rng({7, 8});
  for (int trial = 0; trial < 10; ++trial) {
    for (int dim : {4, 5}) {
      const MatrixXd a = oracles::random_antisym(dim, rng);
      const MatrixXd inv = antisym_shift_inverse(a);
      CHECK(max_abs((a + MatrixXd::Identity(dim, dim)) * inv - MatrixXd::Identity(dim, dim)) <
            1e-10);
    }
  }

  MatrixXd notanti(2, 2);
  notanti << 0.0, 1.0, 1.0, 0.0;
  CHECK_THROWS_AS(antisym_shift_inverse(notanti), std::domain_error);
}

TEST_CASE("assemble_damped") {
  // d=1 with A=[1], B=[2*Gamma], Gamma=1: the critically-damped block form
  DampedBlocks cld{VectorXd::Constant(1, 1.0), VectorXd::Constant(1, 2.0)};
  auto [omega, r_inv] = assemble_damped(cld);
  MatrixXd omega_want(2, 2), r_want(2, 2);
  omega_want << 0.0, 1.0, -1.0, 0.0;
  r_want << 0.0, 0.0, 0.0, 2.0;
  CHECK(omega == omega_want);
  CHECK(r_inv == r_want);

  DampedBlocks id2{VectorXd::Ones(2), VectorXd::Ones(2)};
  auto [w2, r2] = assemble_damped(id2);
  CHECK(max_abs(w2 + w2.transpose()) == 0.0);
  CHECK(Eigen::FullPivLU<MatrixXd>(r2).rank() == 2);
  CHECK(r2.topLeftCorner(2, 2) == MatrixXd::Zero(2, 2));

  GaussianRng rng({7, 9});
  DampedBlocks rnd{rng.gaussian_vector(3).array().abs() + 0.1,
                   rng.gaussian_vector(3).array().abs() + 0.1};
  auto [w3, r3] = assemble_damped(rnd);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(r3);
  int zeros = 0;
  for (int i = 0; i < 6; ++i)
    if (std::abs(es.eigenvalues()[i]) < 1e-12) ++zeros;
  CHECK(zeros == 3);
  CHECK(max_abs(w3 + w3.transpose()) == 0.0);

  DampedBlocks bad{Eigen::Vector2d(1.0, -1.0), Eigen::Vector2d(1.0, 1.0)};
  CHECK_THROWS_AS(assemble_damped(bad), std::domain_error);
}
