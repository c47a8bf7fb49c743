#include "doctest.h"

#include <Eigen/Eigenvalues>

#include "psgd/matrix_core.hpp"

using namespace psgd;

namespace {

// Explicit (A kron B) entry: A(i/p, j/q) * B(i%p, j%q), written out without
// the library helper.
MatrixXd kron_by_entries(const MatrixXd& A, const MatrixXd& B) {
  MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      out(i, j) = A(i / B.rows(), j / B.cols()) * B(i % B.rows(), j % B.cols());
  return out;
}

// vec by explicit column stacking.
VectorXd stack_columns(const MatrixXd& M) {
  VectorXd v(M.size());
  for (Eigen::Index j = 0; j < M.cols(); ++j)
    for (Eigen::Index i = 0; i < M.rows(); ++i) v[j * M.rows() + i] = M(i, j);
  return v;
}

MatrixXd random_spd(Eigen::Index n, Rng& rng) {
  MatrixXd A = sample_standard_normal(n, n, rng);
  return A * A.transpose() + 0.5 * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("triangular_solve_upper: worked examples") {
  VectorXd b(3);
  b << 1, 2, 3;
  CHECK(triangular_solve_upper(MatrixXd::Identity(3, 3), b) == b);

  MatrixXd U(2, 2);
  U << 2, 1, 0, 4;
  VectorXd rhs(2);
  rhs << 4, 8;
  const VectorXd x = triangular_solve_upper(U, rhs);
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(2.0));
  CHECK((U * x - rhs).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("triangular_solve_upper: zero pivot names the row") {
  MatrixXd U(3, 3);
  U << 1, 2, 3, 0, 5, 6, 0, 0, 0;
  try {
    triangular_solve_upper(U, VectorXd::Ones(3));
    FAIL("expected SingularError");
  } catch (const SingularError& e) {
    CHECK(e.row() == 2);
  }
  MatrixXd U2(3, 3);
  U2 << 1, 2, 3, 0, 0, 6, 0, 0, 1;
  CHECK_THROWS_AS(triangular_solve_upper(U2, VectorXd::Ones(3)), SingularError);
  CHECK_THROWS_AS(triangular_solve_upper(U2, VectorXd::Ones(2)), ContractError);
}

TEST_CASE("triangular_solve_upper: residual on conditioned systems") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.next() % 12);
    MatrixXd U = MatrixXd(sample_standard_normal(n, n, rng).triangularView<Eigen::Upper>());
    for (Eigen::Index i = 0; i < n; ++i) U(i, i) = 2.0 + std::abs(U(i, i));
    const VectorXd b = sample_standard_normal(n, rng);
    const VectorXd x = triangular_solve_upper(U, b);
    CHECK(max_abs_norm(U * x - b) <= 1e-10 * max_abs_norm(b));
  }
}

TEST_CASE("max_abs_norm") {
  CHECK(max_abs_norm(MatrixXd::Zero(3, 2)) == 0.0);
  MatrixXd M(2, 2);
  M << 1, -3, 2, 0;
  CHECK(max_abs_norm(M) == 3.0);
  CHECK(max_abs_norm(MatrixXd::Identity(4, 4)) == 1.0);
}

TEST_CASE("sample_standard_normal: determinism and moments") {
  Rng a(42), b(42);
  CHECK(sample_standard_normal(17, a) == sample_standard_normal(17, b));
  CHECK(a == b);

  Rng one(3);
  CHECK(sample_standard_normal(1, one).size() == 1);

  Rng rng(2024);
  const VectorXd x = sample_standard_normal(100000, rng);
  const double m = x.mean();
  const double var = (x.array() - m).square().sum() / static_cast<double>(x.size() - 1);
  CHECK(m > -0.02);
  CHECK(m < 0.02);
  CHECK(var > 0.98);
  CHECK(var < 1.02);
  CHECK_THROWS_AS(sample_standard_normal(0, rng), ContractError);
}

TEST_CASE("Rng state round trip") {
  Rng rng(11);
  rng.next();
  const std::string s = rng.state();
  const double next = rng.uniform();
  Rng other(0);
  other.set_state(s);
  CHECK(other.uniform() == next);
}

TEST_CASE("sym_eig: hand cases") {
  MatrixXd D = VectorXd((VectorXd(2) << 3, 1).finished()).asDiagonal();
  auto e = sym_eig(D);
  CHECK(e.eigenvalues[0] == doctest::Approx(3.0));
  CHECK(e.eigenvalues[1] == doctest::Approx(1.0));
  CHECK((e.eigenvectors.cwiseAbs() - MatrixXd::Identity(2, 2)).norm() < 1e-14);

  MatrixXd S(2, 2);
  S << 2, 1, 1, 2;
  e = sym_eig(S);
  CHECK(e.eigenvalues[0] == doctest::Approx(3.0));
  CHECK(e.eigenvalues[1] == doctest::Approx(1.0));

  e = sym_eig(MatrixXd::Zero(3, 3));
  CHECK(e.eigenvalues.cwiseAbs().maxCoeff() == 0.0);

  MatrixXd N(2, 2);
  N << 1, 2, 0, 1;
  CHECK_THROWS_AS(sym_eig(N), ContractError);
}

TEST_CASE("sym_eig: reconstruction, orthonormality, agreement with Eigen") {
  Rng rng(5);
  for (Eigen::Index n = 1; n <= 12; ++n) {
    MatrixXd A = sample_standard_normal(n, n, rng);
    const MatrixXd S = A + A.transpose();
    const auto e = sym_eig(S);
    const MatrixXd& V = e.eigenvectors;
    const MatrixXd rec = V * e.eigenvalues.asDiagonal() * V.transpose();
    CHECK((rec - S).norm() <= 1e-9 * S.norm());
    CHECK((V.transpose() * V - MatrixXd::Identity(n, n)).norm() <= 1e-9);

    Eigen::SelfAdjointEigenSolver<MatrixXd> ref(S);
    VectorXd sorted = ref.eigenvalues().reverse();
    CHECK((sorted - e.eigenvalues).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, S.norm()));
  }
}

TEST_CASE("inv_principal_sqrt") {
  CHECK((inv_principal_sqrt(MatrixXd::Identity(3, 3)) - MatrixXd::Identity(3, 3)).norm() < 1e-14);

  MatrixXd D = MatrixXd::Zero(2, 2);
  D(0, 0) = 4;
  D(1, 1) = 1;
  const MatrixXd M = inv_principal_sqrt(D);
  CHECK(M(0, 0) == doctest::Approx(0.5));
  CHECK(M(1, 1) == doctest::Approx(1.0));
  CHECK(std::abs(M(0, 1)) < 1e-15);

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd S = random_spd(6, rng);
    const MatrixXd R = inv_principal_sqrt(S);
    CHECK((R * R * S - MatrixXd::Identity(6, 6)).norm() < 1e-8);
    CHECK((R - R.transpose()).norm() < 1e-14);
    CHECK(sym_eig(R).eigenvalues.minCoeff() > 0.0);
  }

  MatrixXd bad = MatrixXd::Identity(2, 2);
  bad(1, 1) = -1;
  CHECK_THROWS_AS(inv_principal_sqrt(bad), DomainError);
}

TEST_CASE("vec / kron_reshape") {
  VectorXd s(1);
  s << 2.5;
  CHECK(vec(kron_reshape(s, 1, 1)) == s);

  Rng rng(1);
  const VectorXd v = sample_standard_normal(6, rng);
  const MatrixXd M = kron_reshape(v, 3, 2);
  CHECK(vec(M) == v);
  CHECK(stack_columns(M) == v);
  CHECK_THROWS_AS(kron_reshape(v, 4, 2), ContractError);
}

TEST_CASE("Kronecker identity (Q2 kron Q1) vec(X) = vec(Q1 X Q2^T), dims 1..4") {
  Rng rng(3);
  for (Eigen::Index m = 1; m <= 4; ++m) {
    for (Eigen::Index n = 1; n <= 4; ++n) {
      const MatrixXd Q1 = sample_standard_normal(m, m, rng);
      const MatrixXd Q2 = sample_standard_normal(n, n, rng);
      const MatrixXd X = sample_standard_normal(m, n, rng);
      const VectorXd lhs = kron_by_entries(Q2, Q1) * stack_columns(X);
      const VectorXd rhs = vec(Q1 * X * Q2.transpose());
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((kron(Q2, Q1) - kron_by_entries(Q2, Q1)).norm() == 0.0);
    }
  }
}
