/*
   Copyright 2026 The psgd Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace psgd {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// One dense value per parameter tensor.
using Tensors = std::vector<MatrixXd>;

/// Violated precondition on shapes, symmetry or value ranges.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the domain of a matrix function (e.g. a non-positive
/// eigenvalue handed to an inverse square root).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Zero pivot met during a triangular solve.
class SingularError : public std::runtime_error {
 public:
  explicit SingularError(Eigen::Index row)
      : std::runtime_error("singular triangular factor: zero diagonal at row " +
                           std::to_string(row)),
        row_(row) {}
  Eigen::Index row() const { return row_; }

 private:
  Eigen::Index row_;
};

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw ContractError(std::string(what) + ": non-finite entry");
}

/// Seeded random stream. The engine is fully specified by the standard, so a
/// seed reproduces the same stream on every platform; the uniform and normal
/// transforms below are written out for the same reason.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw ContractError("Rng: malformed state string");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// i.i.d. N(0, 1) entries by the Box-Muller transform, two per pair of
/// uniforms. An odd trailing draw discards its partner so no state is cached.
template <typename Scalar = double>
Vector<Scalar> sample_standard_normal(Eigen::Index n, Rng& rng) {
  if (n < 1) throw ContractError("sample_standard_normal: n must be >= 1");
  Vector<Scalar> out(n);
  for (Eigen::Index i = 0; i < n; i += 2) {
    const double u1 = 1.0 - rng.uniform();  // (0, 1]
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    out[i] = static_cast<Scalar>(r * std::cos(phi));
    if (i + 1 < n) out[i + 1] = static_cast<Scalar>(r * std::sin(phi));
  }
  return out;
}

template <typename Scalar = double>
Matrix<Scalar> sample_standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Vector<Scalar> flat = sample_standard_normal<Scalar>(rows * cols, rng);
  return Eigen::Map<Matrix<Scalar>>(flat.data(), rows, cols);
}

/// Largest absolute entry; zero for an empty or zero matrix.
template <typename Derived>
typename Derived::Scalar max_abs_norm(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  return m.size() == 0 ? Scalar(0) : m.cwiseAbs().maxCoeff();
}

/// Solves U x = b by back substitution. Only the upper triangle of U is read.
template <typename DerivedU, typename DerivedB>
Vector<typename DerivedU::Scalar> triangular_solve_upper(const Eigen::MatrixBase<DerivedU>& U,
                                                         const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedU::Scalar;
  const Eigen::Index n = U.rows();
  if (U.cols() != n) throw ContractError("triangular_solve_upper: U must be square");
  if (b.size() != n) throw ContractError("triangular_solve_upper: rhs length mismatch");
  Vector<Scalar> x = b;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    if (U(i, i) == Scalar(0)) throw SingularError(i);
    Scalar acc = x[i];
    for (Eigen::Index j = i + 1; j < n; ++j) acc -= U(i, j) * x[j];
    x[i] = acc / U(i, i);
  }
  return x;
}

/// Column-stacking vectorization. With this layout
///   (Q2 kron Q1) vec(X) == vec(Q1 X Q2^T),
/// which is the identity the Kronecker preconditioners rely on.
template <typename Derived>
Vector<typename Derived::Scalar> vec(const Eigen::MatrixBase<Derived>& m) {
  Matrix<typename Derived::Scalar> tmp = m;
  return Eigen::Map<const Vector<typename Derived::Scalar>>(tmp.data(), tmp.size());
}

/// Inverse of vec: an m x n matrix whose column-stacking is v.
template <typename Derived>
Matrix<typename Derived::Scalar> kron_reshape(const Eigen::MatrixBase<Derived>& v, Eigen::Index m,
                                              Eigen::Index n) {
  if (v.size() != m * n)
    throw ContractError("kron_reshape: length " + std::to_string(v.size()) + " != " +
                        std::to_string(m) + "x" + std::to_string(n));
  Vector<typename Derived::Scalar> tmp = v;
  return Eigen::Map<const Matrix<typename Derived::Scalar>>(tmp.data(), m, n);
}

template <typename Scalar>
struct SymEig {
  Vector<Scalar> eigenvalues;   // descending
  Matrix<Scalar> eigenvectors;  // columns
};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Slow (O(n^3) per sweep) and meant for oracles and diagnostics only.
template <typename Derived>
SymEig<typename Derived::Scalar> sym_eig(const Eigen::MatrixBase<Derived>& S_in) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = S_in.rows();
  if (S_in.cols() != n) throw ContractError("sym_eig: matrix must be square");
  Matrix<Scalar> A = S_in;
  const Scalar scale = max_abs_norm(A);
  if (max_abs_norm(A - A.transpose()) > Scalar(1e-12) * std::max(scale, Scalar(1)))
    throw ContractError("sym_eig: matrix is not symmetric");
  A = Scalar(0.5) * (A + A.transpose()).eval();
  Matrix<Scalar> V = Matrix<Scalar>::Identity(n, n);

  for (int sweep = 0; sweep < 100; ++sweep) {
    Scalar off = 0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    if (off <= std::numeric_limits<Scalar>::min() ||
        std::sqrt(off) <= std::numeric_limits<Scalar>::epsilon() * Scalar(1e-2) * A.norm())
      break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (A(p, q) == Scalar(0)) continue;
        const Scalar theta = (A(q, q) - A(p, p)) / (Scalar(2) * A(p, q));
        const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return A(a, a) > A(b, b); });
  SymEig<Scalar> out{Vector<Scalar>(n), Matrix<Scalar>(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = order[static_cast<std::size_t>(i)];
    out.eigenvalues[i] = A(src, src);
    out.eigenvectors.col(i) = V.col(src);
  }
  return out;
}

/// Symmetric positive-definite M with M M = S^{-1}.
template <typename Derived>
Matrix<typename Derived::Scalar> inv_principal_sqrt(const Eigen::MatrixBase<Derived>& S) {
  using Scalar = typename Derived::Scalar;
  const auto eig = sym_eig(S);
  for (Eigen::Index i = 0; i < eig.eigenvalues.size(); ++i)
    if (!(eig.eigenvalues[i] > Scalar(0)))
      throw DomainError("inv_principal_sqrt: non-positive eigenvalue " +
                        std::to_string(static_cast<double>(eig.eigenvalues[i])));
  const Vector<Scalar> w = eig.eigenvalues.cwiseSqrt().cwiseInverse();
  Matrix<Scalar> M = eig.eigenvectors * w.asDiagonal() * eig.eigenvectors.transpose();
  return Scalar(0.5) * (M + M.transpose());
}

/// Dense Kronecker product, A kron B.
template <typename DA, typename DB>
Matrix<typename DA::Scalar> kron(const Eigen::MatrixBase<DA>& A, const Eigen::MatrixBase<DB>& B) {
  Matrix<typename DA::Scalar> out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

}  // namespace psgd
