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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psgd/matrix_core.hpp"

// Preconditioner factors Q living on matrix Lie groups, with P = Q^T Q.
//
// A QFactor preconditions one parameter tensor G (rows x cols). Vector kinds
// act on vec(G); Kronecker kinds use Q = Q2 kron Q1 with Q1 on the rows and
// Q2 on the columns, so that P vec(G) = vec(Q1^T Q1 G Q2^T Q2).
//
// Q is learned from pairs (u, v) by relative-gradient descent on the
// criterion u^T P u + v^T P^{-1} v. Newton type: u = H v. Fisher type:
// u = g + lambda v.

namespace psgd {

/// Sparsity pattern of a single group factor.
enum class FactorKind {
  Diagonal,
  UpperTriangular,
  /// Nonzeros on the diagonal and in the last column only.
  DiagLastColumn,
};

inline std::string_view factor_kind_name(FactorKind k) {
  switch (k) {
    case FactorKind::Diagonal: return "diagonal";
    case FactorKind::UpperTriangular: return "triangular";
    case FactorKind::DiagLastColumn: return "diaglast";
  }
  return "?";
}

inline FactorKind parse_factor_kind(std::string_view s) {
  if (s == "diagonal") return FactorKind::Diagonal;
  if (s == "triangular") return FactorKind::UpperTriangular;
  if (s == "diaglast") return FactorKind::DiagLastColumn;
  throw ContractError("unknown factor kind '" + std::string(s) + "'");
}

struct GroupKind {
  enum class Tag { Diagonal, UpperTriangular, ScalingNormalization, ScalingWhitening, Kronecker };

  Tag tag = Tag::Diagonal;
  // Factor kinds of Q1 (rows) and Q2 (cols); only read for Kronecker-shaped tags.
  FactorKind left = FactorKind::Diagonal;
  FactorKind right = FactorKind::Diagonal;

  static GroupKind diagonal() { return {Tag::Diagonal}; }
  static GroupKind upper_triangular() { return {Tag::UpperTriangular}; }
  static GroupKind scaling_normalization() {
    return {Tag::ScalingNormalization, FactorKind::Diagonal, FactorKind::DiagLastColumn};
  }
  static GroupKind scaling_whitening() {
    return {Tag::ScalingWhitening, FactorKind::Diagonal, FactorKind::UpperTriangular};
  }
  static GroupKind kronecker(FactorKind l = FactorKind::UpperTriangular,
                             FactorKind r = FactorKind::UpperTriangular) {
    return {Tag::Kronecker, l, r};
  }

  bool is_kronecker() const { return tag != Tag::Diagonal && tag != Tag::UpperTriangular; }
  FactorKind single_kind() const {
    return tag == Tag::Diagonal ? FactorKind::Diagonal : FactorKind::UpperTriangular;
  }

  std::string name() const {
    switch (tag) {
      case Tag::Diagonal: return "diagonal";
      case Tag::UpperTriangular: return "triangular";
      case Tag::ScalingNormalization: return "scalenorm";
      case Tag::ScalingWhitening: return "scalewhiten";
      case Tag::Kronecker:
        if (left == FactorKind::UpperTriangular && right == FactorKind::UpperTriangular) return "kron";
        return "kron:" + std::string(factor_kind_name(left)) + ":" +
               std::string(factor_kind_name(right));
    }
    return "?";
  }

  /// Inverse of name(): diagonal | triangular | kron | scalenorm | scalewhiten
  /// | kron:<left>:<right>.
  static GroupKind parse(std::string_view s) {
    if (s == "diagonal") return diagonal();
    if (s == "triangular") return upper_triangular();
    if (s == "scalenorm") return scaling_normalization();
    if (s == "scalewhiten") return scaling_whitening();
    if (s == "kron") return kronecker();
    if (s.starts_with("kron:")) {
      const auto rest = s.substr(5);
      const auto colon = rest.find(':');
      if (colon != std::string_view::npos)
        return kronecker(parse_factor_kind(rest.substr(0, colon)),
                         parse_factor_kind(rest.substr(colon + 1)));
    }
    throw ContractError("unknown group kind '" + std::string(s) + "'");
  }

  friend bool operator==(const GroupKind&, const GroupKind&) = default;
};

/// One structured square factor. Also used to hold relative gradients, which
/// share the factor's sparsity pattern.
template <typename Scalar>
class Factor {
 public:
  using Mat = Matrix<Scalar>;
  using Vec = Vector<Scalar>;

  Factor() = default;

  static Factor identity(FactorKind kind, Eigen::Index n, Scalar alpha) {
    Factor f = zero(kind, n);
    f.set_diagonal(Vec::Constant(n, alpha));
    return f;
  }

  static Factor zero(FactorKind kind, Eigen::Index n) {
    if (n < 1) throw ContractError("Factor: dimension must be >= 1");
    Factor f;
    f.kind_ = kind;
    f.n_ = n;
    if (kind == FactorKind::UpperTriangular) {
      f.upper_ = Mat::Zero(n, n);
    } else {
      f.diag_ = Vec::Zero(n);
      if (kind == FactorKind::DiagLastColumn) f.last_ = Vec::Zero(n - 1);
    }
    return f;
  }

  FactorKind kind() const { return kind_; }
  Eigen::Index dim() const { return n_; }

  Vec diagonal() const { return kind_ == FactorKind::UpperTriangular ? Vec(upper_.diagonal()) : diag_; }

  Mat dense() const {
    switch (kind_) {
      case FactorKind::Diagonal:
        return diag_.asDiagonal();
      case FactorKind::UpperTriangular:
        return upper_;
      case FactorKind::DiagLastColumn: {
        Mat m = diag_.asDiagonal();
        m.col(n_ - 1).head(n_ - 1) = last_;
        return m;
      }
    }
    return {};
  }

  /// Q X for X with dim() rows.
  Mat apply(const Mat& X) const {
    check_rows(X);
    switch (kind_) {
      case FactorKind::Diagonal:
        return diag_.asDiagonal() * X;
      case FactorKind::UpperTriangular:
        return upper_.template triangularView<Eigen::Upper>() * X;
      case FactorKind::DiagLastColumn: {
        Mat out = diag_.asDiagonal() * X;
        out.topRows(n_ - 1).noalias() += last_ * X.row(n_ - 1);
        return out;
      }
    }
    return {};
  }

  /// Q^T X.
  Mat apply_transpose(const Mat& X) const {
    check_rows(X);
    switch (kind_) {
      case FactorKind::Diagonal:
        return diag_.asDiagonal() * X;
      case FactorKind::UpperTriangular:
        return upper_.template triangularView<Eigen::Upper>().transpose() * X;
      case FactorKind::DiagLastColumn: {
        Mat out = diag_.asDiagonal() * X;
        out.row(n_ - 1).noalias() += last_.transpose() * X.topRows(n_ - 1);
        return out;
      }
    }
    return {};
  }

  /// Q^{-T} X by substitution; Q is never inverted explicitly.
  Mat solve_transpose(const Mat& X) const {
    check_rows(X);
    const Vec d = diagonal();
    for (Eigen::Index i = 0; i < n_; ++i)
      if (d[i] == Scalar(0)) throw SingularError(i);
    switch (kind_) {
      case FactorKind::Diagonal:
        return d.cwiseInverse().asDiagonal() * X;
      case FactorKind::UpperTriangular:
        return upper_.template triangularView<Eigen::Upper>().transpose().solve(X);
      case FactorKind::DiagLastColumn: {
        Mat out(X.rows(), X.cols());
        out.topRows(n_ - 1) = diag_.head(n_ - 1).cwiseInverse().asDiagonal() * X.topRows(n_ - 1);
        out.row(n_ - 1) =
            (X.row(n_ - 1) - last_.transpose() * out.topRows(n_ - 1)) / diag_[n_ - 1];
        return out;
      }
    }
    return {};
  }

  /// Pattern projection of A A^T - B B^T for A, B with dim() rows, computed
  /// without forming the full n x n product where the pattern is sparse.
  static Factor gram_difference(FactorKind kind, const Mat& A, const Mat& B) {
    Factor r = zero(kind, A.rows());
    if (B.rows() != A.rows() || B.cols() != A.cols())
      throw ContractError("gram_difference: operand shape mismatch");
    switch (kind) {
      case FactorKind::Diagonal:
        r.diag_ = A.rowwise().squaredNorm() - B.rowwise().squaredNorm();
        break;
      case FactorKind::UpperTriangular: {
        Mat full = A * A.transpose() - B * B.transpose();
        r.upper_ = full.template triangularView<Eigen::Upper>();
        break;
      }
      case FactorKind::DiagLastColumn: {
        const Eigen::Index n = A.rows();
        r.diag_ = A.rowwise().squaredNorm() - B.rowwise().squaredNorm();
        r.last_ = A.topRows(n - 1) * A.row(n - 1).transpose() -
                  B.topRows(n - 1) * B.row(n - 1).transpose();
        break;
      }
    }
    return r;
  }

  Scalar max_abs() const {
    if (kind_ == FactorKind::UpperTriangular) return max_abs_norm(upper_);
    return std::max(max_abs_norm(diag_), max_abs_norm(last_));
  }

  /// Q <- Q - step * R Q. R Q stays inside the pattern for every kind.
  void left_multiply_update(const Factor& R, Scalar step) {
    if (R.kind_ != kind_ || R.n_ != n_) throw ContractError("Factor update: pattern mismatch");
    switch (kind_) {
      case FactorKind::Diagonal:
        diag_ -= step * R.diag_.cwiseProduct(diag_);
        break;
      case FactorKind::UpperTriangular: {
        Mat rq = R.upper_.template triangularView<Eigen::Upper>() * upper_;
        upper_ -= step * Mat(rq.template triangularView<Eigen::Upper>());
        break;
      }
      case FactorKind::DiagLastColumn: {
        // (RQ)_{i,n-1} = r_i q_i^{last} + R_{i,n-1} q_{n-1} for i < n-1.
        const Scalar q_end = diag_[n_ - 1];
        const Vec rq_last =
            R.diag_.head(n_ - 1).cwiseProduct(last_) + R.last_ * q_end;
        diag_ -= step * R.diag_.cwiseProduct(diag_);
        last_ -= step * rq_last;
        break;
      }
    }
  }

  void scale(Scalar c) {
    diag_ *= c;
    last_ *= c;
    upper_ *= c;
  }

  Factor scaled(Scalar c) const {
    Factor f = *this;
    f.scale(c);
    return f;
  }

  /// Free entries in storage order: diagonal kinds give the diagonal (then
  /// the last column above the diagonal); triangular gives the packed upper
  /// triangle row by row.
  std::vector<Scalar> entries() const {
    std::vector<Scalar> out;
    if (kind_ == FactorKind::UpperTriangular) {
      for (Eigen::Index i = 0; i < n_; ++i)
        for (Eigen::Index j = i; j < n_; ++j) out.push_back(upper_(i, j));
    } else {
      out.assign(diag_.data(), diag_.data() + diag_.size());
      out.insert(out.end(), last_.data(), last_.data() + last_.size());
    }
    return out;
  }

  static Eigen::Index entry_count(FactorKind kind, Eigen::Index n) {
    switch (kind) {
      case FactorKind::Diagonal: return n;
      case FactorKind::UpperTriangular: return n * (n + 1) / 2;
      case FactorKind::DiagLastColumn: return 2 * n - 1;
    }
    return 0;
  }

  static Factor from_entries(FactorKind kind, Eigen::Index n, std::span<const Scalar> e) {
    if (static_cast<Eigen::Index>(e.size()) != entry_count(kind, n))
      throw ContractError("Factor: expected " + std::to_string(entry_count(kind, n)) +
                          " entries, got " + std::to_string(e.size()));
    Factor f = zero(kind, n);
    std::size_t k = 0;
    if (kind == FactorKind::UpperTriangular) {
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) f.upper_(i, j) = e[k++];
    } else {
      for (Eigen::Index i = 0; i < n; ++i) f.diag_[i] = e[k++];
      for (Eigen::Index i = 0; i < f.last_.size(); ++i) f.last_[i] = e[k++];
    }
    return f;
  }

  friend bool operator==(const Factor& a, const Factor& b) {
    return a.kind_ == b.kind_ && a.n_ == b.n_ && a.entries() == b.entries();
  }

 private:
  void set_diagonal(const Vec& d) {
    if (kind_ == FactorKind::UpperTriangular)
      upper_.diagonal() = d;
    else
      diag_ = d;
  }

  void check_rows(const Mat& X) const {
    if (X.rows() != n_)
      throw ContractError("Factor: operand has " + std::to_string(X.rows()) + " rows, expected " +
                          std::to_string(n_));
  }

  FactorKind kind_ = FactorKind::Diagonal;
  Eigen::Index n_ = 0;
  Vec diag_;
  Vec last_;
  Mat upper_;
};

/// Relative gradient R in the tangent pattern of its QFactor: one factor for
/// vector kinds, (R1, R2) for Kronecker kinds.
template <typename Scalar>
struct RelativeGradient {
  std::vector<Factor<Scalar>> factors;

  /// Max-abs norm of each factor.
  std::vector<Scalar> norms() const {
    std::vector<Scalar> out;
    for (const auto& f : factors) out.push_back(f.max_abs());
    return out;
  }

  Scalar norm() const {
    Scalar m = 0;
    for (const auto& f : factors) m = std::max(m, f.max_abs());
    return m;
  }
};

template <typename Scalar>
class QFactor {
 public:
  using Mat = Matrix<Scalar>;

  QFactor() = default;

  /// Q = alpha * I in the representation of `kind`, for a rows x cols tensor.
  static QFactor init(GroupKind kind, Eigen::Index rows, Eigen::Index cols, Scalar alpha) {
    if (!(alpha > Scalar(0))) throw ContractError("init_q: alpha must be positive");
    if (rows < 1 || cols < 1) throw ContractError("init_q: empty tensor shape");
    QFactor q;
    q.kind_ = kind;
    q.rows_ = rows;
    q.cols_ = cols;
    if (kind.is_kronecker()) {
      const Scalar s = std::sqrt(alpha);
      q.factors_ = {Factor<Scalar>::identity(kind.left, rows, s),
                    Factor<Scalar>::identity(kind.right, cols, s)};
    } else {
      q.factors_ = {Factor<Scalar>::identity(kind.single_kind(), rows * cols, alpha)};
    }
    return q;
  }

  static QFactor from_factors(GroupKind kind, Eigen::Index rows, Eigen::Index cols,
                              std::vector<Factor<Scalar>> factors, std::uint64_t updates = 0) {
    QFactor q;
    q.kind_ = kind;
    q.rows_ = rows;
    q.cols_ = cols;
    q.factors_ = std::move(factors);
    q.updates_ = updates;
    const bool ok = kind.is_kronecker()
                        ? q.factors_.size() == 2 && q.factors_[0].kind() == kind.left &&
                              q.factors_[0].dim() == rows && q.factors_[1].kind() == kind.right &&
                              q.factors_[1].dim() == cols
                        : q.factors_.size() == 1 && q.factors_[0].kind() == kind.single_kind() &&
                              q.factors_[0].dim() == rows * cols;
    if (!ok) throw ContractError("QFactor: factors do not match group kind " + kind.name());
    return q;
  }

  const GroupKind& kind() const { return kind_; }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  const std::vector<Factor<Scalar>>& factors() const { return factors_; }
  std::uint64_t update_count() const { return updates_; }

  /// P G: Q^T Q vec(G) for vector kinds, Q1^T Q1 G Q2^T Q2 for Kronecker kinds.
  Mat precondition(const Mat& G) const {
    check_shape(G, "precondition");
    if (!kind_.is_kronecker()) {
      const auto& q = factors_[0];
      Vector<Scalar> g = vec(G);
      return kron_reshape(q.apply_transpose(q.apply(g)), rows_, cols_);
    }
    const auto& q1 = factors_[0];
    const auto& q2 = factors_[1];
    Mat a = q1.apply_transpose(q1.apply(G));                       // Q1^T Q1 G
    return q2.apply_transpose(q2.apply(a.transpose())).transpose();  // (...) Q2^T Q2
  }

  /// Relative gradient of u^T P u + v^T P^{-1} v with respect to E in
  /// Q -> (I + E) Q, projected onto the group's tangent pattern.
  RelativeGradient<Scalar> relative_gradient(const Mat& U, const Mat& V) const {
    check_shape(U, "relative_gradient(u)");
    check_shape(V, "relative_gradient(v)");
    RelativeGradient<Scalar> r;
    if (!kind_.is_kronecker()) {
      const auto& q = factors_[0];
      const Mat a = q.apply(vec(U));
      const Mat b = q.solve_transpose(vec(V));
      r.factors.push_back(Factor<Scalar>::gram_difference(q.kind(), a, b).scaled(Scalar(2)));
      return r;
    }
    const auto [A, B] = kron_images(U, V);
    r.factors.push_back(Factor<Scalar>::gram_difference(kind_.left, A, B).scaled(Scalar(2)));
    r.factors.push_back(Factor<Scalar>::gram_difference(kind_.right, A.transpose(), B.transpose())
                            .scaled(Scalar(2)));
    return r;
  }

  /// Q <- (I - mu0 R / ||R||) Q with the max-abs norm, one factor at a time.
  /// A factor whose R is exactly zero is left unchanged.
  void update(const RelativeGradient<Scalar>& R, Scalar mu0) {
    if (!(mu0 > Scalar(0) && mu0 < Scalar(1))) throw ContractError("update_q: mu0 must lie in (0, 1)");
    if (R.factors.size() != factors_.size()) throw ContractError("update_q: factor count mismatch");
    bool changed = false;
    for (std::size_t i = 0; i < factors_.size(); ++i) {
      const Scalar n = R.factors[i].max_abs();
      if (n == Scalar(0)) continue;
      factors_[i].left_multiply_update(R.factors[i], mu0 / n);
      changed = true;
    }
    if (!changed) return;
    ++updates_;
    if (kind_.is_kronecker() && updates_ % kRebalanceInterval == 0) rebalance();
  }

  /// Moves a power-of-two scale between Q1 and Q2 so their max-abs norms are
  /// within a factor of two of each other. P is unchanged bit for bit.
  void rebalance() {
    if (!kind_.is_kronecker()) return;
    const Scalar n1 = factors_[0].max_abs();
    const Scalar n2 = factors_[1].max_abs();
    if (!(n1 > 0 && n2 > 0)) return;
    const int k = static_cast<int>(std::lround(0.5 * std::log2(static_cast<double>(n2 / n1))));
    if (k == 0) return;
    factors_[0].scale(std::ldexp(Scalar(1), k));
    factors_[1].scale(std::ldexp(Scalar(1), -k));
  }

  /// The sampled criterion u^T P u + v^T P^{-1} v.
  Scalar criterion(const Mat& U, const Mat& V) const {
    check_shape(U, "criterion(u)");
    check_shape(V, "criterion(v)");
    if (!kind_.is_kronecker()) {
      const auto& q = factors_[0];
      return q.apply(vec(U)).squaredNorm() + q.solve_transpose(vec(V)).squaredNorm();
    }
    const auto [A, B] = kron_images(U, V);
    return A.squaredNorm() + B.squaredNorm();
  }

  /// Dense Q acting on vec(G).
  Mat as_dense(Eigen::Index cap = 4096) const {
    const Eigen::Index n = rows_ * cols_;
    if (n > cap)
      throw ContractError("as_dense: dimension " + std::to_string(n) + " exceeds cap " +
                          std::to_string(cap));
    if (!kind_.is_kronecker()) return factors_[0].dense();
    return kron(factors_[1].dense(), factors_[0].dense());
  }

  friend bool operator==(const QFactor& a, const QFactor& b) {
    return a.kind_ == b.kind_ && a.rows_ == b.rows_ && a.cols_ == b.cols_ &&
           a.factors_ == b.factors_ && a.updates_ == b.updates_;
  }

  static constexpr std::uint64_t kRebalanceInterval = 100;

 private:
  // A = Q1 U Q2^T and B = Q1^{-T} V Q2^{-1}.
  std::pair<Mat, Mat> kron_images(const Mat& U, const Mat& V) const {
    const auto& q1 = factors_[0];
    const auto& q2 = factors_[1];
    Mat A = q1.apply(q2.apply(U.transpose()).transpose());
    Mat B = q1.solve_transpose(q2.solve_transpose(V.transpose()).transpose());
    return {std::move(A), std::move(B)};
  }

  void check_shape(const Mat& G, const char* what) const {
    if (G.rows() != rows_ || G.cols() != cols_)
      throw ContractError(std::string(what) + ": shape " + std::to_string(G.rows()) + "x" +
                          std::to_string(G.cols()) + " does not match preconditioner shape " +
                          std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  GroupKind kind_;
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  std::vector<Factor<Scalar>> factors_;
  std::uint64_t updates_ = 0;
};

}  // namespace psgd
