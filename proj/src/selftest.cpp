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

#include "psgd/selftest.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "psgd/checkpoint.hpp"
#include "psgd/harness.hpp"
#include "psgd/lie_groups.hpp"
#include "psgd/problems.hpp"

namespace psgd {

namespace {

using QF = QFactor<double>;

const GroupKind kKinds[] = {GroupKind::diagonal(),          GroupKind::upper_triangular(),
                            GroupKind::scaling_normalization(), GroupKind::scaling_whitening(),
                            GroupKind::kronecker()};

RelativeGradient<double> relgrad(const QF& q, const MatrixXd& U, const MatrixXd& V, const SelftestOptions& opt) {
  RelativeGradient<double> r = q.relative_gradient(U, V);
  if (opt.flip_relative_gradient_sign)
    for (auto& f : r.factors) f.scale(-1.0);
  return r;
}

double tensor_dot(const Tensors& a, const Tensors& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].cwiseProduct(b[i]).sum();
  return s;
}

double rel_diff(const Tensors& a, const Tensors& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]).squaredNorm();
    den += b[i].squaredNorm();
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

Tensors random_like(const Problem& p, Rng& rng, double scale) {
  Tensors out;
  for (auto [r, c] : p.shapes()) out.push_back(scale * sample_standard_normal(r, c, rng));
  return out;
}

Tensors shifted(const Tensors& x, double h, const Tensors& d) {
  Tensors out = x;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += h * d[i];
  return out;
}

// Richardson-extrapolated central difference of f along d.
template <typename F>
auto richardson(F&& f, double h) {
  auto central = [&](double s) {
    auto plus = f(s), minus = f(-s);
    for (std::size_t i = 0; i < plus.size(); ++i) plus[i] = (plus[i] - minus[i]) / (2 * s);
    return plus;
  };
  auto a = central(h), b = central(h / 2);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (4.0 * b[i] - a[i]) / 3.0;
  return a;
}

std::vector<std::unique_ptr<Problem>> small_problems() {
  std::vector<std::unique_ptr<Problem>> out;
  out.push_back(make_rosenbrock());
  out.push_back(make_mlp_classifier({2, 5, 2}, 24, 3, 8));
  out.push_back(make_tiny_lstm_lm(6, 3, 4, 3, 2));
  return out;
}

PropertyResult gradient_fd() {
  Rng rng(11);
  double worst = 0;
  for (const auto& p : small_problems()) {
    const ad::Batch batch = p->sample_batch(rng);
    const Tensors theta = random_like(*p, rng, 0.5);
    const Tensors g = p->evaluate(theta, batch).gradient;
    // Directional derivative along random d against g . d.
    for (int k = 0; k < 3; ++k) {
      const Tensors d = random_like(*p, rng, 1.0);
      const auto fd = richardson(
          [&](double s) { return std::vector<double>{p->evaluate(shifted(theta, s, d), batch).loss}; }, 1e-4);
      const double exact = tensor_dot(g, d);
      worst = std::max(worst, std::abs(fd[0] - exact) / std::max(std::abs(exact), 1e-3));
    }
  }
  return {"gradient-matches-finite-differences", worst < 1e-6, "worst relative error " + format_double(worst)};
}

PropertyResult hvp_fd() {
  Rng rng(12);
  double worst = 0, worst_sym = 0;
  for (const auto& p : small_problems()) {
    const ad::Batch batch = p->sample_batch(rng);
    const Tensors theta = random_like(*p, rng, 0.5);
    const Tensors u = random_like(*p, rng, 1.0), v = random_like(*p, rng, 1.0);
    const Tensors hv = p->evaluate(theta, batch, &v).hvp;
    const Tensors hu = p->evaluate(theta, batch, &u).hvp;
    const Tensors fd = richardson([&](double s) { return p->evaluate(shifted(theta, s, v), batch).gradient; }, 1e-4);
    worst = std::max(worst, rel_diff(hv, fd));
    const double a = tensor_dot(u, hv), b = tensor_dot(v, hu);
    worst_sym = std::max(worst_sym, std::abs(a - b) / std::max(std::abs(a), 1.0));
  }
  return {"hvp-matches-finite-differences-and-is-symmetric", worst < 1e-5 && worst_sym < 1e-9,
          "fd error " + format_double(worst) + ", asymmetry " + format_double(worst_sym)};
}

bool pattern_ok(const Factor<double>& f) {
  const MatrixXd d = f.dense();
  const Eigen::Index n = d.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(d(i, i) > 0)) return false;
    for (Eigen::Index j = 0; j < n; ++j) {
      bool allowed = i == j;
      if (f.kind() == FactorKind::UpperTriangular) allowed = i <= j;
      if (f.kind() == FactorKind::DiagLastColumn) allowed = i == j || j == n - 1;
      if (!allowed && d(i, j) != 0.0) return false;
    }
  }
  return true;
}

PropertyResult group_closure() {
  Rng rng(13);
  std::string bad;
  for (const auto& k : kKinds) {
    QF q = QF::init(k, 3, 4, 1.0);
    bool ok = true;
    for (int i = 0; i < 1000 && ok; ++i) {
      q.update(q.relative_gradient(2.0 * sample_standard_normal(3, 4, rng), sample_standard_normal(3, 4, rng)), 0.1);
      for (const auto& f : q.factors()) ok = ok && pattern_ok(f);
    }
    if (!ok) bad += " " + k.name();
  }
  return {"group-closure", bad.empty(), bad.empty() ? "all kinds closed" : "broken:" + bad};
}

PropertyResult criterion_descent(const SelftestOptions& opt) {
  Rng rng(14);
  int worse = 0, total = 0;
  for (const auto& k : kKinds) {
    for (int trial = 0; trial < 40; ++trial) {
      QF q = QF::init(k, 3, 2, 0.5 + rng.uniform());
      for (int warm = 0; warm < 3; ++warm)
        q.update(q.relative_gradient(sample_standard_normal(3, 2, rng), sample_standard_normal(3, 2, rng)), 0.2);
      const MatrixXd U = sample_standard_normal(3, 2, rng), V = sample_standard_normal(3, 2, rng);
      const double before = q.criterion(U, V);
      q.update(relgrad(q, U, V, opt), 1e-3);
      ++total;
      if (q.criterion(U, V) > before) ++worse;
    }
  }
  return {"relative-gradient-descends-criterion", worse == 0,
          std::to_string(worse) + " of " + std::to_string(total) + " small steps increased the criterion"};
}

PropertyResult kronecker_equivalence() {
  Rng rng(15);
  double worst = 0;
  for (const auto& k : {GroupKind::kronecker(), GroupKind::scaling_normalization(), GroupKind::scaling_whitening()}) {
    QF q = QF::init(k, 4, 3, 1.0);
    for (int i = 0; i < 20; ++i)
      q.update(q.relative_gradient(sample_standard_normal(4, 3, rng), sample_standard_normal(4, 3, rng)), 0.3);
    const MatrixXd G = sample_standard_normal(4, 3, rng);
    const MatrixXd Q = q.as_dense();
    const VectorXd dense = Q.transpose() * (Q * vec(G));
    worst = std::max(worst, (vec(q.precondition(G)) - dense).norm() / dense.norm());
  }
  return {"kronecker-matches-dense", worst < 1e-12, "worst relative error " + format_double(worst)};
}

PropertyResult newton_fixed_point(const SelftestOptions& opt) {
  MatrixXd H(3, 3);
  H << 2.0, 0.5, 0.0, 0.5, -1.0, 0.3, 0.0, 0.3, 0.6;
  const MatrixXd target = inv_principal_sqrt(MatrixXd(H * H));
  QF q = QF::init(GroupKind::upper_triangular(), 3, 1, 1.0);
  Rng rng(16);
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const MatrixXd v = sample_standard_normal(3, 1, rng);
    q.update(relgrad(q, H * v, v, opt), 0.1 * std::pow(0.001, static_cast<double>(k) / (n - 1)));
  }
  const MatrixXd Q = q.as_dense();
  const double err = (Q.transpose() * Q - target).norm() / target.norm();
  return {"newton-fixed-point", std::isfinite(err) && err < 0.05, "relative error " + format_double(err)};
}

PropertyResult scalar_fixed_point(const SelftestOptions& opt) {
  // h = 1, noise variance 3: p -> 1 / sqrt(1 + 3) = 0.5.
  QF q = QF::init(GroupKind::diagonal(), 1, 1, 1.0);
  Rng rng(17);
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const MatrixXd v = sample_standard_normal(1, 1, rng);
    const MatrixXd u = v + std::sqrt(3.0) * sample_standard_normal(1, 1, rng);
    q.update(relgrad(q, u, v, opt), 0.1 * std::pow(0.001, static_cast<double>(k) / (n - 1)));
  }
  const double p = q.as_dense()(0, 0) * q.as_dense()(0, 0);
  return {"scalar-fixed-point", std::abs(p - 0.5) < 0.015, "p = " + format_double(p)};
}

PropertyResult checkpoint_round_trip() {
  auto problem = make_mlp_classifier({2, 4, 2}, 20, 1, 5);
  OptimizerConfig c;
  c.kind = OptimizerKind::Newton;
  c.group = GroupKind::scaling_normalization();
  c.lr = 0.1;
  const RunResult first = run_experiment(*problem, c, 7, 21);
  const OptimizerState loaded = load_checkpoint(save_checkpoint(first.state));
  const RunResult a = resume_experiment(*problem, c, first.state, 5);
  const RunResult b = resume_experiment(*problem, c, loaded, 5);
  const bool ok = loaded == first.state && a.state == b.state;
  return {"checkpoint-exact-resume", ok, ok ? "resumed state identical" : "resumed state differs"};
}

}  // namespace

std::vector<PropertyResult> run_selftest(const SelftestOptions& options) {
  const std::vector<std::pair<std::string, std::function<PropertyResult()>>> checks = {
      {"gradient-matches-finite-differences", gradient_fd},
      {"hvp-matches-finite-differences-and-is-symmetric", hvp_fd},
      {"group-closure", group_closure},
      {"relative-gradient-descends-criterion", [&] { return criterion_descent(options); }},
      {"kronecker-matches-dense", kronecker_equivalence},
      {"newton-fixed-point", [&] { return newton_fixed_point(options); }},
      {"scalar-fixed-point", [&] { return scalar_fixed_point(options); }},
      {"checkpoint-exact-resume", checkpoint_round_trip},
  };
  std::vector<PropertyResult> out;
  for (const auto& [name, check] : checks) {
    try {
      out.push_back(check());
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("threw: ") + e.what()});
    }
  }
  return out;
}

}  // namespace psgd
