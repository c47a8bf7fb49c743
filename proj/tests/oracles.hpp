// Finite-difference oracles and small fixtures shared by the tests and the
// acceptance suite.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "psgd/harness.hpp"
#include "psgd/problems.hpp"

namespace psgd::oracle {

inline double dot(const Tensors& a, const Tensors& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].cwiseProduct(b[i]).sum();
  return s;
}

inline double norm(const Tensors& a) { return std::sqrt(dot(a, a)); }

inline double rel_err(const Tensors& a, const Tensors& b) {
  double num = 0;
  for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - b[i]).squaredNorm();
  return std::sqrt(num) / std::max(norm(b), 1e-12);
}

inline Tensors axpy(const Tensors& x, double a, const Tensors& y) {
  Tensors out = x;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += a * y[i];
  return out;
}

inline Tensors random_like(const Problem& p, Rng& rng, double scale = 1.0) {
  Tensors out;
  for (auto [r, c] : p.shapes()) out.push_back(scale * sample_standard_normal(r, c, rng));
  return out;
}

// Central differences of the batch loss, one coordinate at a time.
inline Tensors fd_gradient(const Problem& p, const Tensors& theta, const ad::Batch& batch, double h) {
  Tensors g;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    MatrixXd gt(theta[t].rows(), theta[t].cols());
    for (Eigen::Index k = 0; k < theta[t].size(); ++k) {
      Tensors plus = theta, minus = theta;
      plus[t].data()[k] += h;
      minus[t].data()[k] -= h;
      gt.data()[k] = (p.evaluate(plus, batch).loss - p.evaluate(minus, batch).loss) / (2 * h);
    }
    g.push_back(gt);
  }
  return g;
}

// (g(theta + h v) - g(theta - h v)) / 2h.
inline Tensors fd_hvp(const Problem& p, const Tensors& theta, const ad::Batch& batch, const Tensors& v,
                      double h) {
  const Tensors gp = p.evaluate(axpy(theta, h, v), batch).gradient;
  const Tensors gm = p.evaluate(axpy(theta, -h, v), batch).gradient;
  Tensors out;
  for (std::size_t t = 0; t < theta.size(); ++t) out.push_back((gp[t] - gm[t]) / (2 * h));
  return out;
}

}  // namespace psgd::oracle

namespace psgd::testing {

// Runs `segments` equal chunks with lr_precond decayed geometrically from
// mu_start to mu_end; returns the final state.
inline OptimizerState anneal(const Problem& p, OptimizerConfig c, OptimizerState s, std::uint64_t iters,
                             double mu_start, double mu_end, int segments = 100) {
  for (int k = 0; k < segments; ++k) {
    c.lr_precond = mu_start * std::pow(mu_end / mu_start, static_cast<double>(k) / (segments - 1));
    RunResult r = resume_experiment(p, c, std::move(s), iters / static_cast<std::uint64_t>(segments));
    if (r.aborted()) throw std::runtime_error(r.abort_message);
    s = std::move(r.state);
  }
  return s;
}

// Gradient is mean + L z with z ~ N(0, I), independent of theta; loss 0.
class GaussianGradient final : public Problem {
 public:
  GaussianGradient(VectorXd mean, MatrixXd L) : mean_(std::move(mean)), L_(std::move(L)) {}
  std::string name() const override { return "gaussian-gradient"; }
  std::vector<Shape> shapes() const override { return {{mean_.size(), 1}}; }
  Tensors initial_params() const override { return {MatrixXd::Zero(mean_.size(), 1)}; }
  ad::Batch sample_batch(Rng& rng) const override {
    ad::Batch b;
    b.data.push_back(mean_ + L_ * sample_standard_normal(mean_.size(), rng));
    return b;
  }
  Evaluation evaluate(const Tensors&, const ad::Batch& batch, const Tensors* v) const override {
    Evaluation e;
    e.gradient.push_back(batch.data.at(0));
    if (v) e.hvp.push_back(MatrixXd::Zero(mean_.size(), 1));
    return e;
  }
  double objective(const Tensors&) const override { return 0.0; }

 private:
  VectorXd mean_;
  MatrixXd L_;
};

}  // namespace psgd::testing
