#include "doctest.h"

#include <functional>

#include "psgd/autodiff.hpp"

using namespace psgd;
namespace ad = psgd::ad;

namespace {

double rel_err(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1.0);
}

double rel_err(const Tensors& a, const Tensors& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]).squaredNorm();
    den += b[i].squaredNorm();
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1.0);
}

// Central differences of the loss, one coordinate at a time.
Tensors fd_gradient(const ad::Tape& tape, const Tensors& theta, const ad::Batch& batch, double h) {
  Tensors g;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    MatrixXd gt(theta[t].rows(), theta[t].cols());
    for (Eigen::Index k = 0; k < theta[t].size(); ++k) {
      Tensors plus = theta, minus = theta;
      plus[t].data()[k] += h;
      minus[t].data()[k] -= h;
      gt.data()[k] = (ad::evaluate(tape, plus, batch) - ad::evaluate(tape, minus, batch)) / (2 * h);
    }
    g.push_back(gt);
  }
  return g;
}

// (g(theta + h v) - g(theta - h v)) / 2h.
Tensors fd_hvp(const ad::Tape& tape, const Tensors& theta, const ad::Batch& batch, const Tensors& v,
               double h) {
  Tensors plus = theta, minus = theta;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    plus[t] += h * v[t];
    minus[t] -= h * v[t];
  }
  const Tensors gp = ad::gradient(tape, plus, batch);
  const Tensors gm = ad::gradient(tape, minus, batch);
  Tensors out;
  for (std::size_t t = 0; t < theta.size(); ++t) out.push_back((gp[t] - gm[t]) / (2 * h));
  return out;
}

double dot(const Tensors& a, const Tensors& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].cwiseProduct(b[i]).sum();
  return s;
}

ad::Tape half_norm_tape(Eigen::Index n) {
  return {{{n, 1}}, [](ad::Graph&, std::span<const ad::Var> p, const ad::Batch&) {
            return 0.5 * ad::sum(ad::square(p[0]));
          }};
}

ad::Tape rosenbrock_tape() {
  return {{{2, 1}}, [](ad::Graph&, std::span<const ad::Var> p, const ad::Batch&) {
            const ad::Var x = ad::slice_rows(p[0], 0, 1);
            const ad::Var y = ad::slice_rows(p[0], 1, 1);
            return ad::sum(100.0 * ad::square(y - ad::square(x)) +
                           ad::square(ad::scale_shift(x, -1.0, 1.0)));
          }};
}

Tensors col(std::initializer_list<double> xs) {
  VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return {MatrixXd(v)};
}

// A one-op tape: sum(w .* op(x)) (or the op itself when it is scalar valued),
// with x a single 3x4 parameter.
struct OpCase {
  const char* name;
  std::function<ad::Var(ad::Graph&, ad::Var)> apply;
  bool positive_input = false;
};

std::vector<OpCase> op_cases() {
  static const MatrixXd other = (MatrixXd::Random(3, 4).array() + 2.0).matrix();
  static const MatrixXd right = MatrixXd::Random(4, 2);
  static const std::vector<int> labels{0, 2, 1, 2};
  return {
      {"add", [](ad::Graph& g, ad::Var x) { return x + g.constant(other); }},
      {"sub", [](ad::Graph& g, ad::Var x) { return g.constant(other) - x; }},
      {"mul", [](ad::Graph&, ad::Var x) { return x * x; }},
      {"div-num", [](ad::Graph& g, ad::Var x) { return x / g.constant(other); }},
      {"div-den", [](ad::Graph& g, ad::Var x) { return g.constant(other) / x; }, true},
      {"matmul", [](ad::Graph& g, ad::Var x) { return ad::matmul(x, g.constant(right)); }},
      {"matmul-self", [](ad::Graph&, ad::Var x) { return ad::matmul(x, ad::transpose(x)); }},
      {"bias-add",
       [](ad::Graph&, ad::Var x) { return ad::bias_add(x, ad::tanh(ad::sum_cols(x))); }},
      {"sum", [](ad::Graph&, ad::Var x) { return ad::sum(ad::square(x)); }},
      {"mean", [](ad::Graph&, ad::Var x) { return ad::mean(x * x); }},
      {"square", [](ad::Graph&, ad::Var x) { return ad::square(x); }},
      {"tanh", [](ad::Graph&, ad::Var x) { return ad::tanh(x); }},
      {"sigmoid", [](ad::Graph&, ad::Var x) { return ad::sigmoid(x); }},
      {"relu", [](ad::Graph&, ad::Var x) { return ad::relu(x) * x; }},
      {"log", [](ad::Graph&, ad::Var x) { return ad::log(x); }, true},
      {"exp", [](ad::Graph&, ad::Var x) { return ad::exp(x); }},
      {"scale-shift", [](ad::Graph&, ad::Var x) { return ad::square(ad::scale_shift(x, -2.0, 0.5)); }},
      {"sum-rows", [](ad::Graph&, ad::Var x) { return ad::square(ad::sum_rows(x)); }},
      {"sum-cols", [](ad::Graph&, ad::Var x) { return ad::square(ad::sum_cols(x)); }},
      {"broadcast", [](ad::Graph&, ad::Var x) {
         return ad::broadcast_rows(ad::sum_rows(x), 3) * ad::broadcast_cols(ad::sum_cols(x), 4);
       }},
      {"slice-pad-concat", [](ad::Graph&, ad::Var x) {
         const ad::Var parts[] = {ad::square(ad::slice_rows(x, 1, 2)), ad::pad_rows(ad::slice_rows(x, 0, 1), 1, 2)};
         return ad::concat_rows(parts);
       }},
      {"softmax", [](ad::Graph&, ad::Var x) { return ad::softmax_cols(x); }},
      {"softmax-ce", [](ad::Graph&, ad::Var x) { return ad::softmax_cross_entropy(x, labels); }},
      {"mse", [](ad::Graph&, ad::Var x) { return ad::mse(ad::tanh(x), other); }},
  };
}

ad::Tape op_tape(const OpCase& c, const MatrixXd& weights) {
  return {{{3, 4}}, [c, weights](ad::Graph& g, std::span<const ad::Var> p, const ad::Batch&) {
            const ad::Var y = c.apply(g, p[0]);
            if (y.rows() == 1 && y.cols() == 1) return y;
            return ad::inner(y, weights.topLeftCorner(y.rows(), y.cols()));
          }};
}

}  // namespace

TEST_CASE("evaluate / gradient / hvp on 0.5 theta^T theta") {
  const auto tape = half_norm_tape(2);
  const Tensors theta = col({3, 4});
  CHECK(ad::evaluate(tape, theta, {}) == doctest::Approx(12.5));
  CHECK(ad::gradient(tape, theta, {})[0] == theta[0]);
  const Tensors v = col({-1.5, 0.25});
  CHECK(rel_err(ad::hessian_vector_product(tape, theta, {}, v), v) < 1e-15);
  const Tensors zero = col({0, 0});
  CHECK(ad::hessian_vector_product(tape, theta, {}, zero)[0].norm() == 0.0);
}

TEST_CASE("Rosenbrock values, gradient and HVP") {
  const auto tape = rosenbrock_tape();
  CHECK(ad::evaluate(tape, col({-1, 1}), {}) == doctest::Approx(4.0));
  CHECK(ad::evaluate(tape, col({1, 1}), {}) == 0.0);
  CHECK(ad::gradient(tape, col({1, 1}), {})[0].norm() == 0.0);

  // Frozen from central differences at h = 1e-5: (-4, 0).
  const Tensors fd = fd_gradient(tape, col({-1, 1}), {}, 1e-5);
  CHECK(fd[0](0, 0) == doctest::Approx(-4.0).epsilon(1e-6));
  CHECK(std::abs(fd[0](1, 0)) < 1e-6);
  const Tensors g = ad::gradient(tape, col({-1, 1}), {});
  CHECK(g[0](0, 0) == doctest::Approx(-4.0).epsilon(1e-12));
  CHECK(g[0](1, 0) == doctest::Approx(0.0));

  // Frozen from the finite difference of gradients at h = 1e-5: (802, 400).
  const Tensors fdh = fd_hvp(tape, col({-1, 1}), {}, col({1, 0}), 1e-5);
  CHECK(fdh[0](0, 0) == doctest::Approx(802.0).epsilon(1e-6));
  CHECK(fdh[0](1, 0) == doctest::Approx(400.0).epsilon(1e-6));
  const Tensors hv = ad::hessian_vector_product(tape, col({-1, 1}), {}, col({1, 0}));
  CHECK(hv[0](0, 0) == doctest::Approx(802.0).epsilon(1e-12));
  CHECK(hv[0](1, 0) == doctest::Approx(400.0).epsilon(1e-12));
}

TEST_CASE("constant tape has zero gradient and zero HVP") {
  const ad::Tape tape{{{2, 2}}, [](ad::Graph& g, std::span<const ad::Var>, const ad::Batch&) {
                        return g.constant(MatrixXd::Constant(1, 1, 3.0));
                      }};
  const Tensors theta{MatrixXd::Ones(2, 2)};
  CHECK(ad::gradient(tape, theta, {})[0].norm() == 0.0);
  CHECK(ad::hessian_vector_product(tape, theta, {}, theta)[0].norm() == 0.0);
}

TEST_CASE("per-op gradient and HVP agree with finite differences") {
  Rng rng(77);
  const MatrixXd weights = sample_standard_normal(3, 4, rng);
  for (const auto& c : op_cases()) {
    const std::string name = c.name;
    CAPTURE(name);
    const auto tape = op_tape(c, weights);
    for (int trial = 0; trial < 3; ++trial) {
      MatrixXd x = 0.8 * sample_standard_normal(3, 4, rng);
      if (c.positive_input) x = (x.array().abs() + 0.5).matrix();
      // Keep relu inputs away from the kink so finite differences are valid.
      x = (x.array().abs() < 0.05).select(0.3, x);
      const Tensors theta{x};
      const Tensors g = ad::gradient(tape, theta, {});
      CHECK(rel_err(g, fd_gradient(tape, theta, {}, 1e-5)) < 1e-6);

      const Tensors v{sample_standard_normal(3, 4, rng)};
      const Tensors hv = ad::hessian_vector_product(tape, theta, {}, v);
      CHECK(rel_err(hv, fd_hvp(tape, theta, {}, v, 1e-5)) < 1e-5);
    }
  }
}

TEST_CASE("HVP symmetry and linearity on a two-layer tanh network") {
  Rng rng(5);
  const MatrixXd X = sample_standard_normal(3, 10, rng);
  const std::vector<int> labels{0, 1, 1, 0, 1, 0, 0, 1, 1, 0};
  const ad::Tape tape{{{4, 4}, {2, 5}}, [&](ad::Graph& g, std::span<const ad::Var> p, const ad::Batch&) {
                        const ad::Var ones = g.constant(MatrixXd::Ones(1, 10));
                        const ad::Var in[] = {g.constant(X), ones};
                        const ad::Var h = ad::tanh(ad::matmul(p[0], ad::concat_rows(in)));
                        const ad::Var hin[] = {h, ones};
                        return ad::softmax_cross_entropy(ad::matmul(p[1], ad::concat_rows(hin)), labels);
                      }};
  for (int trial = 0; trial < 10; ++trial) {
    const Tensors theta{sample_standard_normal(4, 4, rng), sample_standard_normal(2, 5, rng)};
    const Tensors u{sample_standard_normal(4, 4, rng), sample_standard_normal(2, 5, rng)};
    const Tensors v{sample_standard_normal(4, 4, rng), sample_standard_normal(2, 5, rng)};
    const Tensors hu = ad::hessian_vector_product(tape, theta, {}, u);
    const Tensors hv = ad::hessian_vector_product(tape, theta, {}, v);
    const double a = dot(u, hv), b = dot(v, hu);
    CHECK(std::abs(a - b) <= 1e-9 * std::max({std::abs(a), std::abs(b), 1e-12}));

    Tensors comb;
    for (std::size_t i = 0; i < u.size(); ++i) comb.push_back(2.0 * u[i] - 0.5 * v[i]);
    const Tensors hc = ad::hessian_vector_product(tape, theta, {}, comb);
    Tensors expect;
    for (std::size_t i = 0; i < u.size(); ++i) expect.push_back(2.0 * hu[i] - 0.5 * hv[i]);
    CHECK(rel_err(hc, expect) < 1e-10);
  }
}

TEST_CASE("relu at the kink is flagged and contributes zero curvature") {
  const ad::Tape tape{{{2, 1}}, [](ad::Graph&, std::span<const ad::Var> p, const ad::Batch&) {
                        return ad::sum(ad::square(ad::relu(p[0])));
                      }};
  const Tensors at_kink = col({0.0, 1.0});
  const Tensors v = col({1.0, 1.0});
  const auto d = ad::differentiate(tape, at_kink, {}, &v);
  CHECK(d.at_kink);
  CHECK(d.hvp[0](0, 0) == 0.0);
  CHECK(d.hvp[0](1, 0) == doctest::Approx(2.0));
  CHECK_FALSE(ad::differentiate(tape, col({0.5, 1.0}), {}, &v).at_kink);
}

TEST_CASE("contract errors") {
  const ad::Tape vector_out{{{2, 1}}, [](ad::Graph&, std::span<const ad::Var> p, const ad::Batch&) {
                              return ad::square(p[0]);
                            }};
  CHECK_THROWS_AS(ad::evaluate(vector_out, col({1, 2}), {}), ContractError);
  CHECK_THROWS_AS(ad::evaluate(half_norm_tape(3), col({1, 2}), {}), ContractError);

  ad::Graph g;
  const ad::Var a = g.param(MatrixXd::Ones(2, 2));
  const ad::Var b = g.param(MatrixXd::Ones(2, 3));
  CHECK_THROWS_AS(a + b, ContractError);
  CHECK_THROWS_AS(ad::matmul(b, a), ContractError);
  CHECK_THROWS_AS(g.grad(a, std::span<const ad::Var>(&a, 1)), ContractError);
}
