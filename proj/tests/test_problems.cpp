#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "psgd/problems.hpp"

using namespace psgd;

namespace {

Tensors col(double a, double b) {
  MatrixXd m(2, 1);
  m << a, b;
  return {m};
}

}  // namespace

TEST_CASE("rosenbrock: values, gradient, HVP") {
  auto p = make_rosenbrock();
  CHECK(p->initial_params()[0] == col(-1, 1)[0]);
  CHECK(p->objective(col(-1, 1)) == doctest::Approx(4.0));
  const auto at_min = p->evaluate(col(1, 1), {});
  CHECK(at_min.loss == 0.0);
  CHECK(at_min.gradient[0].norm() == 0.0);

  const Tensors v = col(1, 0);
  const auto e = p->evaluate(col(-1, 1), {}, &v);
  const Tensors fd = oracle::fd_hvp(*p, col(-1, 1), {}, v, 1e-5);
  CHECK(fd[0](0, 0) == doctest::Approx(802.0).epsilon(1e-6));
  CHECK(fd[0](1, 0) == doctest::Approx(400.0).epsilon(1e-6));
  CHECK(oracle::rel_err(e.hvp, fd) < 1e-8);
}

TEST_CASE("noisy quadratic: exact gradient and stationary point without noise") {
  MatrixXd H(2, 2);
  H << 3, 1, 1, 2;
  VectorXd b(2);
  b << 1, -1;
  auto p = make_noisy_quadratic(H, b, 0.0, 1);
  Rng rng(1);
  const Tensors theta = col(0.5, -2);
  const auto e = p->evaluate(theta, p->sample_batch(rng));
  CHECK((e.gradient[0] - (H * theta[0] + b)).norm() == 0.0);

  const VectorXd star = -H.ldlt().solve(b);
  const auto s = p->evaluate({MatrixXd(star)}, p->sample_batch(rng));
  CHECK(s.gradient[0].norm() < 1e-14);

  MatrixXd asym = H;
  asym(0, 1) = 5;
  CHECK_THROWS_AS(make_noisy_quadratic(asym, b, 0.0, 1), ContractError);
  CHECK_THROWS_AS(make_noisy_quadratic(H, b, -1.0, 1), ContractError);
}

TEST_CASE("noisy quadratic: noise covariance is sigma^2 I / B") {
  const int n = 4;
  const double sigma = 3.0;
  const int B = 4;
  auto p = make_noisy_quadratic(MatrixXd::Identity(n, n), VectorXd::Zero(n), sigma, B);
  Rng rng(9);
  const Tensors theta{MatrixXd::Zero(n, 1)};
  const Tensors v{MatrixXd::Zero(n, 1)};
  MatrixXd cov_g = MatrixXd::Zero(n, n), cov_h = MatrixXd::Zero(n, n);
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    const auto e = p->evaluate(theta, p->sample_batch(rng), &v);
    cov_g += e.gradient[0] * e.gradient[0].transpose();
    cov_h += e.hvp[0] * e.hvp[0].transpose();
  }
  cov_g /= draws;
  cov_h /= draws;
  const double target = sigma * sigma / B;
  for (const MatrixXd* c : {&cov_g, &cov_h}) {
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs((*c)(i, i) / target - 1.0) < 0.05);
      for (int j = 0; j < n; ++j)
        if (i != j) CHECK(std::abs((*c)(i, j)) < 0.05 * target);
    }
  }
}

TEST_CASE("random_symmetric: spectrum and determinism") {
  const MatrixXd H = random_symmetric(6, 100.0, true, 3);
  CHECK((H - H.transpose()).norm() == 0.0);
  VectorXd lam = sym_eig(H).eigenvalues.cwiseAbs();
  std::sort(lam.data(), lam.data() + lam.size());
  CHECK(lam[0] == doctest::Approx(1.0));
  CHECK(lam[5] == doctest::Approx(100.0));
  CHECK(sym_eig(H).eigenvalues.minCoeff() < 0.0);
  CHECK(random_symmetric(6, 100.0, true, 3) == H);
}

TEST_CASE("mlp: zero weights give ln 2, FD gradient, bias column") {
  auto p = make_mlp_classifier({2, 8, 2}, 64, 5);
  CHECK(p->shapes() == std::vector<Shape>{{8, 3}, {2, 9}});
  Tensors zero;
  for (auto [r, c] : p->shapes()) zero.push_back(MatrixXd::Zero(r, c));
  CHECK(p->objective(zero) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(4);
  const ad::Batch batch = p->sample_batch(rng);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensors theta = oracle::random_like(*p, rng, 0.7);
    const auto e = p->evaluate(theta, batch);
    CHECK(oracle::rel_err(e.gradient, oracle::fd_gradient(*p, theta, batch, 1e-5)) < 1e-6);
  }

  // Output-layer bias only: logits equal that column for every sample.
  Tensors bias = zero;
  bias[1](0, 8) = 1.0;
  const double expected = std::log(1.0 + std::exp(-1.0)) * 0.5 + std::log(1.0 + std::exp(1.0)) * 0.5;
  int ones = 0;
  for (int y : p->labels()) ones += y;
  CHECK(ones == 32);
  CHECK(p->objective(bias) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("mlp: dataset regenerates bit-exactly from the seed") {
  auto a = make_mlp_classifier({2, 4, 2}, 100, 17);
  auto b = make_mlp_classifier({2, 4, 2}, 100, 17);
  auto c = make_mlp_classifier({2, 4, 2}, 100, 18);
  CHECK(a->inputs() == b->inputs());
  CHECK(a->labels() == b->labels());
  CHECK(a->initial_params() == b->initial_params());
  CHECK(a->inputs() != c->inputs());
  CHECK_THROWS_AS(make_mlp_classifier({2, 0, 2}, 10, 1), ContractError);
}

TEST_CASE("lstm: shapes, initial loss, HVP symmetry, determinism") {
  auto p = make_tiny_lstm_lm(12, 5, 6, 2, 4);
  CHECK(p->shapes()[0] == Shape{20, 11});
  CHECK(p->shapes()[1] == Shape{12, 6});
  CHECK(std::abs(p->objective(p->initial_params()) - std::log(12.0)) < 0.1);
  Tensors zero;
  for (auto [r, c] : p->shapes()) zero.push_back(MatrixXd::Zero(r, c));
  CHECK(p->objective(zero) == doctest::Approx(std::log(12.0)).epsilon(1e-12));

  Rng rng(8);
  const ad::Batch batch = p->sample_batch(rng);
  const Tensors theta = oracle::random_like(*p, rng, 0.5);
  const Tensors u = oracle::random_like(*p, rng);
  const Tensors v = oracle::random_like(*p, rng);
  const auto eu = p->evaluate(theta, batch, &u);
  const auto ev = p->evaluate(theta, batch, &v);
  const double a = oracle::dot(v, eu.hvp), b = oracle::dot(u, ev.hvp);
  CHECK(std::abs(a - b) <= 1e-9 * std::max(std::abs(a), 1.0));
  CHECK(oracle::rel_err(ev.hvp, oracle::fd_hvp(*p, theta, batch, v, 1e-5)) < 1e-5);
  CHECK(oracle::rel_err(eu.gradient, oracle::fd_gradient(*p, theta, batch, 1e-5)) < 1e-6);

  auto q = make_tiny_lstm_lm(12, 5, 6, 2, 4);
  CHECK(p->stream() == q->stream());
  CHECK(p->initial_params() == q->initial_params());
}

TEST_CASE("make_problem dispatch and kind names") {
  for (auto k : {ProblemSpec::Kind::Rosenbrock, ProblemSpec::Kind::NoisyQuadratic,
                 ProblemSpec::Kind::MlpClassifier, ProblemSpec::Kind::TinyLstmLm}) {
    CHECK(parse_problem_kind(problem_kind_name(k)) == k);
    ProblemSpec spec;
    spec.kind = k;
    spec.dim = 3;
    auto p = make_problem(spec);
    CHECK(p->name() == problem_kind_name(k));
    CHECK(std::isfinite(p->objective(p->initial_params())));
  }
  CHECK_THROWS_AS(parse_problem_kind("resnet"), ContractError);
}
