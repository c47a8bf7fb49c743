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

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "psgd/autodiff.hpp"
#include "psgd/matrix_core.hpp"

namespace psgd {

using Shape = std::pair<Eigen::Index, Eigen::Index>;

struct Evaluation {
  double loss = 0.0;
  Tensors gradient;
  Tensors hvp;  // empty unless a direction was passed
  bool at_kink = false;
};

/// A stochastic objective over a list of parameter tensors. Each step draws a
/// batch; loss, gradient and Hessian-vector product are then exact functions
/// of (theta, batch).
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string name() const = 0;
  virtual std::vector<Shape> shapes() const = 0;
  virtual Tensors initial_params() const = 0;
  virtual ad::Batch sample_batch(Rng& rng) const = 0;
  /// Loss and gradient on the batch, plus H v when v is non-null.
  virtual Evaluation evaluate(const Tensors& theta, const ad::Batch& batch,
                              const Tensors* v = nullptr) const = 0;
  /// Noise-free objective (full training set for data problems).
  virtual double objective(const Tensors& theta) const = 0;
};

/// A Problem whose derivatives come from an autodiff tape.
class TapeProblem : public Problem {
 public:
  std::vector<Shape> shapes() const override { return tape_.param_shapes; }
  Evaluation evaluate(const Tensors& theta, const ad::Batch& batch,
                      const Tensors* v = nullptr) const override;
  const ad::Tape& tape() const { return tape_; }

 protected:
  ad::Tape tape_;
};

/// 100 (y - x^2)^2 + (1 - x)^2 from (-1, 1); one 2x1 tensor, no noise.
class Rosenbrock final : public TapeProblem {
 public:
  Rosenbrock();
  std::string name() const override { return "rosenbrock"; }
  Tensors initial_params() const override;
  ad::Batch sample_batch(Rng&) const override { return {}; }
  double objective(const Tensors& theta) const override;
};

/// f = b^T theta + theta^T H theta / 2 with gradient noise sigma/sqrt(B) N(0, I)
/// on H theta + b and, independently, on the product H v.
class NoisyQuadratic final : public Problem {
 public:
  NoisyQuadratic(MatrixXd H, VectorXd b, double sigma, int batch_size, VectorXd theta0);

  std::string name() const override { return "quadratic"; }
  std::vector<Shape> shapes() const override { return {{H_.rows(), 1}}; }
  Tensors initial_params() const override { return {MatrixXd(theta0_)}; }
  ad::Batch sample_batch(Rng& rng) const override;
  Evaluation evaluate(const Tensors& theta, const ad::Batch& batch,
                      const Tensors* v = nullptr) const override;
  double objective(const Tensors& theta) const override;

  const MatrixXd& hessian() const { return H_; }
  const VectorXd& linear() const { return b_; }
  double noise_std() const { return sigma_ / std::sqrt(static_cast<double>(batch_size_)); }

 private:
  MatrixXd H_;
  VectorXd b_;
  double sigma_;
  int batch_size_;
  VectorXd theta0_;
};

/// Two-class spiral classifier. Each layer is y = W [x; 1] with W of shape
/// [out, in + 1]; tanh on hidden layers, softmax cross-entropy on the output.
class MlpClassifier final : public TapeProblem {
 public:
  MlpClassifier(std::vector<int> layers, int n_samples, int batch_size, std::uint64_t seed);

  std::string name() const override { return "mlp"; }
  Tensors initial_params() const override { return init_; }
  ad::Batch sample_batch(Rng& rng) const override;
  double objective(const Tensors& theta) const override;

  const MatrixXd& inputs() const { return X_; }
  const std::vector<int>& labels() const { return y_; }
  ad::Batch full_batch() const;

 private:
  std::vector<int> layers_;
  int batch_size_;
  MatrixXd X_;  // 2 x n
  std::vector<int> y_;
  Tensors init_;
};

/// One-layer LSTM language model on a synthetic periodic token stream.
/// Gates [i; f; g; o] = Theta [x; h; 1] with Theta of shape [4 hidden, 2 hidden + 1];
/// the decoder D is [vocab, hidden + 1] and the embedding is D[:, :hidden]^T.
class TinyLstmLm final : public TapeProblem {
 public:
  TinyLstmLm(int vocab, int hidden, int seq_len, int batch_size, std::uint64_t seed);

  std::string name() const override { return "lstm"; }
  Tensors initial_params() const override { return init_; }
  ad::Batch sample_batch(Rng& rng) const override;
  double objective(const Tensors& theta) const override;

  const std::vector<int>& stream() const { return stream_; }
  int vocab() const { return vocab_; }

 private:
  ad::Batch windows(const std::vector<std::size_t>& starts) const;

  int vocab_;
  int hidden_;
  int seq_len_;
  int batch_size_;
  std::vector<int> stream_;
  std::vector<std::size_t> eval_starts_;
  Tensors init_;
};

struct ProblemSpec {
  enum class Kind { Rosenbrock, NoisyQuadratic, MlpClassifier, TinyLstmLm };

  Kind kind = Kind::Rosenbrock;
  // NoisyQuadratic
  int dim = 10;
  double cond = 10.0;  // |eigenvalues| log-spaced on [1, cond]
  bool indefinite = false;
  double sigma = 0.0;
  int batch = 1;  // minibatch size (also the B of the quadratic noise model)
  // MlpClassifier
  std::vector<int> layers{2, 16, 16, 2};
  int n_samples = 256;
  // TinyLstmLm
  int vocab = 32;
  int hidden = 16;
  int seq_len = 20;
  std::uint64_t data_seed = 0;

  friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

/// Minibatch size used when a config does not set one.
int default_batch_size(ProblemSpec::Kind kind);

std::string problem_kind_name(ProblemSpec::Kind k);
ProblemSpec::Kind parse_problem_kind(const std::string& s);

std::unique_ptr<Problem> make_problem(const ProblemSpec& spec);

std::unique_ptr<Rosenbrock> make_rosenbrock();
/// Requires symmetric H and sigma >= 0. theta0 defaults to zero.
std::unique_ptr<NoisyQuadratic> make_noisy_quadratic(const MatrixXd& H, const VectorXd& b,
                                                     double sigma, int batch_size,
                                                     VectorXd theta0 = {});
std::unique_ptr<MlpClassifier> make_mlp_classifier(const std::vector<int>& layers, int n_samples,
                                                   std::uint64_t seed, int batch_size = 32);
std::unique_ptr<TinyLstmLm> make_tiny_lstm_lm(int vocab, int hidden, int seq_len, std::uint64_t seed,
                                              int batch_size = 8);

/// Symmetric H = O diag(lambda) O^T with |lambda| log-spaced on [1, cond],
/// alternating signs when indefinite, O drawn from seed.
MatrixXd random_symmetric(int dim, double cond, bool indefinite, std::uint64_t seed);

}  // namespace psgd
