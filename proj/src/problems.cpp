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

#include "psgd/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace psgd {

namespace {

constexpr std::uint64_t kInitStream = 0x9e3779b97f4a7c15ULL;

ad::Var augment(ad::Graph& g, ad::Var x) {
  const ad::Var parts[] = {x, g.constant(MatrixXd::Ones(1, x.cols()))};
  return ad::concat_rows(parts);
}

MatrixXd one_hot(const std::vector<int>& tokens, int vocab) {
  MatrixXd m = MatrixXd::Zero(vocab, static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t j = 0; j < tokens.size(); ++j) m(tokens[j], static_cast<Eigen::Index>(j)) = 1.0;
  return m;
}

}  // namespace

Evaluation TapeProblem::evaluate(const Tensors& theta, const ad::Batch& batch, const Tensors* v) const {
  ad::Derivatives d = ad::differentiate(tape_, theta, batch, v);
  return {d.loss, std::move(d.gradient), std::move(d.hvp), d.at_kink};
}

// --- Rosenbrock ---

Rosenbrock::Rosenbrock() {
  tape_.param_shapes = {{2, 1}};
  tape_.build = [](ad::Graph&, std::span<const ad::Var> p, const ad::Batch&) {
    const ad::Var x = ad::slice_rows(p[0], 0, 1);
    const ad::Var y = ad::slice_rows(p[0], 1, 1);
    return ad::sum(100.0 * ad::square(y - ad::square(x)) + ad::square(ad::scale_shift(x, -1.0, 1.0)));
  };
}

Tensors Rosenbrock::initial_params() const {
  MatrixXd theta(2, 1);
  theta << -1.0, 1.0;
  return {theta};
}

double Rosenbrock::objective(const Tensors& theta) const { return ad::evaluate(tape_, theta, {}); }

std::unique_ptr<Rosenbrock> make_rosenbrock() { return std::make_unique<Rosenbrock>(); }

// --- NoisyQuadratic ---

NoisyQuadratic::NoisyQuadratic(MatrixXd H, VectorXd b, double sigma, int batch_size, VectorXd theta0)
    : H_(std::move(H)), b_(std::move(b)), sigma_(sigma), batch_size_(batch_size), theta0_(std::move(theta0)) {
  const Eigen::Index n = H_.rows();
  if (H_.cols() != n || n < 1) throw ContractError("make_noisy_quadratic: H must be square");
  if (max_abs_norm(H_ - H_.transpose()) > 1e-12 * std::max(1.0, max_abs_norm(H_)))
    throw ContractError("make_noisy_quadratic: H is not symmetric");
  if (b_.size() != n) throw ContractError("make_noisy_quadratic: b has the wrong length");
  if (!(sigma_ >= 0.0)) throw ContractError("make_noisy_quadratic: sigma must be >= 0");
  if (batch_size_ < 1) throw ContractError("make_noisy_quadratic: batch size must be >= 1");
  if (theta0_.size() == 0) theta0_ = VectorXd::Zero(n);
  if (theta0_.size() != n) throw ContractError("make_noisy_quadratic: theta0 has the wrong length");
  require_finite(H_, "make_noisy_quadratic H");
}

ad::Batch NoisyQuadratic::sample_batch(Rng& rng) const {
  const Eigen::Index n = H_.rows();
  ad::Batch batch;
  if (sigma_ == 0.0) return batch;
  batch.data.push_back(noise_std() * sample_standard_normal(n, rng));  // on the gradient
  batch.data.push_back(noise_std() * sample_standard_normal(n, rng));  // on H v
  return batch;
}

Evaluation NoisyQuadratic::evaluate(const Tensors& theta, const ad::Batch& batch, const Tensors* v) const {
  if (theta.size() != 1 || theta[0].rows() != H_.rows() || theta[0].cols() != 1)
    throw ContractError("NoisyQuadratic: parameter shape mismatch");
  const VectorXd x = theta[0].col(0);
  Evaluation e;
  e.loss = b_.dot(x) + 0.5 * x.dot(H_ * x);
  VectorXd g = H_ * x + b_;
  if (!batch.data.empty()) g += batch.data[0];
  e.gradient.push_back(g);
  if (v != nullptr) {
    if (v->size() != 1 || (*v)[0].rows() != H_.rows() || (*v)[0].cols() != 1)
      throw ContractError("NoisyQuadratic: direction shape mismatch");
    VectorXd hv = H_ * (*v)[0].col(0);
    if (!batch.data.empty()) hv += batch.data[1];
    e.hvp.push_back(hv);
  }
  return e;
}

double NoisyQuadratic::objective(const Tensors& theta) const {
  const VectorXd x = theta.at(0).col(0);
  return b_.dot(x) + 0.5 * x.dot(H_ * x);
}

std::unique_ptr<NoisyQuadratic> make_noisy_quadratic(const MatrixXd& H, const VectorXd& b, double sigma,
                                                     int batch_size, VectorXd theta0) {
  return std::make_unique<NoisyQuadratic>(H, b, sigma, batch_size, std::move(theta0));
}

MatrixXd random_symmetric(int dim, double cond, bool indefinite, std::uint64_t seed) {
  if (dim < 1) throw ContractError("random_symmetric: dim must be >= 1");
  if (!(cond >= 1.0)) throw ContractError("random_symmetric: cond must be >= 1");
  Rng rng(seed);
  const MatrixXd A = sample_standard_normal(dim, dim, rng);
  const MatrixXd O = Eigen::HouseholderQR<MatrixXd>(A).householderQ();
  VectorXd lam(dim);
  for (int i = 0; i < dim; ++i) {
    const double t = dim == 1 ? 0.0 : static_cast<double>(i) / (dim - 1);
    lam[i] = std::pow(cond, t);
    if (indefinite && i % 2 == 1) lam[i] = -lam[i];
  }
  MatrixXd H = O * lam.asDiagonal() * O.transpose();
  return 0.5 * (H + H.transpose());
}

// --- MlpClassifier ---

MlpClassifier::MlpClassifier(std::vector<int> layers, int n_samples, int batch_size, std::uint64_t seed)
    : layers_(std::move(layers)), batch_size_(batch_size) {
  if (layers_.size() < 2) throw ContractError("make_mlp_classifier: need at least input and output sizes");
  for (int s : layers_)
    if (s < 1) throw ContractError("make_mlp_classifier: layer sizes must be >= 1");
  if (layers_.front() != 2) throw ContractError("make_mlp_classifier: spiral inputs are 2-dimensional");
  if (layers_.back() != 2) throw ContractError("make_mlp_classifier: spiral has 2 classes");
  if (n_samples < 2) throw ContractError("make_mlp_classifier: need at least 2 samples");
  if (batch_size_ < 1) throw ContractError("make_mlp_classifier: batch size must be >= 1");

  Rng data(seed);
  X_.resize(2, n_samples);
  y_.resize(static_cast<std::size_t>(n_samples));
  const int per_class = (n_samples + 1) / 2;
  for (int k = 0; k < n_samples; ++k) {
    const int c = k % 2;
    const double t = (static_cast<double>(k / 2) + 0.5) / per_class;
    const double angle = c * std::numbers::pi + 3.0 * std::numbers::pi * t;
    const VectorXd jitter = 0.05 * sample_standard_normal(2, data);
    X_(0, k) = t * std::cos(angle) + jitter[0];
    X_(1, k) = t * std::sin(angle) + jitter[1];
    y_[static_cast<std::size_t>(k)] = c;
  }

  Rng init(seed ^ kInitStream);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    const int in = layers_[l], out = layers_[l + 1];
    MatrixXd W = MatrixXd::Zero(out, in + 1);
    W.leftCols(in) = sample_standard_normal(out, in, init) / std::sqrt(static_cast<double>(in));
    init_.push_back(W);
    tape_.param_shapes.push_back({out, in + 1});
  }

  const std::size_t n_layers = layers_.size() - 1;
  tape_.build = [n_layers](ad::Graph& g, std::span<const ad::Var> p, const ad::Batch& batch) {
    ad::Var h = g.constant(batch.data.at(0));
    for (std::size_t l = 0; l < n_layers; ++l) {
      h = ad::matmul(p[l], augment(g, h));
      if (l + 1 < n_layers) h = ad::tanh(h);
    }
    return ad::softmax_cross_entropy(h, batch.labels.at(0));
  };
}

ad::Batch MlpClassifier::sample_batch(Rng& rng) const {
  const auto n = static_cast<std::size_t>(X_.cols());
  if (static_cast<std::size_t>(batch_size_) >= n) return full_batch();
  ad::Batch batch;
  MatrixXd x(2, batch_size_);
  std::vector<int> y(static_cast<std::size_t>(batch_size_));
  for (int j = 0; j < batch_size_; ++j) {
    const auto k = static_cast<Eigen::Index>(rng.next() % n);
    x.col(j) = X_.col(k);
    y[static_cast<std::size_t>(j)] = y_[static_cast<std::size_t>(k)];
  }
  batch.data.push_back(std::move(x));
  batch.labels.push_back(std::move(y));
  return batch;
}

ad::Batch MlpClassifier::full_batch() const {
  ad::Batch batch;
  batch.data.push_back(X_);
  batch.labels.push_back(y_);
  return batch;
}

double MlpClassifier::objective(const Tensors& theta) const {
  return ad::evaluate(tape_, theta, full_batch());
}

std::unique_ptr<MlpClassifier> make_mlp_classifier(const std::vector<int>& layers, int n_samples,
                                                   std::uint64_t seed, int batch_size) {
  return std::make_unique<MlpClassifier>(layers, n_samples, batch_size, seed);
}

// --- TinyLstmLm ---

TinyLstmLm::TinyLstmLm(int vocab, int hidden, int seq_len, int batch_size, std::uint64_t seed)
    : vocab_(vocab), hidden_(hidden), seq_len_(seq_len), batch_size_(batch_size) {
  if (vocab < 2 || hidden < 2) throw ContractError("make_tiny_lstm_lm: vocab and hidden must be >= 2");
  if (seq_len < 1 || batch_size < 1) throw ContractError("make_tiny_lstm_lm: seq_len and batch must be >= 1");

  // A random motif over a few symbols repeated through the stream, with 5%
  // of tokens replaced. Symbols recur inside the motif, so the next token
  // depends on more than the current one.
  Rng data(seed);
  const int period = 12 + static_cast<int>(data.next() % 8);
  const auto symbols = static_cast<std::uint64_t>(std::min(vocab, 6));
  std::vector<int> motif(static_cast<std::size_t>(period));
  for (auto& t : motif) t = static_cast<int>(data.next() % symbols);
  const std::size_t length = 4096;
  stream_.resize(length);
  for (std::size_t i = 0; i < length; ++i) {
    stream_[i] = motif[i % motif.size()];
    if (data.uniform() < 0.05) stream_[i] = static_cast<int>(data.next() % static_cast<std::uint64_t>(vocab));
  }
  const std::size_t span = length - static_cast<std::size_t>(seq_len_) - 1;
  for (std::size_t k = 0; k < 32; ++k) eval_starts_.push_back(k * span / 32);

  Rng init(seed ^ kInitStream);
  const int H = hidden_;
  MatrixXd gates = MatrixXd::Zero(4 * H, 2 * H + 1);
  gates.leftCols(2 * H) = sample_standard_normal(4 * H, 2 * H, init) / std::sqrt(2.0 * H);
  MatrixXd decoder = MatrixXd::Zero(vocab, H + 1);
  decoder.leftCols(H) = 0.1 * sample_standard_normal(vocab, H, init);
  init_ = {gates, decoder};
  tape_.param_shapes = {{4 * H, 2 * H + 1}, {vocab, H + 1}};

  const int V = vocab_;
  tape_.build = [H, V](ad::Graph& g, std::span<const ad::Var> p, const ad::Batch& batch) {
    const ad::Var theta = p[0];
    const ad::Var decoder = p[1];
    const ad::Var embed = ad::slice_rows(ad::transpose(decoder), 0, H);  // H x V
    const std::size_t steps = batch.labels.size() - 1;
    const auto n = static_cast<Eigen::Index>(batch.labels[0].size());
    ad::Var h = g.constant(MatrixXd::Zero(H, n));
    ad::Var c = g.constant(MatrixXd::Zero(H, n));
    const ad::Var ones = g.constant(MatrixXd::Ones(1, n));
    ad::Var total = g.constant(MatrixXd::Zero(1, 1));
    for (std::size_t t = 0; t < steps; ++t) {
      const ad::Var x = ad::matmul(embed, g.constant(one_hot(batch.labels[t], V)));
      const ad::Var in[] = {x, h, ones};
      const ad::Var z = ad::matmul(theta, ad::concat_rows(in));
      const ad::Var i_gate = ad::sigmoid(ad::slice_rows(z, 0, H));
      const ad::Var f_gate = ad::sigmoid(ad::slice_rows(z, H, H));
      const ad::Var g_gate = ad::tanh(ad::slice_rows(z, 2 * H, H));
      const ad::Var o_gate = ad::sigmoid(ad::slice_rows(z, 3 * H, H));
      c = f_gate * c + i_gate * g_gate;
      h = o_gate * ad::tanh(c);
      const ad::Var out[] = {h, ones};
      total = total + ad::softmax_cross_entropy(ad::matmul(decoder, ad::concat_rows(out)), batch.labels[t + 1]);
    }
    return ad::scale_shift(total, 1.0 / static_cast<double>(steps), 0.0);
  };
}

ad::Batch TinyLstmLm::windows(const std::vector<std::size_t>& starts) const {
  ad::Batch batch;
  for (int t = 0; t <= seq_len_; ++t) {
    std::vector<int> col;
    for (std::size_t s : starts) col.push_back(stream_[s + static_cast<std::size_t>(t)]);
    batch.labels.push_back(std::move(col));
  }
  return batch;
}

ad::Batch TinyLstmLm::sample_batch(Rng& rng) const {
  const std::size_t span = stream_.size() - static_cast<std::size_t>(seq_len_);
  std::vector<std::size_t> starts;
  for (int k = 0; k < batch_size_; ++k) starts.push_back(rng.next() % span);
  return windows(starts);
}

double TinyLstmLm::objective(const Tensors& theta) const {
  return ad::evaluate(tape_, theta, windows(eval_starts_));
}

std::unique_ptr<TinyLstmLm> make_tiny_lstm_lm(int vocab, int hidden, int seq_len, std::uint64_t seed,
                                              int batch_size) {
  return std::make_unique<TinyLstmLm>(vocab, hidden, seq_len, batch_size, seed);
}

// --- specs ---

std::string problem_kind_name(ProblemSpec::Kind k) {
  switch (k) {
    case ProblemSpec::Kind::Rosenbrock: return "rosenbrock";
    case ProblemSpec::Kind::NoisyQuadratic: return "quadratic";
    case ProblemSpec::Kind::MlpClassifier: return "mlp";
    case ProblemSpec::Kind::TinyLstmLm: return "lstm";
  }
  return "?";
}

ProblemSpec::Kind parse_problem_kind(const std::string& s) {
  if (s == "rosenbrock") return ProblemSpec::Kind::Rosenbrock;
  if (s == "quadratic") return ProblemSpec::Kind::NoisyQuadratic;
  if (s == "mlp") return ProblemSpec::Kind::MlpClassifier;
  if (s == "lstm") return ProblemSpec::Kind::TinyLstmLm;
  throw ContractError("unknown problem kind '" + s + "'");
}

int default_batch_size(ProblemSpec::Kind kind) {
  switch (kind) {
    case ProblemSpec::Kind::MlpClassifier: return 32;
    case ProblemSpec::Kind::TinyLstmLm: return 8;
    default: return 1;
  }
}

std::unique_ptr<Problem> make_problem(const ProblemSpec& spec) {
  switch (spec.kind) {
    case ProblemSpec::Kind::Rosenbrock:
      return make_rosenbrock();
    case ProblemSpec::Kind::NoisyQuadratic: {
      const MatrixXd H = random_symmetric(spec.dim, spec.cond, spec.indefinite, spec.data_seed);
      Rng rng(spec.data_seed ^ kInitStream);
      const VectorXd b = sample_standard_normal(spec.dim, rng);
      return make_noisy_quadratic(H, b, spec.sigma, spec.batch);
    }
    case ProblemSpec::Kind::MlpClassifier:
      return make_mlp_classifier(spec.layers, spec.n_samples, spec.data_seed, spec.batch);
    case ProblemSpec::Kind::TinyLstmLm:
      return make_tiny_lstm_lm(spec.vocab, spec.hidden, spec.seq_len, spec.data_seed, spec.batch);
  }
  throw ContractError("make_problem: unknown kind");
}

}  // namespace psgd
