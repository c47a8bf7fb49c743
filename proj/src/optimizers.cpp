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

#include "psgd/optimizers.hpp"

#include <cmath>

namespace psgd {

namespace {

constexpr double kEsgdFloor = 1e-30;

Tensors zeros_like(const Tensors& t) {
  Tensors out;
  for (const auto& m : t) out.push_back(MatrixXd::Zero(m.rows(), m.cols()));
  return out;
}

Tensors draw_normal(const Tensors& like, Rng& rng) {
  Tensors out;
  for (const auto& m : like) out.push_back(sample_standard_normal(m.rows(), m.cols(), rng));
  return out;
}

double global_norm(const Tensors& t) {
  double s = 0.0;
  for (const auto& m : t) s += m.squaredNorm();
  return std::sqrt(s);
}

bool all_finite(const Tensors& t) {
  for (const auto& m : t)
    if (!m.allFinite()) return false;
  return true;
}

void check_evaluation(const Evaluation& e, bool need_hvp, std::uint64_t iteration) {
  if (!std::isfinite(e.loss)) throw StepAborted(iteration, "non-finite loss");
  if (!all_finite(e.gradient)) throw StepAborted(iteration, "non-finite gradient");
  if (need_hvp && !all_finite(e.hvp)) throw StepAborted(iteration, "non-finite Hessian-vector product");
}

void apply_direction(OptimizerState& state, const OptimizerConfig& config, Tensors direction) {
  if (config.clip_threshold) direction = clip_preconditioned(direction, *config.clip_threshold);
  for (std::size_t i = 0; i < state.theta.size(); ++i) state.theta[i] -= config.lr * direction[i];
  if (!all_finite(state.theta)) throw StepAborted(state.iteration, "non-finite parameters after step");
}

TraceRow row(const OptimizerState& state, const Evaluation& e) {
  TraceRow r;
  r.iteration = state.iteration;
  r.loss = e.loss;
  r.grad_norm = global_norm(e.gradient);
  r.precond_updates = state.precond_updates;
  return r;
}

void require_kind(const OptimizerConfig& config, std::initializer_list<OptimizerKind> kinds, const char* op) {
  for (auto k : kinds)
    if (config.kind == k) return;
  throw ContractError(std::string(op) + ": optimizer kind " + optimizer_kind_name(config.kind) +
                      " does not match");
}

void check_state(const Problem& problem, const OptimizerState& state) {
  const auto shapes = problem.shapes();
  if (shapes.size() != state.theta.size()) throw ContractError("optimizer state does not match problem");
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (state.theta[i].rows() != shapes[i].first || state.theta[i].cols() != shapes[i].second)
      throw ContractError("optimizer state does not match problem");
}

}  // namespace

std::string optimizer_kind_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Newton: return "newton";
    case OptimizerKind::Fisher: return "fisher";
    case OptimizerKind::DiagFisher: return "diag_fisher";
    case OptimizerKind::Esgd: return "esgd";
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::Nesterov: return "nesterov";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
  for (auto k : {OptimizerKind::Newton, OptimizerKind::Fisher, OptimizerKind::DiagFisher, OptimizerKind::Esgd,
                 OptimizerKind::Sgd, OptimizerKind::Momentum, OptimizerKind::Nesterov, OptimizerKind::Adam})
    if (optimizer_kind_name(k) == s) return k;
  throw ContractError("unknown optimizer kind '" + s + "'");
}

bool is_psgd(OptimizerKind k) { return k == OptimizerKind::Newton || k == OptimizerKind::Fisher; }

void OptimizerConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& range) {
    throw ContractError("optimizer." + field + " must be " + range);
  };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "positive");
  if (kind == OptimizerKind::Newton && lr > 1.0) fail("lr", "in (0, 1] for the newton kind");
  if (!(lr_precond > 0.0 && lr_precond < 1.0)) fail("lr_precond", "in (0, 1)");
  if (!(damping >= 0.0) || !std::isfinite(damping)) fail("damping", ">= 0");
  if (!(update_probability >= 0.0 && update_probability <= 1.0)) fail("update_probability", "in [0, 1]");
  if (clip_threshold && !(*clip_threshold > 0.0)) fail("clip_threshold", "positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon", "positive");
  if (batch_size < 1) fail("batch_size", ">= 1");
  if (!(ema_factor > 0.0 && ema_factor < 1.0)) fail("ema_factor", "in (0, 1)");
  if (!(second_moment_ema > 0.0 && second_moment_ema < 1.0)) fail("second_moment_ema", "in (0, 1)");
  if (!(q_init > 0.0) || !std::isfinite(q_init)) fail("q_init", "positive");
}

OptimizerState make_state(const Problem& problem, const OptimizerConfig& config, std::uint64_t seed) {
  config.validate();
  OptimizerState s;
  s.theta = problem.initial_params();
  s.rng = Rng(seed);
  const Tensors z = zeros_like(s.theta);
  switch (config.kind) {
    case OptimizerKind::Newton:
    case OptimizerKind::Fisher:
      for (const auto& t : s.theta)
        s.q.push_back(QFactor<double>::init(config.group, t.rows(), t.cols(), config.q_init));
      if (config.momentum > 0.0) s.buffer = z;
      if (config.kind == OptimizerKind::Fisher && config.unbiased_fisher) s.grad_mean = z;
      break;
    case OptimizerKind::DiagFisher:
      s.second_moment = z;
      break;
    case OptimizerKind::Esgd:
      s.second_moment = z;
      s.ema_vv = z;
      break;
    case OptimizerKind::Sgd:
      break;
    case OptimizerKind::Momentum:
    case OptimizerKind::Nesterov:
      s.buffer = z;
      break;
    case OptimizerKind::Adam:
      s.buffer = z;
      s.second_moment = z;
      break;
  }
  return s;
}

void check_compatible(const Problem& problem, const OptimizerConfig& config, const OptimizerState& state) {
  const OptimizerState fresh = make_state(problem, config, 0);
  auto same_shapes = [](const Tensors& a, const Tensors& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    return true;
  };
  bool ok = same_shapes(fresh.theta, state.theta) && same_shapes(fresh.buffer, state.buffer) &&
            same_shapes(fresh.second_moment, state.second_moment) && same_shapes(fresh.ema_vv, state.ema_vv) &&
            same_shapes(fresh.grad_mean, state.grad_mean) && fresh.q.size() == state.q.size();
  for (std::size_t i = 0; ok && i < fresh.q.size(); ++i)
    ok = fresh.q[i].kind() == state.q[i].kind() && fresh.q[i].rows() == state.q[i].rows() &&
         fresh.q[i].cols() == state.q[i].cols();
  if (!ok)
    throw ContractError("optimizer state does not match problem " + problem.name() + " and optimizer " +
                        optimizer_kind_name(config.kind));
}

MatrixXd clip_preconditioned(const MatrixXd& g, double tau) {
  if (!(tau > 0.0)) throw ContractError("clip_preconditioned: threshold must be positive");
  const double n = g.norm();
  return n > tau ? MatrixXd(g * (tau / n)) : g;
}

Tensors clip_preconditioned(const Tensors& g, double tau) {
  if (!(tau > 0.0)) throw ContractError("clip_preconditioned: threshold must be positive");
  const double n = global_norm(g);
  if (!(n > tau)) return g;
  Tensors out = g;
  for (auto& m : out) m *= tau / n;
  return out;
}

Tensors precondition(const OptimizerState& state, const Tensors& g) {
  if (state.q.size() != g.size()) throw ContractError("precondition: tensor count mismatch");
  Tensors out;
  for (std::size_t i = 0; i < g.size(); ++i) out.push_back(state.q[i].precondition(g[i]));
  return out;
}

void psgd_update(OptimizerState& state, const OptimizerConfig& config, const Tensors& g, const Tensors& u,
                 const Tensors& v, double coin) {
  Tensors direction = precondition(state, g);
  if (config.momentum > 0.0) {
    for (std::size_t i = 0; i < direction.size(); ++i) {
      state.buffer[i] = config.momentum * state.buffer[i] + direction[i];
      direction[i] = state.buffer[i];
    }
  }
  apply_direction(state, config, std::move(direction));
  if (coin < config.update_probability) {
    for (std::size_t i = 0; i < state.q.size(); ++i)
      state.q[i].update(state.q[i].relative_gradient(u[i], v[i]), config.lr_precond);
    ++state.precond_updates;
  }
}

TraceRow newton_step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config) {
  require_kind(config, {OptimizerKind::Newton}, "newton_step");
  check_state(problem, state);
  ++state.iteration;
  const ad::Batch batch = problem.sample_batch(state.rng);
  const Tensors v = draw_normal(state.theta, state.rng);
  const Evaluation e = problem.evaluate(state.theta, batch, &v);
  const double coin = state.rng.uniform();
  check_evaluation(e, true, state.iteration);
  TraceRow r = row(state, e);
  psgd_update(state, config, e.gradient, e.hvp, v, coin);
  r.precond_updates = state.precond_updates;
  return r;
}

TraceRow fisher_step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config) {
  require_kind(config, {OptimizerKind::Fisher}, "fisher_step");
  check_state(problem, state);
  ++state.iteration;
  const ad::Batch batch = problem.sample_batch(state.rng);
  const Tensors v = draw_normal(state.theta, state.rng);
  const Evaluation e = problem.evaluate(state.theta, batch);
  const double coin = state.rng.uniform();
  check_evaluation(e, false, state.iteration);
  TraceRow r = row(state, e);

  Tensors u = e.gradient;
  if (config.unbiased_fisher) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.batch_size));
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = e.gradient[i] - state.grad_mean[i] + scale * state.grad_mean[i];
      state.grad_mean[i] = config.ema_factor * state.grad_mean[i] + (1.0 - config.ema_factor) * e.gradient[i];
    }
  } else {
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += config.damping * v[i];
  }
  psgd_update(state, config, e.gradient, u, v, coin);
  r.precond_updates = state.precond_updates;
  return r;
}

Tensors diag_fisher_preconditioner(const OptimizerState& state, const OptimizerConfig& config) {
  const double correction =
      state.iteration == 0 ? 1.0 : 1.0 - std::pow(config.second_moment_ema, static_cast<double>(state.iteration));
  const double lambda2 = config.damping * config.damping;
  Tensors out;
  for (const auto& m : state.second_moment)
    out.push_back(((m.array() / correction + lambda2).sqrt().max(kEsgdFloor)).inverse().matrix());
  return out;
}

TraceRow closed_form_diag_fisher_step(const Problem& problem, OptimizerState& state,
                                      const OptimizerConfig& config) {
  require_kind(config, {OptimizerKind::DiagFisher}, "closed_form_diag_fisher_step");
  check_state(problem, state);
  ++state.iteration;
  const ad::Batch batch = problem.sample_batch(state.rng);
  const Evaluation e = problem.evaluate(state.theta, batch);
  check_evaluation(e, false, state.iteration);
  const double beta = config.second_moment_ema;
  for (std::size_t i = 0; i < e.gradient.size(); ++i)
    state.second_moment[i] = beta * state.second_moment[i] + (1.0 - beta) * e.gradient[i].cwiseAbs2();
  ++state.precond_updates;
  const Tensors p = diag_fisher_preconditioner(state, config);
  Tensors direction;
  for (std::size_t i = 0; i < p.size(); ++i) direction.push_back(p[i].cwiseProduct(e.gradient[i]));
  apply_direction(state, config, std::move(direction));
  return row(state, e);
}

Tensors esgd_preconditioner(const OptimizerState& state) {
  Tensors out;
  for (std::size_t i = 0; i < state.ema_vv.size(); ++i)
    out.push_back((state.ema_vv[i].array() / state.second_moment[i].array().max(kEsgdFloor)).sqrt().matrix());
  return out;
}

TraceRow esgd_diag_step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config) {
  require_kind(config, {OptimizerKind::Esgd}, "esgd_diag_step");
  check_state(problem, state);
  ++state.iteration;
  const ad::Batch batch = problem.sample_batch(state.rng);
  const Tensors v = draw_normal(state.theta, state.rng);
  const Evaluation e = problem.evaluate(state.theta, batch, &v);
  check_evaluation(e, true, state.iteration);
  const double beta = config.second_moment_ema;
  for (std::size_t i = 0; i < v.size(); ++i) {
    state.ema_vv[i] = beta * state.ema_vv[i] + (1.0 - beta) * v[i].cwiseAbs2();
    state.second_moment[i] = beta * state.second_moment[i] + (1.0 - beta) * e.hvp[i].cwiseAbs2();
  }
  ++state.precond_updates;
  const Tensors p = esgd_preconditioner(state);
  Tensors direction;
  for (std::size_t i = 0; i < p.size(); ++i) direction.push_back(p[i].cwiseProduct(e.gradient[i]));
  apply_direction(state, config, std::move(direction));
  return row(state, e);
}

TraceRow baseline_step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config) {
  require_kind(config, {OptimizerKind::Sgd, OptimizerKind::Momentum, OptimizerKind::Nesterov, OptimizerKind::Adam},
               "baseline_step");
  check_state(problem, state);
  ++state.iteration;
  const ad::Batch batch = problem.sample_batch(state.rng);
  const Evaluation e = problem.evaluate(state.theta, batch);
  check_evaluation(e, false, state.iteration);
  const Tensors& g = e.gradient;
  Tensors direction;
  switch (config.kind) {
    case OptimizerKind::Sgd:
      direction = g;
      break;
    case OptimizerKind::Momentum:
      for (std::size_t i = 0; i < g.size(); ++i) {
        state.buffer[i] = config.momentum * state.buffer[i] + g[i];
        direction.push_back(state.buffer[i]);
      }
      break;
    case OptimizerKind::Nesterov:
      for (std::size_t i = 0; i < g.size(); ++i) {
        state.buffer[i] = config.momentum * state.buffer[i] + g[i];
        direction.push_back(g[i] + config.momentum * state.buffer[i]);
      }
      break;
    case OptimizerKind::Adam: {
      const double t = static_cast<double>(state.iteration);
      const double c1 = 1.0 - std::pow(config.beta1, t);
      const double c2 = 1.0 - std::pow(config.beta2, t);
      for (std::size_t i = 0; i < g.size(); ++i) {
        state.buffer[i] = config.beta1 * state.buffer[i] + (1.0 - config.beta1) * g[i];
        state.second_moment[i] = config.beta2 * state.second_moment[i] + (1.0 - config.beta2) * g[i].cwiseAbs2();
        direction.push_back(((state.buffer[i].array() / c1) /
                             ((state.second_moment[i].array() / c2).sqrt() + config.epsilon))
                                .matrix());
      }
      break;
    }
    default:
      break;
  }
  apply_direction(state, config, std::move(direction));
  return row(state, e);
}

TraceRow step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config) {
  switch (config.kind) {
    case OptimizerKind::Newton: return newton_step(problem, state, config);
    case OptimizerKind::Fisher: return fisher_step(problem, state, config);
    case OptimizerKind::DiagFisher: return closed_form_diag_fisher_step(problem, state, config);
    case OptimizerKind::Esgd: return esgd_diag_step(problem, state, config);
    default: return baseline_step(problem, state, config);
  }
}

}  // namespace psgd
