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
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "psgd/lie_groups.hpp"
#include "psgd/matrix_core.hpp"
#include "psgd/problems.hpp"

namespace psgd {

enum class OptimizerKind { Newton, Fisher, DiagFisher, Esgd, Sgd, Momentum, Nesterov, Adam };

std::string optimizer_kind_name(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& s);
/// Newton and Fisher: a learned Q per tensor.
bool is_psgd(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Newton;
  GroupKind group = GroupKind::upper_triangular();
  double lr = 0.5;            // mu
  double lr_precond = 0.2;    // mu0, in (0, 1)
  double damping = 0.0;       // lambda
  double update_probability = 1.0;
  std::optional<double> clip_threshold;
  double momentum = 0.0;      // beta; for psgd kinds, momentum on the preconditioned gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 1;         // B in the unbiased Fisher estimate
  bool unbiased_fisher = false;
  double ema_factor = 0.9;          // for s, the running mean of the gradient
  double second_moment_ema = 0.99;  // diagonal closed forms
  double q_init = 1.0;              // Q starts at q_init * I

  /// Throws ContractError naming the offending field.
  void validate() const;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct TraceRow {
  std::uint64_t iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::uint64_t precond_updates = 0;
  double wall_ms = 0.0;
};

struct OptimizerState {
  Tensors theta;
  std::vector<QFactor<double>> q;  // psgd kinds, one per tensor
  Tensors buffer;                  // momentum buffer, adam first moment
  Tensors second_moment;           // adam, diag Fisher EMA of g*g, ESGD EMA of Hv*Hv
  Tensors ema_vv;                  // ESGD EMA of v*v
  Tensors grad_mean;               // s, unbiased Fisher
  std::uint64_t iteration = 0;
  std::uint64_t precond_updates = 0;
  Rng rng;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// A step met a NaN or Inf; iteration is the 1-based step that failed.
class StepAborted : public std::runtime_error {
 public:
  StepAborted(std::uint64_t iteration, const std::string& what)
      : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  std::uint64_t iteration() const { return iteration_; }

 private:
  std::uint64_t iteration_;
};

OptimizerState make_state(const Problem& problem, const OptimizerConfig& config, std::uint64_t seed);

/// Throws ContractError unless `state` has the layout make_state would give
/// for this problem and config (e.g. a checkpoint from another run).
void check_compatible(const Problem& problem, const OptimizerConfig& config, const OptimizerState& state);

/// g * min(1, tau / ||g||_2), with the norm over all tensors jointly.
MatrixXd clip_preconditioned(const MatrixXd& g, double tau);
Tensors clip_preconditioned(const Tensors& g, double tau);

/// The loop shared by both PSGD kinds once g, u and v are known: step theta
/// with the current Q, then update each Q from (u, v) when coin < update_probability.
void psgd_update(OptimizerState& state, const OptimizerConfig& config, const Tensors& g,
                 const Tensors& u, const Tensors& v, double coin);

TraceRow newton_step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config);
TraceRow fisher_step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config);
TraceRow closed_form_diag_fisher_step(const Problem& problem, OptimizerState& state,
                                      const OptimizerConfig& config);
TraceRow esgd_diag_step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config);
TraceRow baseline_step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config);

/// Dispatch on config.kind.
TraceRow step(const Problem& problem, OptimizerState& state, const OptimizerConfig& config);

/// Current diagonal preconditioners of the closed forms.
Tensors diag_fisher_preconditioner(const OptimizerState& state, const OptimizerConfig& config);
Tensors esgd_preconditioner(const OptimizerState& state);

/// Q^T Q g for each tensor.
Tensors precondition(const OptimizerState& state, const Tensors& g);

}  // namespace psgd
