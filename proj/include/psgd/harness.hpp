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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "psgd/optimizers.hpp"
#include "psgd/problems.hpp"

namespace psgd {

struct RunResult {
  std::vector<TraceRow> trace;
  OptimizerState state;
  double final_objective = 0.0;
  std::optional<std::uint64_t> abort_iteration;
  std::string abort_message;

  bool aborted() const { return abort_iteration.has_value(); }
};

/// Runs n_iters steps from a fresh state. A StepAborted or SingularError ends
/// the run early and is recorded rather than thrown. wall_ms is 0 unless
/// wall_clock is set.
RunResult run_experiment(const Problem& problem, const OptimizerConfig& config, std::uint64_t n_iters,
                         std::uint64_t seed, bool wall_clock = false);

/// Same, continuing from an existing state (e.g. a checkpoint).
RunResult resume_experiment(const Problem& problem, const OptimizerConfig& config, OptimizerState state,
                            std::uint64_t n_iters, bool wall_clock = false);

/// First iteration whose loss is below threshold.
std::optional<std::uint64_t> iterations_to_threshold(const std::vector<TraceRow>& trace, double threshold);

struct GridCell {
  ProblemSpec problem;
  OptimizerConfig optimizer;
  std::string problem_label;    // defaults to the kind name
  std::string optimizer_label;  // defaults to the kind name
};

struct CompareRun {
  std::size_t cell = 0;
  std::uint64_t seed = 0;
  RunResult result;
  std::optional<std::uint64_t> iters_to_threshold;
};

struct SummaryRow {
  std::string problem;
  std::string optimizer;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  std::optional<std::uint64_t> iters_to_threshold;
  double median_final_loss = 0.0;
  double median_iters_to_threshold = 0.0;  // +inf when the median run never reached it
};

struct CompareResult {
  std::vector<CompareRun> runs;  // cell-major, then seed order
  std::vector<SummaryRow> summary;
};

/// Every cell under every seed; runs execute on up to `threads` workers and
/// the result does not depend on the thread count.
CompareResult compare(const std::vector<GridCell>& cells, const std::vector<std::uint64_t>& seeds,
                      std::uint64_t n_iters, double threshold, unsigned threads = 1, bool wall_clock = false);

/// Shortest round-trip decimal form.
std::string format_double(double x);

std::string trace_csv(const std::vector<TraceRow>& trace);
std::vector<TraceRow> parse_trace_csv(const std::string& text);
std::string summary_csv(const std::vector<SummaryRow>& rows);

/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace psgd
