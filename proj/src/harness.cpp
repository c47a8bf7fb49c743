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

#include "psgd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace psgd {

namespace {

double median(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  const double a = xs[n / 2 - 1], b = xs[n / 2];
  if (std::isinf(a) || std::isinf(b)) return std::max(a, b);
  return 0.5 * (a + b);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ContractError("malformed number '" + s + "'");
  return value;
}

}  // namespace

RunResult resume_experiment(const Problem& problem, const OptimizerConfig& config, OptimizerState state,
                            std::uint64_t n_iters, bool wall_clock) {
  check_compatible(problem, config, state);
  RunResult result;
  result.trace.reserve(n_iters);
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  for (std::uint64_t k = 0; k < n_iters; ++k) {
    try {
      TraceRow row = step(problem, state, config);
      if (wall_clock) row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      result.trace.push_back(row);
    } catch (const StepAborted& e) {
      result.abort_iteration = e.iteration();
      result.abort_message = e.what();
      break;
    } catch (const SingularError& e) {
      result.abort_iteration = state.iteration;
      result.abort_message = "iteration " + std::to_string(state.iteration) + ": " + e.what();
      break;
    }
  }
  result.final_objective = problem.objective(state.theta);
  result.state = std::move(state);
  return result;
}

RunResult run_experiment(const Problem& problem, const OptimizerConfig& config, std::uint64_t n_iters,
                         std::uint64_t seed, bool wall_clock) {
  return resume_experiment(problem, config, make_state(problem, config, seed), n_iters, wall_clock);
}

std::optional<std::uint64_t> iterations_to_threshold(const std::vector<TraceRow>& trace, double threshold) {
  for (const auto& r : trace)
    if (r.loss < threshold) return r.iteration;
  return std::nullopt;
}

CompareResult compare(const std::vector<GridCell>& cells, const std::vector<std::uint64_t>& seeds,
                      std::uint64_t n_iters, double threshold, unsigned threads, bool wall_clock) {
  if (cells.empty() || seeds.empty()) throw ContractError("compare: the grid is empty");
  for (const auto& c : cells) c.optimizer.validate();

  CompareResult out;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::uint64_t s : seeds) out.runs.push_back({c, s, {}, std::nullopt});

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < out.runs.size(); i = next++) {
      try {
        CompareRun& run = out.runs[i];
        const GridCell& cell = cells[run.cell];
        const auto problem = make_problem(cell.problem);
        run.result = run_experiment(*problem, cell.optimizer, n_iters, run.seed, wall_clock);
        run.iters_to_threshold = iterations_to_threshold(run.result.trace, threshold);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(out.runs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> losses, iters;
    for (const auto& run : out.runs) {
      if (run.cell != c) continue;
      losses.push_back(run.result.final_objective);
      iters.push_back(run.iters_to_threshold ? static_cast<double>(*run.iters_to_threshold)
                                             : std::numeric_limits<double>::infinity());
    }
    const double med_loss = median(losses);
    const double med_iters = median(iters);
    const GridCell& cell = cells[c];
    for (const auto& run : out.runs) {
      if (run.cell != c) continue;
      SummaryRow r;
      r.problem = cell.problem_label.empty() ? problem_kind_name(cell.problem.kind) : cell.problem_label;
      r.optimizer = cell.optimizer_label.empty() ? optimizer_kind_name(cell.optimizer.kind) : cell.optimizer_label;
      r.seed = run.seed;
      r.final_loss = run.result.final_objective;
      r.iters_to_threshold = run.iters_to_threshold;
      r.median_final_loss = med_loss;
      r.median_iters_to_threshold = med_iters;
      out.summary.push_back(r);
    }
  }
  return out;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "iteration,loss,grad_norm,precond_updates,wall_ms\n";
  for (const auto& r : trace) {
    out += std::to_string(r.iteration) + ',' + format_double(r.loss) + ',' + format_double(r.grad_norm) + ',' +
           std::to_string(r.precond_updates) + ',' + format_double(r.wall_ms) + '\n';
  }
  return out;
}

std::vector<TraceRow> parse_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "iteration,loss,grad_norm,precond_updates,wall_ms")
    throw ContractError("trace csv: missing or wrong header");
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw ContractError("trace csv: expected 5 fields in '" + line + "'");
    rows.push_back({parse_number<std::uint64_t>(f[0]), parse_number<double>(f[1]), parse_number<double>(f[2]),
                    parse_number<std::uint64_t>(f[3]), parse_number<double>(f[4])});
  }
  return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out =
      "problem,optimizer,seed,final_loss,iters_to_threshold,median_final_loss,median_iters_to_threshold\n";
  for (const auto& r : rows) {
    out += r.problem + ',' + r.optimizer + ',' + std::to_string(r.seed) + ',' + format_double(r.final_loss) + ',' +
           (r.iters_to_threshold ? std::to_string(*r.iters_to_threshold) : std::string()) + ',' +
           format_double(r.median_final_loss) + ',' + format_double(r.median_iters_to_threshold) + '\n';
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f << content;
    f.flush();
    if (!f) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace psgd
