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

// psgd: run, compare and selftest front end.
// Exit codes: 0 ok, 1 selftest failure, 2 config error, 3 runtime abort.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "psgd/checkpoint.hpp"
#include "psgd/config.hpp"
#include "psgd/harness.hpp"
#include "psgd/selftest.hpp"

namespace fs = std::filesystem;
using namespace psgd;

namespace {

constexpr int kOk = 0;
constexpr int kSelftestFailed = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeAbort = 3;

struct Common {
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

KeyValues read_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("", e.what());
  }
  return parse_key_values(text);
}

// Command-line overrides are applied to the key-value document so the echo
// shows the configuration that actually ran.
void override_key(KeyValues& kv, const std::string& key, const std::string& value) {
  for (auto& e : kv)
    if (e.first == key) {
      e.second = value;
      return;
    }
  kv.emplace_back(key, value);
}

int cmd_run(const Common& c, const std::optional<std::string>& resume) {
  KeyValues kv = read_config(c.config_path);
  if (c.out_dir) override_key(kv, "out_dir", *c.out_dir);
  if (c.seed) override_key(kv, "seed", std::to_string(*c.seed));
  const RunConfig config = parse_run_config(kv);

  const auto problem = make_problem(config.problem);
  OptimizerState state;
  std::uint64_t steps = config.n_iters;
  if (resume) {
    try {
      state = load_checkpoint(read_file(*resume));
      check_compatible(*problem, config.optimizer, state);
    } catch (const std::exception& e) {
      throw ConfigError("", std::string("cannot resume: ") + e.what());
    }
    steps = config.n_iters > state.iteration ? config.n_iters - state.iteration : 0;
  } else {
    state = make_state(*problem, config.optimizer, config.seed);
  }

  const RunResult result = resume_experiment(*problem, config.optimizer, std::move(state), steps, config.wall_clock);

  const fs::path dir = config.out_dir;
  fs::create_directories(dir);
  const std::string trace_name =
      trace_file_name(problem_kind_name(config.problem.kind), optimizer_kind_name(config.optimizer.kind), config.seed);
  write_file_atomic(dir / trace_name, trace_csv(result.trace));
  write_file_atomic(dir / "config.resolved", echo_run_config(config));
  if (result.aborted()) {
    std::cerr << "psgd run: aborted at " << result.abort_message << '\n';
    return kRuntimeAbort;
  }
  write_file_atomic(dir / "checkpoint.txt", save_checkpoint(result.state));
  if (!c.quiet) {
    std::cout << "iterations " << result.state.iteration << ", final objective "
              << format_double(result.final_objective) << ", trace " << (dir / trace_name).string() << '\n';
  }
  return kOk;
}

int cmd_compare(const Common& c) {
  KeyValues kv = read_config(c.config_path);
  if (c.out_dir) override_key(kv, "out_dir", *c.out_dir);
  if (c.seed) override_key(kv, "grid.seeds", std::to_string(*c.seed));
  const GridConfig grid = parse_grid_config(kv);
  const auto cells = grid.cells();

  const CompareResult result =
      compare(cells, grid.seeds, grid.base.n_iters, grid.threshold, grid.threads, grid.base.wall_clock);

  const fs::path dir = grid.base.out_dir;
  fs::create_directories(dir);
  int aborted = 0;
  for (const auto& run : result.runs) {
    const auto& cell = cells[run.cell];
    write_file_atomic(dir / trace_file_name(cell.problem_label, cell.optimizer_label, run.seed),
                      trace_csv(run.result.trace));
    if (run.result.aborted()) {
      ++aborted;
      std::cerr << "psgd compare: " << cell.problem_label << '/' << cell.optimizer_label << " seed " << run.seed
                << " aborted at " << run.result.abort_message << '\n';
    }
  }
  write_file_atomic(dir / "summary.csv", summary_csv(result.summary));
  write_file_atomic(dir / "config.resolved", echo_grid_config(grid));
  if (!c.quiet) std::cout << summary_csv(result.summary);
  return aborted > 0 ? kRuntimeAbort : kOk;
}

int cmd_selftest(bool quiet, const std::string& mutate) {
  SelftestOptions options;
  if (mutate == "relgrad-sign") options.flip_relative_gradient_sign = true;
  else if (!mutate.empty()) throw ConfigError("--mutate", "unknown mutation '" + mutate + "'");
  const auto results = run_selftest(options);
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed;
    if (!r.passed) std::cerr << "FAIL " << r.name << ": " << r.detail << '\n';
    else if (!quiet) std::cout << "PASS " << r.name << ": " << r.detail << '\n';
  }
  return all ? kOk : kSelftestFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preconditioned SGD with preconditioners learned on matrix Lie groups"};
  app.require_subcommand(1);

  Common common;
  std::optional<std::string> resume;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("config", common.config_path, "Flat key = value config file")->required();
    sub->add_option("--out-dir", common.out_dir, "Override out_dir");
    sub->add_option("--seed", common.seed, "Override the seed");
    sub->add_flag("--quiet", common.quiet, "Only print errors");
  };
  CLI::App* run = app.add_subcommand("run", "Run one experiment");
  add_common(run, true);
  run->add_option("--resume", resume, "Continue from a checkpoint file up to n_iters iterations");
  CLI::App* cmp = app.add_subcommand("compare", "Run a problems x optimizers x seeds grid");
  add_common(cmp, true);
  CLI::App* self = app.add_subcommand("selftest", "Run the fast oracle suite");
  bool quiet = false;
  std::string mutate;
  self->add_flag("--quiet", quiet, "Only print failures");
  self->add_option("--mutate", mutate)->group("");  // hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(common, resume);
    if (*cmp) return cmd_compare(common);
    return cmd_selftest(quiet, mutate);
  } catch (const ConfigError& e) {
    std::cerr << "psgd: config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ContractError& e) {
    std::cerr << "psgd: invalid configuration: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "psgd: " << e.what() << '\n';
    return kRuntimeAbort;
  }
}
