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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "psgd/harness.hpp"
#include "psgd/optimizers.hpp"
#include "psgd/problems.hpp"

namespace psgd {

/// A malformed configuration; key() names the offending key (may be empty).
class ConfigError : public ContractError {
 public:
  ConfigError(std::string key, const std::string& what)
      : ContractError(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Flat `key = value` document. '#' starts a comment; blank lines are ignored;
/// a repeated key is an error. Keys keep their file order.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues parse_key_values(const std::string& text);

struct RunConfig {
  ProblemSpec problem;
  OptimizerConfig optimizer;
  std::uint64_t n_iters = 1000;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  bool wall_clock = true;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_run_config(const KeyValues& kv);
/// Every key with its resolved value; parse_run_config(parse_key_values(echo)) == config.
std::string echo_run_config(const RunConfig& config);

struct GridConfig {
  RunConfig base;                       // problem.* / optimizer.* shared by all cells
  std::vector<std::string> problems;    // labels
  std::vector<std::string> optimizers;  // labels
  std::vector<std::uint64_t> seeds;
  double threshold = 1e-2;
  unsigned threads = 1;
  std::map<std::string, std::string> overrides;  // grid.problem.<label>.<field> / grid.optimizer.<label>.<field>
  bool batch_explicit = false;                   // problem.batch given in the base
  std::string source;                            // the parsed document, one `key = value` per line

  std::vector<GridCell> cells() const;
};

GridConfig parse_grid_config(const KeyValues& kv);
std::string echo_grid_config(const GridConfig& config);

/// Trace file name for one run.
std::string trace_file_name(const std::string& problem, const std::string& optimizer, std::uint64_t seed);

}  // namespace psgd
