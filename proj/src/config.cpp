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

#include "psgd/config.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

namespace psgd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      const std::string t = trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return x;
}

int to_int(const std::string& key, const std::string& v) {
  const std::uint64_t x = to_uint(key, v);
  if (x > 1u << 30) throw ConfigError(key, "value too large");
  return static_cast<int>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const ContractError& e) {
    throw ConfigError(key, e.what());
  }
}

// Returns false when `field` is not a problem field.
bool set_problem_field(ProblemSpec& p, const std::string& field, const std::string& key, const std::string& v) {
  if (field == "kind") p.kind = wrap(key, [&] { return parse_problem_kind(v); });
  else if (field == "dim") p.dim = to_int(key, v);
  else if (field == "cond") p.cond = to_double(key, v);
  else if (field == "indefinite") p.indefinite = to_bool(key, v);
  else if (field == "sigma") p.sigma = to_double(key, v);
  else if (field == "batch") p.batch = to_int(key, v);
  else if (field == "layers") {
    p.layers.clear();
    for (const auto& s : split_list(v)) p.layers.push_back(to_int(key, s));
  } else if (field == "n_samples") p.n_samples = to_int(key, v);
  else if (field == "vocab") p.vocab = to_int(key, v);
  else if (field == "hidden") p.hidden = to_int(key, v);
  else if (field == "seq_len") p.seq_len = to_int(key, v);
  else if (field == "seed") p.data_seed = to_uint(key, v);
  else return false;
  return true;
}

bool set_optimizer_field(OptimizerConfig& o, const std::string& field, const std::string& key, const std::string& v) {
  if (field == "kind") o.kind = wrap(key, [&] { return parse_optimizer_kind(v); });
  else if (field == "group") o.group = wrap(key, [&] { return GroupKind::parse(v); });
  else if (field == "lr") o.lr = to_double(key, v);
  else if (field == "lr_precond") o.lr_precond = to_double(key, v);
  else if (field == "damping") o.damping = to_double(key, v);
  else if (field == "update_probability") o.update_probability = to_double(key, v);
  else if (field == "clip_threshold") {
    if (v == "none") o.clip_threshold.reset();
    else o.clip_threshold = to_double(key, v);
  } else if (field == "momentum") o.momentum = to_double(key, v);
  else if (field == "beta1") o.beta1 = to_double(key, v);
  else if (field == "beta2") o.beta2 = to_double(key, v);
  else if (field == "epsilon") o.epsilon = to_double(key, v);
  else if (field == "batch_size") o.batch_size = to_int(key, v);
  else if (field == "unbiased_fisher") o.unbiased_fisher = to_bool(key, v);
  else if (field == "ema_factor") o.ema_factor = to_double(key, v);
  else if (field == "second_moment_ema") o.second_moment_ema = to_double(key, v);
  else if (field == "q_init") o.q_init = to_double(key, v);
  else return false;
  return true;
}

void validate_problem(const ProblemSpec& p) {
  auto fail = [](const std::string& key, const std::string& what) { throw ConfigError(key, what); };
  if (p.dim < 1) fail("problem.dim", "must be >= 1");
  if (!(p.cond >= 1.0)) fail("problem.cond", "must be >= 1");
  if (!(p.sigma >= 0.0)) fail("problem.sigma", "must be >= 0");
  if (p.batch < 1) fail("problem.batch", "must be >= 1");
  if (p.layers.size() < 2) fail("problem.layers", "needs at least two sizes");
  if (p.n_samples < 2) fail("problem.n_samples", "must be >= 2");
  if (p.vocab < 2) fail("problem.vocab", "must be >= 2");
  if (p.hidden < 2) fail("problem.hidden", "must be >= 2");
  if (p.seq_len < 1) fail("problem.seq_len", "must be >= 1");
}

void validate_optimizer(const OptimizerConfig& o, const std::string& prefix) {
  try {
    o.validate();
  } catch (const ContractError& e) {
    std::string msg = e.what();
    std::string key;
    if (msg.rfind("optimizer.", 0) == 0) {
      key = prefix + msg.substr(10, msg.find(' ') - 10);
      msg = msg.substr(msg.find(' ') + 1);
    }
    throw ConfigError(key, msg);
  }
}

const KeyValues::value_type* find(const KeyValues& kv, const std::string& key) {
  for (const auto& e : kv)
    if (e.first == key) return &e;
  return nullptr;
}

// Applies problem.*, optimizer.* and the top-level run keys. Keys accepted by
// `extra` are skipped; anything else unknown is an error.
template <typename Extra>
RunConfig parse_base(const KeyValues& kv, Extra&& extra) {
  RunConfig c;
  if (const auto* k = find(kv, "problem.kind")) set_problem_field(c.problem, "kind", k->first, k->second);
  c.problem.batch = default_batch_size(c.problem.kind);
  for (const auto& [key, value] : kv) {
    if (key.rfind("problem.", 0) == 0) {
      if (!set_problem_field(c.problem, key.substr(8), key, value)) throw ConfigError(key, "unknown key");
    } else if (key.rfind("optimizer.", 0) == 0) {
      if (!set_optimizer_field(c.optimizer, key.substr(10), key, value)) throw ConfigError(key, "unknown key");
    } else if (key == "n_iters") {
      c.n_iters = to_uint(key, value);
    } else if (key == "seed") {
      c.seed = to_uint(key, value);
    } else if (key == "out_dir") {
      if (value.empty()) throw ConfigError(key, "must not be empty");
      c.out_dir = value;
    } else if (key == "trace.wall_clock") {
      c.wall_clock = to_bool(key, value);
    } else if (!extra(key, value)) {
      throw ConfigError(key, "unknown key");
    }
  }
  validate_problem(c.problem);
  return c;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", "line " + std::to_string(number) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("", "line " + std::to_string(number) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError(key, "repeated key");
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

RunConfig parse_run_config(const KeyValues& kv) {
  RunConfig c = parse_base(kv, [](const std::string&, const std::string&) { return false; });
  validate_optimizer(c.optimizer, "optimizer.");
  return c;
}

std::string echo_run_config(const RunConfig& c) {
  std::ostringstream o;
  const auto& p = c.problem;
  const auto& q = c.optimizer;
  std::string layers;
  for (std::size_t i = 0; i < p.layers.size(); ++i) layers += (i ? "," : "") + std::to_string(p.layers[i]);
  o << "problem.kind = " << problem_kind_name(p.kind) << '\n'
    << "problem.dim = " << p.dim << '\n'
    << "problem.cond = " << format_double(p.cond) << '\n'
    << "problem.indefinite = " << from_bool(p.indefinite) << '\n'
    << "problem.sigma = " << format_double(p.sigma) << '\n'
    << "problem.batch = " << p.batch << '\n'
    << "problem.layers = " << layers << '\n'
    << "problem.n_samples = " << p.n_samples << '\n'
    << "problem.vocab = " << p.vocab << '\n'
    << "problem.hidden = " << p.hidden << '\n'
    << "problem.seq_len = " << p.seq_len << '\n'
    << "problem.seed = " << p.data_seed << '\n'
    << "optimizer.kind = " << optimizer_kind_name(q.kind) << '\n'
    << "optimizer.group = " << q.group.name() << '\n'
    << "optimizer.lr = " << format_double(q.lr) << '\n'
    << "optimizer.lr_precond = " << format_double(q.lr_precond) << '\n'
    << "optimizer.damping = " << format_double(q.damping) << '\n'
    << "optimizer.update_probability = " << format_double(q.update_probability) << '\n'
    << "optimizer.clip_threshold = " << (q.clip_threshold ? format_double(*q.clip_threshold) : "none") << '\n'
    << "optimizer.momentum = " << format_double(q.momentum) << '\n'
    << "optimizer.beta1 = " << format_double(q.beta1) << '\n'
    << "optimizer.beta2 = " << format_double(q.beta2) << '\n'
    << "optimizer.epsilon = " << format_double(q.epsilon) << '\n'
    << "optimizer.batch_size = " << q.batch_size << '\n'
    << "optimizer.unbiased_fisher = " << from_bool(q.unbiased_fisher) << '\n'
    << "optimizer.ema_factor = " << format_double(q.ema_factor) << '\n'
    << "optimizer.second_moment_ema = " << format_double(q.second_moment_ema) << '\n'
    << "optimizer.q_init = " << format_double(q.q_init) << '\n'
    << "n_iters = " << c.n_iters << '\n'
    << "seed = " << c.seed << '\n'
    << "out_dir = " << c.out_dir << '\n'
    << "trace.wall_clock = " << from_bool(c.wall_clock) << '\n';
  return o.str();
}

GridConfig parse_grid_config(const KeyValues& kv) {
  GridConfig g;
  bool has_problems = false, has_optimizers = false, has_seeds = false;
  g.base = parse_base(kv, [&](const std::string& key, const std::string& value) {
    if (key == "grid.problems") {
      g.problems = split_list(value);
      has_problems = true;
    } else if (key == "grid.optimizers") {
      g.optimizers = split_list(value);
      has_optimizers = true;
    } else if (key == "grid.seeds") {
      for (const auto& s : split_list(value)) g.seeds.push_back(to_uint(key, s));
      has_seeds = true;
    } else if (key == "grid.threshold") {
      g.threshold = to_double(key, value);
    } else if (key == "grid.threads") {
      g.threads = static_cast<unsigned>(std::max(1, to_int(key, value)));
    } else if (key.rfind("grid.problem.", 0) == 0 || key.rfind("grid.optimizer.", 0) == 0) {
      g.overrides[key] = value;
    } else {
      return false;
    }
    return true;
  });
  if (!has_problems || g.problems.empty()) throw ConfigError("grid.problems", "the grid has no problems");
  if (!has_optimizers || g.optimizers.empty()) throw ConfigError("grid.optimizers", "the grid has no optimizers");
  if (!has_seeds) g.seeds = {g.base.seed};
  for (const auto* labels : {&g.problems, &g.optimizers}) {
    const std::string key = labels == &g.problems ? "grid.problems" : "grid.optimizers";
    std::set<std::string> seen;
    for (const auto& l : *labels) {
      if (l.find('.') != std::string::npos || l.find('/') != std::string::npos)
        throw ConfigError(key, "label '" + l + "' may not contain '.' or '/'");
      if (!seen.insert(l).second) throw ConfigError(key, "repeated label '" + l + "'");
    }
  }
  g.batch_explicit = find(kv, "problem.batch") != nullptr;
  if (g.seeds.empty()) throw ConfigError("grid.seeds", "the grid has no seeds");
  for (const auto& [key, value] : g.overrides) {
    const bool is_problem = key.rfind("grid.problem.", 0) == 0;
    const std::string rest = key.substr(is_problem ? 13 : 15);
    const auto dot = rest.rfind('.');
    if (dot == std::string::npos || dot == 0) throw ConfigError(key, "expected <label>.<field>");
    const std::string label = rest.substr(0, dot);
    const auto& labels = is_problem ? g.problems : g.optimizers;
    if (std::find(labels.begin(), labels.end(), label) == labels.end())
      throw ConfigError(key, "label '" + label + "' is not in the grid");
    ProblemSpec p;
    OptimizerConfig o;
    const bool known = is_problem ? set_problem_field(p, rest.substr(dot + 1), key, value)
                                  : set_optimizer_field(o, rest.substr(dot + 1), key, value);
    if (!known) throw ConfigError(key, "unknown key");
  }
  for (const auto& cell : g.cells()) validate_optimizer(cell.optimizer, "grid.optimizer." + cell.optimizer_label + ".");
  std::ostringstream echo;
  for (const auto& [key, value] : kv) echo << key << " = " << value << '\n';
  g.source = echo.str();
  return g;
}

std::vector<GridCell> GridConfig::cells() const {
  auto overrides_for = [this](const std::string& prefix) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, value] : overrides)
      if (key.rfind(prefix, 0) == 0 && key.find('.', prefix.size()) == std::string::npos)
        out.emplace_back(key, value);
    return out;
  };
  std::vector<GridCell> cells;
  for (const auto& pl : problems) {
    ProblemSpec spec = base.problem;
    const auto p_over = overrides_for("grid.problem." + pl + ".");
    bool kind_set = false, batch_set = batch_explicit;
    for (const auto& [key, value] : p_over) {
      const std::string field = key.substr(key.rfind('.') + 1);
      if (field == "kind") {
        set_problem_field(spec, field, key, value);
        kind_set = true;
      }
      batch_set = batch_set || field == "batch";
    }
    if (!kind_set) {
      try {
        spec.kind = parse_problem_kind(pl);
      } catch (const ContractError&) {
        throw ConfigError("grid.problems", "'" + pl + "' is not a problem kind; set grid.problem." + pl + ".kind");
      }
    }
    if (!batch_set) spec.batch = default_batch_size(spec.kind);
    for (const auto& [key, value] : p_over) set_problem_field(spec, key.substr(key.rfind('.') + 1), key, value);
    validate_problem(spec);

    for (const auto& ol : optimizers) {
      OptimizerConfig opt = base.optimizer;
      const auto o_over = overrides_for("grid.optimizer." + ol + ".");
      const bool okind_set = std::any_of(o_over.begin(), o_over.end(),
                                         [](const auto& e) { return e.first.ends_with(".kind"); });
      if (!okind_set) {
        try {
          opt.kind = parse_optimizer_kind(ol);
        } catch (const ContractError&) {
          throw ConfigError("grid.optimizers",
                            "'" + ol + "' is not an optimizer kind; set grid.optimizer." + ol + ".kind");
        }
      }
      for (const auto& [key, value] : o_over) set_optimizer_field(opt, key.substr(key.rfind('.') + 1), key, value);
      cells.push_back({spec, opt, pl, ol});
    }
  }
  return cells;
}

std::string echo_grid_config(const GridConfig& config) { return config.source; }

std::string trace_file_name(const std::string& problem, const std::string& optimizer, std::uint64_t seed) {
  return problem + "_" + optimizer + "_" + std::to_string(seed) + ".csv";
}

}  // namespace psgd
