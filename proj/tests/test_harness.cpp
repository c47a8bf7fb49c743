#include "doctest.h"

#include <filesystem>

#include "psgd/checkpoint.hpp"
#include "psgd/config.hpp"
#include "psgd/harness.hpp"

using namespace psgd;
namespace fs = std::filesystem;

namespace {

OptimizerConfig rosenbrock_newton() {
  OptimizerConfig c;
  c.kind = OptimizerKind::Newton;
  c.q_init = 0.1;
  c.lr_precond = 0.2;
  c.lr = 0.5;
  return c;
}

std::string names(const std::vector<SummaryRow>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.problem + "/" + r.optimizer + "/" + std::to_string(r.seed) + " ";
  return s;
}

}  // namespace

TEST_CASE("run_experiment: empty run, determinism, trace invariants") {
  auto p = make_rosenbrock();
  const auto c = rosenbrock_newton();
  CHECK(run_experiment(*p, c, 0, 0).trace.empty());
  const RunResult a = run_experiment(*p, c, 200, 3);
  const RunResult b = run_experiment(*p, c, 200, 3);
  CHECK(trace_csv(a.trace) == trace_csv(b.trace));
  for (std::size_t k = 1; k < a.trace.size(); ++k) CHECK(a.trace[k].iteration == a.trace[k - 1].iteration + 1);
  CHECK(a.trace.back().precond_updates == 200);
  CHECK(a.trace.front().loss == 4.0);
}

TEST_CASE("trace csv: header, round trip") {
  auto p = make_rosenbrock();
  RunResult r = run_experiment(*p, rosenbrock_newton(), 50, 0, true);
  const std::string csv = trace_csv(r.trace);
  CHECK(csv.rfind("iteration,loss,grad_norm,precond_updates,wall_ms\n", 0) == 0);
  const auto back = parse_trace_csv(csv);
  REQUIRE(back.size() == r.trace.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    CHECK(back[k].loss == r.trace[k].loss);
    CHECK(back[k].grad_norm == r.trace[k].grad_norm);
    CHECK(back[k].wall_ms == r.trace[k].wall_ms);
  }
  CHECK(r.trace.back().wall_ms >= r.trace.front().wall_ms);
  CHECK_THROWS_AS(parse_trace_csv("iter,loss\n"), ContractError);
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("compare: counting, medians, identical cells") {
  ProblemSpec ros;
  GridCell newton{ros, rosenbrock_newton(), "", ""};
  OptimizerConfig gd;
  gd.kind = OptimizerKind::Sgd;
  gd.lr = 0.002;
  GridCell sgd{ros, gd, "", "gd"};

  const CompareResult one = compare({newton}, {0}, 300, 1e-2);
  CHECK(one.summary.size() == 1);
  CHECK(one.summary[0].optimizer == "newton");

  const CompareResult six = compare({newton, sgd}, {0, 1, 2}, 300, 1e-2);
  CHECK(six.runs.size() == 6);
  CHECK(names(six.summary) ==
        "rosenbrock/newton/0 rosenbrock/newton/1 rosenbrock/newton/2 rosenbrock/gd/0 rosenbrock/gd/1 rosenbrock/gd/2 ");
  for (const auto& r : six.summary) {
    if (r.optimizer == "gd") {
      CHECK_FALSE(r.iters_to_threshold.has_value());
      CHECK(std::isinf(r.median_iters_to_threshold));
    } else {
      CHECK(r.iters_to_threshold.has_value());
    }
  }

  GridCell twin = newton;
  twin.optimizer_label = "twin";
  const CompareResult pair = compare({newton, twin}, {5}, 100, 1e-2);
  CHECK(pair.summary[0].final_loss == pair.summary[1].final_loss);
  CHECK(pair.summary[0].iters_to_threshold == pair.summary[1].iters_to_threshold);

  const CompareResult threaded = compare({newton, sgd}, {0, 1, 2}, 300, 1e-2, 4);
  CHECK(summary_csv(threaded.summary) == summary_csv(six.summary));
  CHECK_THROWS_AS(compare({}, {0}, 10, 1e-2), ContractError);
}

TEST_CASE("atomic writes leave no temporary file") {
  const fs::path dir = fs::temp_directory_path() / "psgd_test_atomic";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file_atomic(dir / "a.txt", "hello\n");
  write_file_atomic(dir / "a.txt", "again\n");
  CHECK(read_file(dir / "a.txt") == "again\n");
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
  fs::remove_all(dir);
}

TEST_CASE("key-value parsing") {
  const auto kv = parse_key_values("# comment\n a = 1 \n\nb=two # trailing\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"a", "1"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"b", "two"});
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("just text\n"), ConfigError);
}

TEST_CASE("run config: defaults, unknown keys, echo round trip") {
  const RunConfig d = parse_run_config({});
  CHECK(d.problem.kind == ProblemSpec::Kind::Rosenbrock);
  CHECK(d.optimizer.kind == OptimizerKind::Newton);

  try {
    parse_run_config(parse_key_values("optimizr.kind = newton\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "optimizr.kind");
  }
  try {
    parse_run_config(parse_key_values("optimizer.lr_precond = 1.5\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "optimizer.lr_precond");
  }
  CHECK_THROWS_AS(parse_run_config(parse_key_values("problem.dim = ten\n")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(parse_key_values("optimizer.group = circle\n")), ConfigError);

  const RunConfig mlp = parse_run_config(parse_key_values("problem.kind = mlp\n"));
  CHECK(mlp.problem.batch == 32);

  const RunConfig c = parse_run_config(parse_key_values(
      "problem.kind = lstm\nproblem.layers = 2,3,2\noptimizer.kind = fisher\noptimizer.group = kron:diagonal:diaglast\n"
      "optimizer.clip_threshold = 0.25\noptimizer.lr = 0.1\noptimizer.damping = 0.3\nseed = 17\n"
      "trace.wall_clock = false\nout_dir = somewhere/else\n"));
  const std::string echo = echo_run_config(c);
  CHECK(parse_run_config(parse_key_values(echo)) == c);
  CHECK(echo_run_config(parse_run_config(parse_key_values(echo))) == echo);
  CHECK(c.problem.batch == 8);
  CHECK(c.optimizer.group == GroupKind::kronecker(FactorKind::Diagonal, FactorKind::DiagLastColumn));
}

TEST_CASE("grid config") {
  const GridConfig g = parse_grid_config(parse_key_values(
      "problem.kind = rosenbrock\noptimizer.q_init = 0.1\nn_iters = 50\n"
      "grid.problems = rosenbrock, quad\ngrid.optimizers = newton, gd\ngrid.seeds = 1, 2, 3\n"
      "grid.problem.quad.kind = quadratic\ngrid.problem.quad.dim = 4\n"
      "grid.optimizer.gd.kind = sgd\ngrid.optimizer.gd.lr = 0.002\n"));
  CHECK(g.seeds == std::vector<std::uint64_t>{1, 2, 3});
  const auto cells = g.cells();
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].problem.kind == ProblemSpec::Kind::Rosenbrock);
  CHECK(cells[1].optimizer.kind == OptimizerKind::Sgd);
  CHECK(cells[1].optimizer.lr == 0.002);
  CHECK(cells[1].optimizer.q_init == 0.1);
  CHECK(cells[2].problem.kind == ProblemSpec::Kind::NoisyQuadratic);
  CHECK(cells[2].problem.dim == 4);
  CHECK(cells[2].problem_label == "quad");
  CHECK(parse_grid_config(parse_key_values(echo_grid_config(g))).cells().size() == 4);

  CHECK_THROWS_AS(parse_grid_config(parse_key_values("grid.problems =\ngrid.optimizers = sgd\n")), ConfigError);
  CHECK_THROWS_AS(parse_grid_config(parse_key_values("grid.problems = rosenbrock\n")), ConfigError);
  CHECK_THROWS_AS(
      parse_grid_config(parse_key_values("grid.problems = rosenbrock\ngrid.optimizers = gd\n")), ConfigError);
  CHECK_THROWS_AS(parse_grid_config(parse_key_values(
                      "grid.problems = rosenbrock\ngrid.optimizers = sgd\ngrid.optimizer.other.lr = 1\n")),
                  ConfigError);
  CHECK(trace_file_name("mlp", "newton", 3) == "mlp_newton_3.csv");
}

TEST_CASE("checkpoint: exact round trip and resume") {
  auto p = make_mlp_classifier({2, 4, 2}, 30, 2, 9);
  for (auto kind : {OptimizerKind::Newton, OptimizerKind::Fisher, OptimizerKind::Adam, OptimizerKind::Esgd,
                    OptimizerKind::DiagFisher, OptimizerKind::Momentum}) {
    OptimizerConfig c;
    c.kind = kind;
    c.group = GroupKind::scaling_whitening();
    c.lr = 0.05;
    c.unbiased_fisher = kind == OptimizerKind::Fisher;
    c.momentum = 0.5;
    const RunResult full = run_experiment(*p, c, 40, 4);
    const RunResult half = run_experiment(*p, c, 20, 4);
    const std::string text = save_checkpoint(half.state);
    const OptimizerState loaded = load_checkpoint(text);
    CHECK(loaded == half.state);
    CHECK(save_checkpoint(loaded) == text);
    const RunResult rest = resume_experiment(*p, c, loaded, 20);
    CHECK(rest.state == full.state);
    CHECK(rest.trace.front().iteration == 21);
    CHECK(rest.trace.back().loss == full.trace.back().loss);
  }

  auto q = QFactor<double>::init(GroupKind::kronecker(), 3, 2, 0.7);
  CHECK(load_qfactor(save_qfactor(q)) == q);

  CHECK_THROWS_AS(load_checkpoint("format = something else\n"), ContractError);
  OptimizerConfig sgd;
  sgd.kind = OptimizerKind::Sgd;
  OptimizerConfig newton;
  const OptimizerState s = make_state(*p, sgd, 0);
  CHECK_THROWS_AS(resume_experiment(*p, newton, s, 1), ContractError);
}
