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

#include "psgd/checkpoint.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "psgd/config.hpp"
#include "psgd/harness.hpp"

namespace psgd {

namespace {

constexpr const char* kFormat = "psgd-checkpoint 1";

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

template <typename T>
T number(const std::string& key, const std::string& s) {
  T x{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ContractError("checkpoint: " + key + ": malformed number '" + s + "'");
  return x;
}

class Reader {
 public:
  explicit Reader(const std::string& text) {
    for (auto& [k, v] : parse_key_values(text)) map_.emplace(std::move(k), std::move(v));
  }
  const std::string& get(const std::string& key) const {
    const auto it = map_.find(key);
    if (it == map_.end()) throw ContractError("checkpoint: missing key " + key);
    return it->second;
  }
  bool has(const std::string& key) const { return map_.count(key) != 0; }

 private:
  std::map<std::string, std::string> map_;
};

std::string matrix_line(const MatrixXd& m) {
  std::string s = std::to_string(m.rows()) + " " + std::to_string(m.cols());
  for (Eigen::Index k = 0; k < m.size(); ++k) s += " " + format_double(m.data()[k]);
  return s;
}

MatrixXd read_matrix(const std::string& key, const std::string& line) {
  const auto w = words(line);
  if (w.size() < 2) throw ContractError("checkpoint: " + key + ": expected rows and cols");
  const auto r = number<Eigen::Index>(key, w[0]), c = number<Eigen::Index>(key, w[1]);
  if (r < 0 || c < 0 || static_cast<std::size_t>(r * c) + 2 != w.size())
    throw ContractError("checkpoint: " + key + ": entry count does not match shape");
  MatrixXd m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = number<double>(key, w[static_cast<std::size_t>(k) + 2]);
  return m;
}

void write_tensors(std::ostringstream& o, const std::string& name, const Tensors& t) {
  o << name << " = " << t.size() << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) o << name << '.' << i << " = " << matrix_line(t[i]) << '\n';
}

Tensors read_tensors(const Reader& r, const std::string& name) {
  const auto n = number<std::size_t>(name, r.get(name));
  Tensors t;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string key = name + "." + std::to_string(i);
    t.push_back(read_matrix(key, r.get(key)));
  }
  return t;
}

void write_q(std::ostringstream& o, const std::string& prefix, const QFactor<double>& q) {
  o << prefix << " = " << q.kind().name() << ' ' << q.rows() << ' ' << q.cols() << ' ' << q.update_count() << '\n';
  for (std::size_t f = 0; f < q.factors().size(); ++f) {
    const auto& factor = q.factors()[f];
    o << prefix << '.' << f << " =";
    for (double e : factor.entries()) o << ' ' << format_double(e);
    o << '\n';
  }
}

QFactor<double> read_q(const Reader& r, const std::string& prefix) {
  const auto head = words(r.get(prefix));
  if (head.size() != 4) throw ContractError("checkpoint: " + prefix + ": expected kind rows cols updates");
  const GroupKind kind = GroupKind::parse(head[0]);
  const auto rows = number<Eigen::Index>(prefix, head[1]);
  const auto cols = number<Eigen::Index>(prefix, head[2]);
  const auto updates = number<std::uint64_t>(prefix, head[3]);
  std::vector<FactorKind> kinds;
  std::vector<Eigen::Index> dims;
  if (kind.is_kronecker()) {
    kinds = {kind.left, kind.right};
    dims = {rows, cols};
  } else {
    kinds = {kind.single_kind()};
    dims = {rows * cols};
  }
  std::vector<Factor<double>> factors;
  for (std::size_t f = 0; f < kinds.size(); ++f) {
    const std::string key = prefix + "." + std::to_string(f);
    std::vector<double> e;
    for (const auto& w : words(r.get(key))) e.push_back(number<double>(key, w));
    factors.push_back(Factor<double>::from_entries(kinds[f], dims[f], e));
  }
  return QFactor<double>::from_factors(kind, rows, cols, std::move(factors), updates);
}

}  // namespace

std::string save_checkpoint(const OptimizerState& s) {
  std::ostringstream o;
  o << "format = " << kFormat << '\n'
    << "iteration = " << s.iteration << '\n'
    << "precond_updates = " << s.precond_updates << '\n'
    << "rng = " << s.rng.state() << '\n';
  write_tensors(o, "theta", s.theta);
  write_tensors(o, "buffer", s.buffer);
  write_tensors(o, "second_moment", s.second_moment);
  write_tensors(o, "ema_vv", s.ema_vv);
  write_tensors(o, "grad_mean", s.grad_mean);
  o << "q = " << s.q.size() << '\n';
  for (std::size_t i = 0; i < s.q.size(); ++i) write_q(o, "q." + std::to_string(i), s.q[i]);
  return o.str();
}

OptimizerState load_checkpoint(const std::string& text) {
  const Reader r(text);
  if (r.get("format") != kFormat) throw ContractError("checkpoint: unsupported format '" + r.get("format") + "'");
  OptimizerState s;
  s.iteration = number<std::uint64_t>("iteration", r.get("iteration"));
  s.precond_updates = number<std::uint64_t>("precond_updates", r.get("precond_updates"));
  s.rng.set_state(r.get("rng"));
  s.theta = read_tensors(r, "theta");
  s.buffer = read_tensors(r, "buffer");
  s.second_moment = read_tensors(r, "second_moment");
  s.ema_vv = read_tensors(r, "ema_vv");
  s.grad_mean = read_tensors(r, "grad_mean");
  const auto nq = number<std::size_t>("q", r.get("q"));
  for (std::size_t i = 0; i < nq; ++i) s.q.push_back(read_q(r, "q." + std::to_string(i)));
  return s;
}

std::string save_qfactor(const QFactor<double>& q) {
  std::ostringstream o;
  write_q(o, "q", q);
  return o.str();
}

QFactor<double> load_qfactor(const std::string& text) { return read_q(Reader(text), "q"); }

}  // namespace psgd
