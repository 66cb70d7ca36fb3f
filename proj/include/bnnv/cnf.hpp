#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bnnv/errors.hpp"

namespace bnnv {

using Clause = std::vector<int>;

// Literals in DIMACS convention. kTrue/kFalse are constants that builders may
// pass around; they are simplified away before a clause is stored.
inline constexpr int kTrue = std::numeric_limits<int>::max();
inline constexpr int kFalse = -kTrue;

struct CnfFormula {
  int num_vars = 0;
  std::vector<Clause> clauses;

  int new_var() { return ++num_vars; }

  // Adds a clause, dropping false constants and skipping satisfied clauses.
  void add(Clause c) {
    Clause out;
    out.reserve(c.size());
    for (int l : c) {
      if (l == kTrue) return;
      if (l == kFalse) continue;
      if (l == 0 || std::abs(l) > num_vars)
        throw Error(fmt::format("literal {} outside 1..{}", l, num_vars));
      out.push_back(l);
    }
    clauses.push_back(std::move(out));
  }
  void add(std::initializer_list<int> c) { add(Clause(c)); }

  bool operator==(const CnfFormula&) const = default;
};

// ---------------------------------------------------------------------------
// Gates over literals with constant folding.

inline int make_or(CnfFormula& f, int a, int b) {
  if (a == kTrue || b == kTrue || a == -b) return kTrue;
  if (a == kFalse) return b;
  if (b == kFalse || a == b) return a;
  const int z = f.new_var();
  f.add({-z, a, b});
  f.add({z, -a});
  f.add({z, -b});
  return z;
}

inline int make_and(CnfFormula& f, int a, int b) { return -make_or(f, -a, -b); }

inline int make_or(CnfFormula& f, const std::vector<int>& lits) {
  int acc = kFalse;
  for (int l : lits) acc = make_or(f, acc, l);
  return acc;
}

inline int make_and(CnfFormula& f, const std::vector<int>& lits) {
  int acc = kTrue;
  for (int l : lits) acc = make_and(f, acc, l);
  return acc;
}

// ---------------------------------------------------------------------------
// Cardinality constraints.

// Sequential counter for "at most k of lits": registers s[i][j] (i = 1..n,
// j = 1..k) mean "at least j of the first i literals are true". Adds n*k
// auxiliary variables when 1 <= k < n.
inline void encode_at_most(CnfFormula& f, const std::vector<int>& lits, std::size_t k) {
  const std::size_t n = lits.size();
  if (k >= n) return;
  if (k == 0) {
    for (int l : lits) f.add({-l});
    return;
  }
  std::vector<std::vector<int>> s(n, std::vector<int>(k));
  for (auto& row : s)
    for (auto& v : row) v = f.new_var();
  f.add({-lits[0], s[0][0]});
  for (std::size_t j = 1; j < k; ++j) f.add({-s[0][j]});
  for (std::size_t i = 1; i < n; ++i) {
    f.add({-lits[i], s[i][0]});
    f.add({-s[i - 1][0], s[i][0]});
    for (std::size_t j = 1; j < k; ++j) {
      f.add({-lits[i], -s[i - 1][j - 1], s[i][j]});
      f.add({-s[i - 1][j], s[i][j]});
    }
    f.add({-lits[i], -s[i - 1][k - 1]});
  }
}

inline void encode_at_least(CnfFormula& f, const std::vector<int>& lits, std::size_t k) {
  const std::size_t n = lits.size();
  if (k == 0) return;
  if (k > n) {
    f.add(Clause{});
    return;
  }
  if (k == 1) {
    f.add(Clause(lits));
    return;
  }
  std::vector<int> neg(lits.size());
  std::transform(lits.begin(), lits.end(), neg.begin(), [](int l) { return -l; });
  encode_at_most(f, neg, n - k);
}

// Returns a literal equivalent to "at least k of lits are true". Built from a
// reified counter r[i][j] <-> r[i-1][j] or (lits[i] and r[i-1][j-1]).
inline int reify_at_least(CnfFormula& f, const std::vector<int>& lits, std::int64_t k) {
  const auto n = std::int64_t(lits.size());
  if (k <= 0) return kTrue;
  if (k > n) return kFalse;
  std::vector<int> r(std::size_t(k) + 1, kFalse);
  r[0] = kTrue;
  for (std::int64_t i = 0; i < n; ++i) {
    // Only counts reachable by the remaining literals matter.
    const std::int64_t jmin = std::max<std::int64_t>(1, k - (n - i - 1) - 1);
    for (std::int64_t j = std::min(k, i + 1); j >= jmin; --j)
      r[j] = make_or(f, r[j], make_and(f, lits[i], r[j - 1]));
  }
  return r[std::size_t(k)];
}

// ---------------------------------------------------------------------------
// A small DPLL solver: unit propagation plus chronological backtracking. Meant
// for test-sized formulas.

class Dpll {
public:
  explicit Dpll(const CnfFormula& f) : f_(f), value_(std::size_t(f.num_vars) + 1, 0) {
    occurs_.resize(std::size_t(f.num_vars) + 1);
    for (std::size_t c = 0; c < f.clauses.size(); ++c)
      for (int l : f.clauses[c]) occurs_[std::size_t(std::abs(l))].push_back(c);
  }

  // Satisfying assignment indexed 1..num_vars (true/false), or nullopt.
  std::optional<std::vector<bool>> solve(const std::vector<int>& assumptions = {}) {
    std::fill(value_.begin(), value_.end(), 0);
    trail_.clear();
    for (const auto& c : f_.clauses)
      if (c.empty()) return std::nullopt;
    for (int l : assumptions) {
      if (value(l) < 0) return std::nullopt;
      if (value(l) == 0) assign(l);
    }
    if (!propagate(0)) return std::nullopt;
    if (!search()) return std::nullopt;
    std::vector<bool> model(value_.size(), false);
    for (std::size_t v = 1; v < value_.size(); ++v) model[v] = value_[v] > 0;
    return model;
  }

private:
  int value(int lit) const {
    const int v = value_[std::size_t(std::abs(lit))];
    return lit > 0 ? v : -v;
  }
  void assign(int lit) {
    value_[std::size_t(std::abs(lit))] = lit > 0 ? 1 : -1;
    trail_.push_back(lit);
  }
  void undo_to(std::size_t size) {
    while (trail_.size() > size) {
      value_[std::size_t(std::abs(trail_.back()))] = 0;
      trail_.pop_back();
    }
  }

  // Propagates units implied by assignments from trail_[from] on.
  bool propagate(std::size_t from) {
    std::size_t head = from;
    // A full scan catches units present before any assignment.
    if (from == 0)
      for (std::size_t c = 0; c < f_.clauses.size(); ++c)
        if (!check_clause(c)) return false;
    while (head < trail_.size()) {
      const int lit = trail_[head++];
      for (std::size_t c : occurs_[std::size_t(std::abs(lit))])
        if (!check_clause(c)) return false;
    }
    return true;
  }

  // False on conflict; assigns the last literal of a unit clause.
  bool check_clause(std::size_t c) {
    int unassigned = 0, last = 0;
    for (int l : f_.clauses[c]) {
      const int v = value(l);
      if (v > 0) return true;
      if (v == 0) {
        ++unassigned;
        last = l;
      }
    }
    if (unassigned == 0) return false;
    if (unassigned == 1) assign(last);
    return true;
  }

  bool search() {
    std::size_t var = 0;
    for (std::size_t v = 1; v < value_.size(); ++v)
      if (value_[v] == 0) {
        var = v;
        break;
      }
    if (var == 0) return true;
    for (int lit : {int(var), -int(var)}) {
      const std::size_t mark = trail_.size();
      assign(lit);
      if (propagate(mark) && search()) return true;
      undo_to(mark);
    }
    return false;
  }

  const CnfFormula& f_;
  std::vector<int> value_;
  std::vector<int> trail_;
  std::vector<std::vector<std::size_t>> occurs_;
};

inline std::optional<std::vector<bool>> solve(const CnfFormula& f, const std::vector<int>& assumptions = {}) {
  return Dpll(f).solve(assumptions);
}

inline bool satisfies(const CnfFormula& f, const std::vector<bool>& model) {
  for (const auto& c : f.clauses) {
    bool sat = false;
    for (int l : c)
      if (model[std::size_t(std::abs(l))] == (l > 0)) {
        sat = true;
        break;
      }
    if (!sat) return false;
  }
  return true;
}

// Number of total assignments satisfying f, by exhaustive enumeration.
inline std::uint64_t count_models(const CnfFormula& f) {
  if (f.num_vars > 30) throw Error("count_models: too many variables for enumeration");
  std::vector<bool> model(std::size_t(f.num_vars) + 1);
  std::uint64_t count = 0;
  for (std::uint64_t m = 0; m < (std::uint64_t{1} << f.num_vars); ++m) {
    for (int v = 1; v <= f.num_vars; ++v) model[std::size_t(v)] = (m >> (v - 1)) & 1;
    count += satisfies(f, model);
  }
  return count;
}

// ---------------------------------------------------------------------------
// DIMACS text.

inline std::string render_dimacs(const CnfFormula& f, const std::vector<std::string>& comments = {}) {
  std::string out;
  for (const auto& c : comments) out += "c " + c + "\n";
  out += fmt::format("p cnf {} {}\n", f.num_vars, f.clauses.size());
  for (const auto& c : f.clauses) {
    for (int l : c) out += fmt::format("{} ", l);
    out += "0\n";
  }
  return out;
}

inline CnfFormula parse_dimacs(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> declared;
  CnfFormula f;
  Clause cur;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok == "c" || tok[0] == 'c' || tok[0] == '%') continue;
    if (tok == "p") {
      std::string fmt_name;
      long long v = -1, c = -1;
      if (declared || !(ls >> fmt_name >> v >> c) || fmt_name != "cnf" || v < 0 || c < 0 ||
          v > std::numeric_limits<int>::max())
        throw FormatError("bad DIMACS header", lineno, "line");
      f.num_vars = int(v);
      declared = std::size_t(c);
      continue;
    }
    if (!declared) throw FormatError("clause before 'p cnf' header", lineno, "line");
    do {
      long long lit = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), lit);
      if (ec != std::errc{} || p != tok.data() + tok.size() || std::llabs(lit) > f.num_vars)
        throw FormatError(fmt::format("bad literal '{}'", tok), lineno, "line");
      if (lit == 0) {
        f.clauses.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(int(lit));
      }
    } while (ls >> tok);
  }
  if (!declared) throw FormatError("missing 'p cnf' header");
  if (!cur.empty()) throw FormatError("last clause is not 0-terminated");
  if (f.clauses.size() != *declared)
    throw FormatError(fmt::format("header declares {} clauses, found {}", *declared, f.clauses.size()));
  return f;
}

}  // namespace bnnv
