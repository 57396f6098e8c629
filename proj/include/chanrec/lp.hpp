#pragma once

#include "chanrec/core.hpp"

#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace chanrec::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Relation { LessEqual, Equal, GreaterEqual };

struct Row {
  std::vector<std::pair<int, double>> coeffs;  // (variable, coefficient), sparse
  Relation relation = Relation::LessEqual;
  double rhs = 0.0;
};

// Canonical form: maximize objective . x subject to the rows and bounds.
// Integrality flags are honored by solve_milp; solve_lp ignores them.
struct LinearProgram {
  int num_vars = 0;
  Vector objective;
  std::vector<Row> rows;
  Vector lower;
  Vector upper;
  std::vector<bool> integral;

  void check() const;  // throws DimensionError on inconsistent sizes
};

enum class SolveStatus { Optimal, Infeasible, Unbounded, IterationLimit };

const char* status_name(SolveStatus status);

struct LpSolution {
  SolveStatus status = SolveStatus::IterationLimit;
  double objective = 0.0;
  Vector x;
  int iterations = 0;
};

struct SimplexOptions {
  double pivot_tol = 1e-9;
  double feas_tol = 1e-9;
  int max_iterations = 50000;
};

// Bounded-variable two-phase primal simplex, dense linear algebra. Scale
// target is hundreds of rows, so the basis is refactorized every iteration
// in favor of numerical robustness over speed.
LpSolution solve_lp(const LinearProgram& lp, const SimplexOptions& options = {});

// Per-variable bound overrides applied on top of the program's own bounds
// (used by branch-and-bound fixes and by callers needing side constraints).
struct BoundOverride {
  int var = -1;
  double lower = -kInf;
  double upper = kInf;
};

LpSolution solve_lp(const LinearProgram& lp, const std::vector<BoundOverride>& overrides,
                    const SimplexOptions& options);

struct MilpOptions {
  SimplexOptions simplex;
  double int_tol = 1e-6;     // how close to an integer counts as integral
  double prune_tol = 1e-10;  // node bound must beat incumbent by more than this
  long max_nodes = 1000000;
  // Nodes whose relaxation bound does not exceed this are pruned immediately;
  // lets callers ask "is there a solution better than X" cheaply.
  double initial_incumbent = -kInf;
};

struct MilpSolution {
  SolveStatus status = SolveStatus::IterationLimit;
  double objective = 0.0;
  Vector x;  // integral variables exactly integer-valued
  long nodes = 0;
};

// Exact branch and bound on the LP relaxation: most-fractional branching,
// best-bound node selection, deterministic tie-breaks throughout.
MilpSolution solve_milp(const LinearProgram& lp, const MilpOptions& options = {});
MilpSolution solve_milp(const LinearProgram& lp, const std::vector<BoundOverride>& overrides,
                        const MilpOptions& options = {});

}  // namespace chanrec::lp
