#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chanrec/lp.hpp"
#include "chanrec/rng.hpp"

using namespace chanrec;
using namespace chanrec::lp;

namespace {

LinearProgram make_program(int n) {
  LinearProgram p;
  p.num_vars = n;
  p.objective = Vector::Zero(n);
  p.lower = Vector::Zero(n);
  p.upper = Vector::Constant(n, kInf);
  p.integral.assign(static_cast<std::size_t>(n), false);
  return p;
}

}  // namespace

TEST_CASE("single bounded variable maximized at its upper bound") {
  LinearProgram p = make_program(1);
  p.objective[0] = 0.7;
  p.upper[0] = 1.0;
  const LpSolution sol = solve_lp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(sol.x[0] == doctest::Approx(1.0));
}

TEST_CASE("shared capacity splits between two variables") {
  // max x0 + 2 x1  s.t. x0 + x1 <= 1, 0 <= x <= 1
  LinearProgram p = make_program(2);
  p.objective << 1.0, 2.0;
  p.upper << 1.0, 1.0;
  p.rows.push_back({{{0, 1.0}, {1, 1.0}}, Relation::LessEqual, 1.0});
  const LpSolution sol = solve_lp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(2.0));
  CHECK(sol.x[0] == doctest::Approx(0.0));
  CHECK(sol.x[1] == doctest::Approx(1.0));
}

TEST_CASE("equality row forces phase-1 artificials") {
  // max x0 - x1  s.t. x0 + x1 = 2, x in [0,3]^2 -> x0=2, x1=0
  LinearProgram p = make_program(2);
  p.objective << 1.0, -1.0;
  p.upper << 3.0, 3.0;
  p.rows.push_back({{{0, 1.0}, {1, 1.0}}, Relation::Equal, 2.0});
  const LpSolution sol = solve_lp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(2.0));
  CHECK(sol.x[0] == doctest::Approx(2.0));
  CHECK(sol.x[1] == doctest::Approx(0.0));
}

TEST_CASE("greater-equal row is honored") {
  // max -x0 - x1  s.t. x0 + x1 >= 1, x in [0,2]^2 -> objective -1
  LinearProgram p = make_program(2);
  p.objective << -1.0, -1.0;
  p.upper << 2.0, 2.0;
  p.rows.push_back({{{0, 1.0}, {1, 1.0}}, Relation::GreaterEqual, 1.0});
  const LpSolution sol = solve_lp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(-1.0));
}

TEST_CASE("contradictory rows are reported infeasible") {
  LinearProgram p = make_program(1);
  p.upper[0] = 1.0;
  p.rows.push_back({{{0, 1.0}}, Relation::GreaterEqual, 2.0});
  CHECK(solve_lp(p).status == SolveStatus::Infeasible);
}

TEST_CASE("unbounded direction is detected") {
  LinearProgram p = make_program(2);
  p.objective << 1.0, 0.0;
  p.rows.push_back({{{1, 1.0}}, Relation::LessEqual, 1.0});
  CHECK(solve_lp(p).status == SolveStatus::Unbounded);
}

TEST_CASE("degenerate equalities still solve") {
  // x0 + x1 = 1 twice plus redundant <= rows
  LinearProgram p = make_program(2);
  p.objective << 1.0, 1.0;
  p.upper << 1.0, 1.0;
  p.rows.push_back({{{0, 1.0}, {1, 1.0}}, Relation::Equal, 1.0});
  p.rows.push_back({{{0, 1.0}, {1, 1.0}}, Relation::LessEqual, 1.0});
  p.rows.push_back({{{0, 1.0}}, Relation::LessEqual, 1.0});
  const LpSolution sol = solve_lp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(1.0));
}

TEST_CASE("bound overrides narrow the feasible box") {
  LinearProgram p = make_program(2);
  p.objective << 1.0, 1.0;
  p.upper << 1.0, 1.0;
  p.rows.push_back({{{0, 1.0}, {1, 1.0}}, Relation::LessEqual, 2.0});
  const LpSolution sol = solve_lp(p, {{0, -kInf, 0.0}}, SimplexOptions{});
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(1.0));
  CHECK(sol.x[0] == doctest::Approx(0.0));
}

TEST_CASE("milp rounds a fractional knapsack") {
  // max 3 x0 + 2 x1 + 2 x2  s.t. 2 x0 + x1 + x2 <= 2, x binary
  // LP relaxation is fractional; integer optimum picks x1 = x2 = 1.
  LinearProgram p = make_program(3);
  p.objective << 3.0, 2.0, 2.0;
  p.upper << 1.0, 1.0, 1.0;
  p.integral = {true, true, true};
  p.rows.push_back({{{0, 2.0}, {1, 1.0}, {2, 1.0}}, Relation::LessEqual, 2.0});
  const MilpSolution sol = solve_milp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(4.0));
  CHECK(sol.x[0] == doctest::Approx(0.0));
  CHECK(sol.x[1] == doctest::Approx(1.0));
  CHECK(sol.x[2] == doctest::Approx(1.0));
}

TEST_CASE("milp initial incumbent prunes everything when nothing beats it") {
  LinearProgram p = make_program(1);
  p.objective[0] = 1.0;
  p.upper[0] = 1.0;
  p.integral = {true};
  MilpOptions options;
  options.initial_incumbent = 1.5;
  CHECK(solve_milp(p, options).status == SolveStatus::Infeasible);
}

TEST_CASE("random milp instances match exhaustive enumeration") {
  Rng rng(20240811);
  for (int trial = 0; trial < 120; ++trial) {
    Rng r = rng.child("instance", static_cast<std::uint64_t>(trial));
    const int n = static_cast<int>(r.uniform_int(2, 6));
    const int m = static_cast<int>(r.uniform_int(1, 4));
    LinearProgram p = make_program(n);
    p.upper = Vector::Constant(n, 1.0);
    p.integral.assign(static_cast<std::size_t>(n), true);
    for (int j = 0; j < n; ++j) p.objective[j] = r.uniform(-1.0, 1.0);
    for (int k = 0; k < m; ++k) {
      Row row;
      for (int j = 0; j < n; ++j)
        if (r.bernoulli(0.7)) row.coeffs.emplace_back(j, static_cast<double>(r.uniform_int(1, 3)));
      if (row.coeffs.empty()) row.coeffs.emplace_back(0, 1.0);
      row.relation = r.bernoulli(0.8) ? Relation::LessEqual : Relation::Equal;
      row.rhs = static_cast<double>(r.uniform_int(0, 4));
      p.rows.push_back(std::move(row));
    }

    // exhaustive over 2^n binary points
    double best = -kInf;
    for (int mask = 0; mask < (1 << n); ++mask) {
      bool ok = true;
      for (const Row& row : p.rows) {
        double lhs = 0;
        for (const auto& [var, coeff] : row.coeffs)
          if (mask & (1 << var)) lhs += coeff;
        if (row.relation == Relation::LessEqual ? lhs > row.rhs + 1e-12
                                                : std::abs(lhs - row.rhs) > 1e-12)
          ok = false;
      }
      if (!ok) continue;
      double obj = 0;
      for (int j = 0; j < n; ++j)
        if (mask & (1 << j)) obj += p.objective[j];
      best = std::max(best, obj);
    }

    const MilpSolution sol = solve_milp(p);
    if (best == -kInf) {
      CHECK(sol.status == SolveStatus::Infeasible);
    } else {
      REQUIRE(sol.status == SolveStatus::Optimal);
      CHECK(sol.objective == doctest::Approx(best).epsilon(1e-9));
    }
  }
}

TEST_CASE("relaxation bounds the integer optimum") {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    Rng r = rng.child("bound", static_cast<std::uint64_t>(trial));
    const int n = static_cast<int>(r.uniform_int(2, 5));
    LinearProgram p = make_program(n);
    p.upper = Vector::Constant(n, 1.0);
    p.integral.assign(static_cast<std::size_t>(n), true);
    for (int j = 0; j < n; ++j) p.objective[j] = r.uniform(0.0, 1.0);
    Row row;
    for (int j = 0; j < n; ++j) row.coeffs.emplace_back(j, 1.0 + r.uniform());
    row.relation = Relation::LessEqual;
    row.rhs = r.uniform(1.0, 3.0);
    p.rows.push_back(row);

    const LpSolution relax = solve_lp(p);
    const MilpSolution exact = solve_milp(p);
    if (exact.status == SolveStatus::Optimal) {
      REQUIRE(relax.status == SolveStatus::Optimal);
      CHECK(relax.objective >= exact.objective - 1e-9);
    }
  }
}
