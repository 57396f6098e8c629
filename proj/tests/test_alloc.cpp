#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "chanrec/alloc.hpp"
#include "chanrec/rng.hpp"

using namespace chanrec;
using namespace chanrec::alloc;

namespace {

AllocationConfig tiny_config() {
  AllocationConfig c;
  c.num_channels = 1;
  c.num_candidates = 1;
  c.capacities = {1};
  c.overflow = 0;
  c.per_channel_bound = 1;
  c.diversity_penalty = 2.0;
  c.category_of = {0};
  c.category_thresholds = {1};
  return c;
}

// Two channels, four candidates, one category per pair of items.
AllocationConfig quad_config() {
  AllocationConfig c;
  c.num_channels = 2;
  c.num_candidates = 4;
  c.capacities = {1, 1};
  c.overflow = 0;
  c.per_channel_bound = 1;
  c.diversity_penalty = 2.0;
  c.category_of = {0, 0, 1, 1};
  c.category_thresholds = {1, 1};
  return c;
}

Matrix quad_scores() {
  Matrix r(2, 4);
  r << 0.9, 0.1, 0.5, 0.2,
       0.8, 0.2, 0.4, 0.3;
  return r;
}

AllocationConfig random_instance(Rng& r, Matrix& scores) {
  AllocationConfig c;
  c.num_channels = static_cast<int>(r.uniform_int(1, 3));
  c.overflow = static_cast<int>(r.uniform_int(0, 1));
  c.capacities.clear();
  for (int i = 0; i < c.num_channels; ++i)
    c.capacities.push_back(static_cast<int>(r.uniform_int(1, 2)));
  int slots = 0;
  for (const int v : c.capacities) slots += v + c.overflow;
  c.num_candidates = static_cast<int>(r.uniform_int(std::min(slots, 8), 8));
  const int cats = static_cast<int>(r.uniform_int(1, 3));
  c.category_of.clear();
  for (int j = 0; j < c.num_candidates; ++j)
    c.category_of.push_back(static_cast<int>(r.uniform_int(0, cats - 1)));
  c.category_thresholds.clear();
  for (int s = 0; s < cats; ++s)
    c.category_thresholds.push_back(static_cast<int>(r.uniform_int(1, 3)));
  c.per_channel_bound = static_cast<int>(r.uniform_int(1, 3));
  const double u_choices[] = {0.0, 1.0, 2.0, 4.0};
  c.diversity_penalty = u_choices[r.uniform_int(0, 3)];
  scores = Matrix(c.num_channels, c.num_candidates);
  for (int i = 0; i < c.num_channels; ++i)
    for (int j = 0; j < c.num_candidates; ++j) scores(i, j) = r.uniform();
  return c;
}

}  // namespace

TEST_CASE("problem shape matches the constraint families") {
  const AllocationConfig tiny = tiny_config();
  const lp::LinearProgram p1 = build_allocation_problem(Matrix::Constant(1, 1, 0.7), tiny);
  CHECK(p1.num_vars == 2);               // one assignment var + one slack
  CHECK(p1.rows.size() == 4);            // 1 + 1 + 1 + 1

  const lp::LinearProgram p2 = build_allocation_problem(quad_scores(), quad_config());
  CHECK(p2.num_vars == 10);              // 8 + 2
  CHECK(p2.rows.size() == 12);           // 4 + 2 + 2 + 4

  // The penalty weight lands as -U on every slack column of the objective.
  CHECK(p2.objective[8] == doctest::Approx(-2.0));
  CHECK(p2.objective[9] == doctest::Approx(-2.0));
}

TEST_CASE("single feasible point solves exactly") {
  const AllocationConfig c = tiny_config();
  const Matrix r = Matrix::Constant(1, 1, 0.7);
  const lp::LpSolution relax = solve_lp_relaxation(build_allocation_problem(r, c));
  REQUIRE(relax.status == lp::SolveStatus::Optimal);
  CHECK(relax.objective == doctest::Approx(0.7));
  CHECK(relax.x[0] == doctest::Approx(1.0));

  const Allocation alloc = solve_allocation(r, c);
  REQUIRE(alloc.status == AllocStatus::Optimal);
  CHECK(alloc.objective == doctest::Approx(0.7));
  CHECK(alloc.assignment(0, 0) == 1);

  const Allocation oracle = brute_force_allocation(r, c);
  REQUIRE(oracle.status == AllocStatus::Optimal);
  CHECK(oracle.objective == doctest::Approx(0.7));
}

TEST_CASE("demand exceeding supply is infeasible with the fill family named") {
  AllocationConfig c = tiny_config();
  c.capacities = {2};
  const Matrix r = Matrix::Constant(1, 1, 0.7);
  const Allocation alloc = solve_allocation(r, c);
  CHECK(alloc.status == AllocStatus::Infeasible);
  CHECK(alloc.infeasible_family == "channel-fill");
  CHECK(brute_force_allocation(r, c).status == AllocStatus::Infeasible);
}

TEST_CASE("per-channel bound can make an instance infeasible") {
  // 3 slots in one channel, B=1, but only 2 categories available.
  AllocationConfig c;
  c.num_channels = 1;
  c.num_candidates = 4;
  c.capacities = {3};
  c.overflow = 0;
  c.per_channel_bound = 1;
  c.diversity_penalty = 1.0;
  c.category_of = {0, 0, 1, 1};
  c.category_thresholds = {2, 2};
  const Matrix r = Matrix::Constant(1, 4, 0.5);
  const Allocation alloc = solve_allocation(r, c);
  CHECK(alloc.status == AllocStatus::Infeasible);
  CHECK(alloc.infeasible_family == "per-channel-category-bound");
  CHECK(brute_force_allocation(r, c).status == AllocStatus::Infeasible);
}

TEST_CASE("quad instance matches the exhaustive oracle") {
  const Allocation fast = solve_allocation(quad_scores(), quad_config());
  const Allocation slow = brute_force_allocation(quad_scores(), quad_config());
  REQUIRE(fast.status == AllocStatus::Optimal);
  REQUIRE(slow.status == AllocStatus::Optimal);
  CHECK(fast.objective == doctest::Approx(slow.objective).epsilon(1e-9));

  const lp::LpSolution relax =
      solve_lp_relaxation(build_allocation_problem(quad_scores(), quad_config()));
  CHECK(relax.objective >= fast.objective - 1e-9);
}

TEST_CASE("flat scores reach the symmetric optimum") {
  AllocationConfig c = quad_config();
  c.per_channel_bound = 2;
  c.category_thresholds = {2, 2};
  const Matrix r = Matrix::Constant(2, 4, 0.25);
  const Allocation alloc = solve_allocation(r, c);
  REQUIRE(alloc.status == AllocStatus::Optimal);
  CHECK(alloc.objective == doctest::Approx(2 * 0.25));
}

TEST_CASE("zero thresholds trade items against slack penalty") {
  AllocationConfig c = quad_config();
  c.category_thresholds = {0, 0};
  const Allocation fast = solve_allocation(quad_scores(), c);
  const Allocation slow = brute_force_allocation(quad_scores(), c);
  REQUIRE(fast.status == AllocStatus::Optimal);
  CHECK(fast.objective == doctest::Approx(slow.objective).epsilon(1e-9));
  // both assigned items overflow their zero thresholds
  double slack_total = 0;
  for (const double s : fast.slacks) slack_total += s;
  CHECK(slack_total == doctest::Approx(2.0));
}

TEST_CASE("verify_allocation flags doctored solutions") {
  const Allocation good = solve_allocation(quad_scores(), quad_config());
  CHECK(verify_allocation(good, quad_scores(), quad_config()).all_pass());

  Allocation twice = good;
  twice.assignment.setZero();
  twice.assignment(0, 0) = 1;
  twice.assignment(1, 0) = 1;  // same item in both channels
  const ConstraintReport r1 = verify_allocation(twice, quad_scores(), quad_config());
  CHECK_FALSE(r1.families[0].pass);

  Allocation lying = good;
  for (auto& s : lying.slacks) s = 0.0;
  AllocationConfig strict = quad_config();
  strict.category_thresholds = {0, 0};
  const ConstraintReport r2 = verify_allocation(lying, quad_scores(), strict);
  CHECK_FALSE(r2.families[2].pass);
}

TEST_CASE("random instances: solver equals oracle and respects the relaxation bound") {
  Rng rng(991);
  int solved = 0;
  for (int trial = 0; trial < 120; ++trial) {
    Rng r = rng.child("inst", static_cast<std::uint64_t>(trial));
    Matrix scores;
    const AllocationConfig c = random_instance(r, scores);
    const Allocation fast = solve_allocation(scores, c);
    const Allocation slow = brute_force_allocation(scores, c);
    REQUIRE((fast.status == AllocStatus::Optimal) == (slow.status == AllocStatus::Optimal));
    if (fast.status != AllocStatus::Optimal) continue;
    ++solved;
    CHECK(fast.objective == doctest::Approx(slow.objective).epsilon(1e-9));
    CHECK(verify_allocation(fast, scores, c).all_pass());
    const lp::LpSolution relax = solve_lp_relaxation(build_allocation_problem(scores, c));
    CHECK(relax.objective >= fast.objective - 1e-9);
  }
  CHECK(solved > 60);  // most random instances should be feasible
}

TEST_CASE("tied instances break ties to the lexicographically smallest assignment") {
  Rng rng(5150);
  for (int trial = 0; trial < 40; ++trial) {
    Rng r = rng.child("tie", static_cast<std::uint64_t>(trial));
    Matrix scores;
    AllocationConfig c = random_instance(r, scores);
    // quantize scores so distinct assignments collide in objective value
    for (int i = 0; i < scores.rows(); ++i)
      for (int j = 0; j < scores.cols(); ++j)
        scores(i, j) = 0.1 * static_cast<double>(r.uniform_int(1, 3));
    c.diversity_penalty = static_cast<double>(r.uniform_int(0, 2));
    const Allocation fast = solve_allocation(scores, c);
    const Allocation slow = brute_force_allocation(scores, c);
    REQUIRE((fast.status == AllocStatus::Optimal) == (slow.status == AllocStatus::Optimal));
    if (fast.status != AllocStatus::Optimal) continue;
    CHECK(fast.objective == doctest::Approx(slow.objective).epsilon(1e-9));
    CHECK((fast.assignment - slow.assignment).cwiseAbs().maxCoeff() == 0);
  }
}

TEST_CASE("total slack is non-increasing in the penalty weight") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    Rng r = rng.child("mono", static_cast<std::uint64_t>(trial));
    Matrix scores;
    AllocationConfig c = random_instance(r, scores);
    double previous = -1.0;
    bool first = true;
    for (const double u : {0.0, 0.5, 1.0, 2.0, 4.0}) {
      c.diversity_penalty = u;
      const Allocation alloc = solve_allocation(scores, c);
      if (alloc.status != AllocStatus::Optimal) break;
      double total = 0;
      for (const double s : alloc.slacks) total += s;
      if (!first) CHECK(total <= previous + 1e-9);
      previous = total;
      first = false;
    }
  }
}

TEST_CASE("relaxation-only mode stops at the bound") {
  const SolveOptions options{.lexicographic_tiebreak = false, .relaxation_only = true, .milp = {}};
  const Allocation relax = solve_allocation(quad_scores(), quad_config(), options);
  CHECK(relax.status == AllocStatus::RelaxationOnly);
  const Allocation exact = solve_allocation(quad_scores(), quad_config());
  CHECK(relax.objective >= exact.objective - 1e-9);
}
