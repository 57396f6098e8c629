#pragma once

#include "chanrec/core.hpp"
#include "chanrec/lp.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace chanrec::alloc {

// Instance of the diversity-constrained channel allocation program.
//
// Decision variables are a binary M×N assignment X (item j shown in channel
// i) plus one continuous slack per category. The objective is the summed
// predicted CTR of assigned items minus `diversity_penalty` times the total
// category-threshold slack, maximized subject to:
//   1. each item in at most one channel
//   2. channel i receives exactly capacities[i] + overflow items
//   3. page-wide count of category c at most thresholds[c] + slack_c
//   4. per-channel count of category c at most per_channel_bound
//   5. X binary, slacks nonnegative
struct AllocationConfig {
  int num_channels = 0;                // M
  int num_candidates = 0;              // N
  std::vector<int> capacities;         // V_i, size M
  int overflow = 1;                    // h, extra items per channel for re-ranking
  int per_channel_bound = 2;           // B
  double diversity_penalty = 2.0;      // U
  std::vector<int> category_of;        // size N, values in [0, num_categories)
  std::vector<int> category_thresholds;  // T_c per category

  int num_categories() const { return static_cast<int>(category_thresholds.size()); }
  int total_slots() const;  // sum of capacities[i] + overflow
  void validate() const;    // throws ConfigError on malformed configs
};

enum class AllocStatus { Optimal, Infeasible, RelaxationOnly };

const char* alloc_status_name(AllocStatus status);

struct Allocation {
  AllocStatus status = AllocStatus::Infeasible;
  Eigen::MatrixXi assignment;     // M×N in {0,1}
  std::vector<double> slacks;     // per category
  double objective = 0.0;
  std::string infeasible_family;  // which constraint family made it infeasible
};

// Canonical LP/MILP form of the program: variables X_ij at i*N+j, slacks
// after them; rows emitted family by family (1,2,3,4).
lp::LinearProgram build_allocation_problem(const Matrix& scores, const AllocationConfig& config);

// Relaxation only (integrality dropped). The relaxation objective is an
// upper bound on every integral solution.
lp::LpSolution solve_lp_relaxation(const lp::LinearProgram& problem,
                                   const lp::SimplexOptions& options = {});

struct SolveOptions {
  // Among equal-objective optima, refine to the lexicographically smallest
  // assignment in row-major order. Costs extra solves; ties cannot occur
  // with generic continuous scores, so bulk pipelines may turn this off.
  bool lexicographic_tiebreak = true;
  // Stop after the relaxation; no rounding rule is applied. The assignment
  // is populated only when the relaxation happens to be integral.
  bool relaxation_only = false;
  lp::MilpOptions milp;
};

Allocation solve_allocation(const Matrix& scores, const AllocationConfig& config,
                            const SolveOptions& options = {});

// Exhaustive oracle over all (M+1)^N assignment maps; throws InstanceTooLarge
// beyond 1e7 maps. Slacks are the canonical max(0, count - threshold).
Allocation brute_force_allocation(const Matrix& scores, const AllocationConfig& config);

struct FamilyResult {
  std::string family;
  bool pass = true;
  std::string first_violation;
};

struct ConstraintReport {
  std::vector<FamilyResult> families;
  double recomputed_objective = 0.0;
  bool objective_consistent = true;

  bool all_pass() const {
    if (!objective_consistent) return false;
    for (const auto& f : families)
      if (!f.pass) return false;
    return true;
  }
};

// Re-checks every constraint family against the reported assignment and
// slacks, and recomputes the objective.
ConstraintReport verify_allocation(const Allocation& alloc, const Matrix& scores,
                                   const AllocationConfig& config);

// File interfaces: score matrices as plain CSV (M rows × N columns), configs
// as JSON documents, allocations as JSON.
Matrix read_score_matrix_csv(const std::filesystem::path& path);
void write_score_matrix_csv(const Matrix& scores, const std::filesystem::path& path);
// {"capacities":[...],"overflow_h":1,"per_channel_bound":2,
//  "diversity_penalty":2.0,"category_of":["phone",...],"thresholds":{"phone":2,...}}
AllocationConfig allocation_config_from_json_file(const std::filesystem::path& path,
                                                  std::vector<std::string>* category_names,
                                                  int num_candidates);
// {"assignment":[[channel,index],...],"slacks":{...},"objective":x,"status":"optimal"}
std::string allocation_to_json(const Allocation& alloc,
                               const std::vector<std::string>& category_names);

}  // namespace chanrec::alloc
