#include "chanrec/alloc.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace chanrec::alloc {

namespace {

constexpr const char* kFamilyItemOnce = "item-single-channel";
constexpr const char* kFamilyChannelFill = "channel-fill";
constexpr const char* kFamilyThreshold = "category-threshold";
constexpr const char* kFamilyChannelBound = "per-channel-category-bound";
constexpr const char* kFamilyDomains = "variable-domains";

std::vector<int> category_counts(const AllocationConfig& config) {
  std::vector<int> counts(static_cast<std::size_t>(config.num_categories()), 0);
  for (const int c : config.category_of) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

// Cheap structural feasibility diagnosis so infeasibility can be reported
// by constraint family. The LP itself is the ground truth.
std::string diagnose_infeasibility(const AllocationConfig& config) {
  if (config.total_slots() > config.num_candidates) return kFamilyChannelFill;
  const std::vector<int> counts = category_counts(config);
  long per_channel_max = 0;
  for (const int cnt : counts) per_channel_max += std::min(cnt, config.per_channel_bound);
  for (int i = 0; i < config.num_channels; ++i)
    if (config.capacities[static_cast<std::size_t>(i)] + config.overflow > per_channel_max)
      return kFamilyChannelBound;
  long page_max = 0;
  for (const int cnt : counts)
    page_max += std::min<long>(cnt, static_cast<long>(config.per_channel_bound) *
                                        config.num_channels);
  if (config.total_slots() > page_max) return kFamilyChannelBound;
  return kFamilyChannelBound;  // residual joint case; family 3 has slack, 1+2 covered above
}

void check_scores(const Matrix& scores, const AllocationConfig& config) {
  if (scores.rows() != config.num_channels || scores.cols() != config.num_candidates)
    throw DimensionError("score matrix does not match config dimensions");
  if (!scores.allFinite()) throw DataError("score matrix has non-finite entries");
}

// Canonical slacks and objective for a fixed binary assignment.
void finish_allocation(Allocation& alloc, const Matrix& scores, const AllocationConfig& config) {
  const int cats = config.num_categories();
  std::vector<int> page_count(static_cast<std::size_t>(cats), 0);
  double score_sum = 0.0;
  for (int i = 0; i < config.num_channels; ++i)
    for (int j = 0; j < config.num_candidates; ++j)
      if (alloc.assignment(i, j) != 0) {
        score_sum += scores(i, j);
        ++page_count[static_cast<std::size_t>(config.category_of[static_cast<std::size_t>(j)])];
      }
  alloc.slacks.assign(static_cast<std::size_t>(cats), 0.0);
  double slack_sum = 0.0;
  for (int c = 0; c < cats; ++c) {
    const double s = std::max(
        0, page_count[static_cast<std::size_t>(c)] -
               config.category_thresholds[static_cast<std::size_t>(c)]);
    alloc.slacks[static_cast<std::size_t>(c)] = s;
    slack_sum += s;
  }
  alloc.objective = score_sum - config.diversity_penalty * slack_sum;
}

Eigen::MatrixXi assignment_from_lp(const Vector& x, const AllocationConfig& config) {
  Eigen::MatrixXi out(config.num_channels, config.num_candidates);
  for (int i = 0; i < config.num_channels; ++i)
    for (int j = 0; j < config.num_candidates; ++j)
      out(i, j) = static_cast<int>(std::lround(x[i * config.num_candidates + j]));
  return out;
}

}  // namespace

int AllocationConfig::total_slots() const {
  int total = 0;
  for (const int v : capacities) total += v + overflow;
  return total;
}

void AllocationConfig::validate() const {
  if (num_channels < 1) throw ConfigError("allocation: need at least one channel");
  if (num_candidates < 1) throw ConfigError("allocation: need at least one candidate");
  if (static_cast<int>(capacities.size()) != num_channels)
    throw ConfigError("allocation: capacities size != num_channels");
  for (const int v : capacities)
    if (v < 1) throw ConfigError("allocation: channel capacity must be >= 1");
  if (overflow < 0) throw ConfigError("allocation: overflow must be >= 0");
  if (per_channel_bound < 1) throw ConfigError("allocation: per-channel bound must be >= 1");
  if (diversity_penalty < 0) throw ConfigError("allocation: diversity penalty must be >= 0");
  if (static_cast<int>(category_of.size()) != num_candidates)
    throw ConfigError("allocation: category_of size != num_candidates");
  for (const int c : category_of)
    if (c < 0 || c >= num_categories())
      throw ConfigError("allocation: item category out of range");
  for (const int t : category_thresholds)
    if (t < 0) throw ConfigError("allocation: thresholds must be >= 0");
}

const char* alloc_status_name(AllocStatus status) {
  switch (status) {
    case AllocStatus::Optimal: return "optimal";
    case AllocStatus::Infeasible: return "infeasible";
    case AllocStatus::RelaxationOnly: return "relaxation_only";
  }
  return "unknown";
}

lp::LinearProgram build_allocation_problem(const Matrix& scores,
                                           const AllocationConfig& config) {
  config.validate();
  check_scores(scores, config);
  const int M = config.num_channels;
  const int N = config.num_candidates;
  const int S = config.num_categories();

  lp::LinearProgram problem;
  problem.num_vars = M * N + S;
  problem.objective = Vector::Zero(problem.num_vars);
  problem.lower = Vector::Zero(problem.num_vars);
  problem.upper = Vector::Zero(problem.num_vars);
  problem.integral.assign(static_cast<std::size_t>(problem.num_vars), false);

  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      const int var = i * N + j;
      problem.objective[var] = scores(i, j);
      problem.upper[var] = 1.0;
      problem.integral[static_cast<std::size_t>(var)] = true;
    }
  for (int c = 0; c < S; ++c) {
    const int var = M * N + c;
    problem.objective[var] = -config.diversity_penalty;
    // Page-wide category counts never exceed N, so capping the slack there
    // keeps the program bounded even at zero penalty.
    problem.upper[var] = static_cast<double>(N);
  }

  // Family 1: each item in at most one channel.
  for (int j = 0; j < N; ++j) {
    lp::Row row;
    for (int i = 0; i < M; ++i) row.coeffs.emplace_back(i * N + j, 1.0);
    row.relation = lp::Relation::LessEqual;
    row.rhs = 1.0;
    problem.rows.push_back(std::move(row));
  }
  // Family 2: exact channel fill.
  for (int i = 0; i < M; ++i) {
    lp::Row row;
    for (int j = 0; j < N; ++j) row.coeffs.emplace_back(i * N + j, 1.0);
    row.relation = lp::Relation::Equal;
    row.rhs = static_cast<double>(config.capacities[static_cast<std::size_t>(i)] +
                                  config.overflow);
    problem.rows.push_back(std::move(row));
  }
  // Family 3: page-wide category count <= threshold + slack.
  for (int c = 0; c < S; ++c) {
    lp::Row row;
    for (int j = 0; j < N; ++j)
      if (config.category_of[static_cast<std::size_t>(j)] == c)
        for (int i = 0; i < M; ++i) row.coeffs.emplace_back(i * N + j, 1.0);
    row.coeffs.emplace_back(M * N + c, -1.0);
    row.relation = lp::Relation::LessEqual;
    row.rhs = static_cast<double>(config.category_thresholds[static_cast<std::size_t>(c)]);
    problem.rows.push_back(std::move(row));
  }
  // Family 4: per-channel category bound.
  for (int c = 0; c < S; ++c)
    for (int i = 0; i < M; ++i) {
      lp::Row row;
      for (int j = 0; j < N; ++j)
        if (config.category_of[static_cast<std::size_t>(j)] == c)
          row.coeffs.emplace_back(i * N + j, 1.0);
      row.relation = lp::Relation::LessEqual;
      row.rhs = static_cast<double>(config.per_channel_bound);
      problem.rows.push_back(std::move(row));
    }

  return problem;
}

lp::LpSolution solve_lp_relaxation(const lp::LinearProgram& problem,
                                   const lp::SimplexOptions& options) {
  return lp::solve_lp(problem, options);
}

Allocation solve_allocation(const Matrix& scores, const AllocationConfig& config,
                            const SolveOptions& options) {
  config.validate();
  check_scores(scores, config);
  Allocation out;
  out.assignment = Eigen::MatrixXi::Zero(config.num_channels, config.num_candidates);
  out.slacks.assign(static_cast<std::size_t>(config.num_categories()), 0.0);

  if (config.total_slots() > config.num_candidates) {
    out.status = AllocStatus::Infeasible;
    out.infeasible_family = kFamilyChannelFill;
    return out;
  }

  const lp::LinearProgram problem = build_allocation_problem(scores, config);

  if (options.relaxation_only) {
    const lp::LpSolution relax = solve_lp_relaxation(problem, options.milp.simplex);
    if (relax.status != lp::SolveStatus::Optimal) {
      out.status = AllocStatus::Infeasible;
      out.infeasible_family = diagnose_infeasibility(config);
      return out;
    }
    out.status = AllocStatus::RelaxationOnly;
    out.objective = relax.objective;
    bool integral = true;
    for (int k = 0; k < config.num_channels * config.num_candidates && integral; ++k)
      if (std::abs(relax.x[k] - std::round(relax.x[k])) > options.milp.int_tol) integral = false;
    if (integral) {
      out.assignment = assignment_from_lp(relax.x, config);
      finish_allocation(out, scores, config);
      // keep the relaxation label: integrality was luck, not a guarantee
      out.status = AllocStatus::RelaxationOnly;
    }
    return out;
  }

  const lp::MilpSolution milp = lp::solve_milp(problem, options.milp);
  if (milp.status == lp::SolveStatus::Infeasible) {
    out.status = AllocStatus::Infeasible;
    out.infeasible_family = diagnose_infeasibility(config);
    return out;
  }
  if (milp.status != lp::SolveStatus::Optimal)
    throw DataError(std::string("allocation solve failed: ") + lp::status_name(milp.status));

  out.status = AllocStatus::Optimal;
  out.assignment = assignment_from_lp(milp.x, config);
  finish_allocation(out, scores, config);

  if (options.lexicographic_tiebreak) {
    // Sequentially force assignment entries to zero wherever some other
    // optimum allows it; the result is the lexicographically smallest
    // optimal assignment in row-major order.
    const double target = out.objective;
    std::vector<lp::BoundOverride> fixes;
    Eigen::MatrixXi incumbent = out.assignment;
    const int M = config.num_channels;
    const int N = config.num_candidates;
    for (int k = 0; k < M * N; ++k) {
      const int i = k / N, j = k % N;
      if (incumbent(i, j) == 0) {
        fixes.push_back({k, -lp::kInf, 0.0});
        continue;
      }
      std::vector<lp::BoundOverride> trial = fixes;
      trial.push_back({k, -lp::kInf, 0.0});
      lp::MilpOptions probe = options.milp;
      probe.initial_incumbent = target - 1e-9 - 1e-12;
      const lp::MilpSolution alt = lp::solve_milp(problem, trial, probe);
      if (alt.status == lp::SolveStatus::Optimal && alt.objective >= target - 1e-9) {
        incumbent = assignment_from_lp(alt.x, config);
        fixes = std::move(trial);
      } else {
        fixes.push_back({k, 1.0, lp::kInf});
      }
    }
    out.assignment = incumbent;
    finish_allocation(out, scores, config);
  }

  return out;
}

Allocation brute_force_allocation(const Matrix& scores, const AllocationConfig& config) {
  config.validate();
  check_scores(scores, config);
  const int M = config.num_channels;
  const int N = config.num_candidates;
  const int S = config.num_categories();

  double maps = 1.0;
  for (int j = 0; j < N; ++j) {
    maps *= static_cast<double>(M + 1);
    if (maps > 1e7) throw InstanceTooLarge("brute force: (M+1)^N exceeds 1e7");
  }

  Allocation best;
  best.assignment = Eigen::MatrixXi::Zero(M, N);
  best.slacks.assign(static_cast<std::size_t>(S), 0.0);
  bool found = false;
  std::vector<int> best_flat;

  // digit j: 0..M-1 assigns item j to that channel, M leaves it out
  std::vector<int> digits(static_cast<std::size_t>(N), 0);
  std::vector<int> fill(static_cast<std::size_t>(M));
  std::vector<int> page_count(static_cast<std::size_t>(S));
  std::vector<int> channel_cat(static_cast<std::size_t>(M * S));

  for (;;) {
    std::fill(fill.begin(), fill.end(), 0);
    std::fill(page_count.begin(), page_count.end(), 0);
    std::fill(channel_cat.begin(), channel_cat.end(), 0);
    double score_sum = 0.0;
    bool ok = true;
    for (int j = 0; j < N && ok; ++j) {
      const int d = digits[static_cast<std::size_t>(j)];
      if (d == M) continue;
      const int c = config.category_of[static_cast<std::size_t>(j)];
      ++fill[static_cast<std::size_t>(d)];
      ++page_count[static_cast<std::size_t>(c)];
      if (++channel_cat[static_cast<std::size_t>(d * S + c)] > config.per_channel_bound)
        ok = false;
      score_sum += scores(d, j);
    }
    if (ok)
      for (int i = 0; i < M; ++i)
        if (fill[static_cast<std::size_t>(i)] !=
            config.capacities[static_cast<std::size_t>(i)] + config.overflow)
          ok = false;

    if (ok) {
      double slack_sum = 0.0;
      for (int c = 0; c < S; ++c)
        slack_sum += std::max(
            0, page_count[static_cast<std::size_t>(c)] -
                   config.category_thresholds[static_cast<std::size_t>(c)]);
      const double obj = score_sum - config.diversity_penalty * slack_sum;

      bool take = false;
      if (!found || obj > best.objective + 1e-12) {
        take = true;
      } else if (obj >= best.objective - 1e-12) {
        // Tie: lexicographically smallest assignment in row-major order.
        std::vector<int> flat(static_cast<std::size_t>(M * N), 0);
        for (int j = 0; j < N; ++j)
          if (digits[static_cast<std::size_t>(j)] != M)
            flat[static_cast<std::size_t>(digits[static_cast<std::size_t>(j)] * N + j)] = 1;
        take = flat < best_flat;
      }
      if (take) {
        found = true;
        best.objective = obj;
        best.assignment.setZero();
        for (int j = 0; j < N; ++j)
          if (digits[static_cast<std::size_t>(j)] != M)
            best.assignment(digits[static_cast<std::size_t>(j)], j) = 1;
        best_flat.assign(static_cast<std::size_t>(M * N), 0);
        for (int j = 0; j < N; ++j)
          if (digits[static_cast<std::size_t>(j)] != M)
            best_flat[static_cast<std::size_t>(digits[static_cast<std::size_t>(j)] * N + j)] = 1;
      }
    }

    // next map
    int pos = 0;
    while (pos < N) {
      if (++digits[static_cast<std::size_t>(pos)] <= M) break;
      digits[static_cast<std::size_t>(pos)] = 0;
      ++pos;
    }
    if (pos == N) break;
  }

  if (!found) {
    best.status = AllocStatus::Infeasible;
    best.infeasible_family = config.total_slots() > N ? kFamilyChannelFill
                                                      : diagnose_infeasibility(config);
    return best;
  }
  best.status = AllocStatus::Optimal;
  finish_allocation(best, scores, config);
  return best;
}

ConstraintReport verify_allocation(const Allocation& alloc, const Matrix& scores,
                                   const AllocationConfig& config) {
  config.validate();
  check_scores(scores, config);
  const int M = config.num_channels;
  const int N = config.num_candidates;
  const int S = config.num_categories();
  if (alloc.assignment.rows() != M || alloc.assignment.cols() != N ||
      static_cast<int>(alloc.slacks.size()) != S)
    throw DimensionError("verify_allocation: allocation shape mismatch");

  ConstraintReport report;
  auto& families = report.families;
  families.assign(5, {});
  families[0].family = kFamilyItemOnce;
  families[1].family = kFamilyChannelFill;
  families[2].family = kFamilyThreshold;
  families[3].family = kFamilyChannelBound;
  families[4].family = kFamilyDomains;

  auto fail = [&families](int fam, std::string detail) {
    if (families[static_cast<std::size_t>(fam)].pass) {
      families[static_cast<std::size_t>(fam)].pass = false;
      families[static_cast<std::size_t>(fam)].first_violation = std::move(detail);
    }
  };

  for (int j = 0; j < N; ++j) {
    int uses = 0;
    for (int i = 0; i < M; ++i) uses += alloc.assignment(i, j);
    if (uses > 1) fail(0, "item " + std::to_string(j) + " assigned " + std::to_string(uses) + "x");
  }
  for (int i = 0; i < M; ++i) {
    int count = 0;
    for (int j = 0; j < N; ++j) count += alloc.assignment(i, j);
    const int want = config.capacities[static_cast<std::size_t>(i)] + config.overflow;
    if (count != want)
      fail(1, "channel " + std::to_string(i) + " holds " + std::to_string(count) +
                  ", expected " + std::to_string(want));
  }
  std::vector<int> page_count(static_cast<std::size_t>(S), 0);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j)
      if (alloc.assignment(i, j) != 0)
        ++page_count[static_cast<std::size_t>(config.category_of[static_cast<std::size_t>(j)])];
  for (int c = 0; c < S; ++c) {
    const double cap = config.category_thresholds[static_cast<std::size_t>(c)] +
                       alloc.slacks[static_cast<std::size_t>(c)];
    if (page_count[static_cast<std::size_t>(c)] > cap + 1e-9)
      fail(2, "category " + std::to_string(c) + " count " +
                  std::to_string(page_count[static_cast<std::size_t>(c)]) +
                  " exceeds threshold+slack");
  }
  for (int c = 0; c < S; ++c)
    for (int i = 0; i < M; ++i) {
      int count = 0;
      for (int j = 0; j < N; ++j)
        if (alloc.assignment(i, j) != 0 &&
            config.category_of[static_cast<std::size_t>(j)] == c)
          ++count;
      if (count > config.per_channel_bound)
        fail(3, "channel " + std::to_string(i) + " holds " + std::to_string(count) +
                    " items of category " + std::to_string(c));
    }
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j)
      if (alloc.assignment(i, j) != 0 && alloc.assignment(i, j) != 1)
        fail(4, "assignment entry not binary");
  for (int c = 0; c < S; ++c)
    if (alloc.slacks[static_cast<std::size_t>(c)] < -1e-12) fail(4, "negative slack");

  double score_sum = 0.0, slack_sum = 0.0;
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j)
      if (alloc.assignment(i, j) != 0) score_sum += scores(i, j);
  for (const double s : alloc.slacks) slack_sum += s;
  report.recomputed_objective = score_sum - config.diversity_penalty * slack_sum;
  report.objective_consistent = std::abs(report.recomputed_objective - alloc.objective) <= 1e-9;
  return report;
}

Matrix read_score_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError("score matrix csv: ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("score matrix csv: empty");
  Matrix scores(static_cast<Eigen::Index>(rows.size()),
                static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return scores;
}

void write_score_matrix_csv(const Matrix& scores, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    for (Eigen::Index j = 0; j < scores.cols(); ++j)
      out << scores(i, j) << (j + 1 < scores.cols() ? "," : "");
    out << "\n";
  }
}

AllocationConfig allocation_config_from_json_file(const std::filesystem::path& path,
                                                  std::vector<std::string>* category_names,
                                                  int num_candidates) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  AllocationConfig config;
  config.capacities = doc.at("capacities").get<std::vector<int>>();
  config.num_channels = static_cast<int>(config.capacities.size());
  config.overflow = doc.value("overflow_h", config.overflow);
  config.per_channel_bound = doc.value("per_channel_bound", config.per_channel_bound);
  config.diversity_penalty = doc.value("diversity_penalty", config.diversity_penalty);

  std::vector<std::string> names;
  std::unordered_map<std::string, int> index_of;
  const auto intern = [&names, &index_of](const std::string& name) {
    auto it = index_of.find(name);
    if (it != index_of.end()) return it->second;
    const int ix = static_cast<int>(names.size());
    names.push_back(name);
    index_of.emplace(name, ix);
    return ix;
  };
  for (const auto& name : doc.at("category_of"))
    config.category_of.push_back(intern(name.get<std::string>()));
  config.num_candidates = static_cast<int>(config.category_of.size());
  if (num_candidates > 0 && config.num_candidates != num_candidates)
    throw ConfigError("allocation config: category_of length disagrees with the score matrix");
  config.category_thresholds.assign(names.size(), 0);
  for (const auto& [name, t] : doc.at("thresholds").items()) {
    const auto it = index_of.find(name);
    if (it != index_of.end())
      config.category_thresholds[static_cast<std::size_t>(it->second)] = t.get<int>();
  }
  if (category_names != nullptr) *category_names = std::move(names);
  return config;
}

std::string allocation_to_json(const Allocation& alloc,
                               const std::vector<std::string>& category_names) {
  nlohmann::json out;
  out["status"] = alloc_status_name(alloc.status);
  if (alloc.status == AllocStatus::Infeasible) {
    out["infeasible_family"] = alloc.infeasible_family;
    return out.dump();
  }
  nlohmann::json assignment = nlohmann::json::array();
  for (Eigen::Index i = 0; i < alloc.assignment.rows(); ++i)
    for (Eigen::Index j = 0; j < alloc.assignment.cols(); ++j)
      if (alloc.assignment(i, j) != 0)
        assignment.push_back(nlohmann::json::array({i, j}));
  nlohmann::json slacks = nlohmann::json::object();
  for (std::size_t c = 0; c < alloc.slacks.size(); ++c)
    if (alloc.slacks[c] > 0.0) {
      const std::string name =
          c < category_names.size() ? category_names[c] : std::to_string(c);
      slacks[name] = alloc.slacks[c];
    }
  out["assignment"] = std::move(assignment);
  out["slacks"] = std::move(slacks);
  out["objective"] = alloc.objective;
  return out.dump();
}

}  // namespace chanrec::alloc
