#include "chanrec/lp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <queue>

namespace chanrec::lp {

void LinearProgram::check() const {
  if (objective.size() != num_vars || lower.size() != num_vars || upper.size() != num_vars ||
      static_cast<int>(integral.size()) != num_vars)
    throw DimensionError("linear program: vector sizes disagree with num_vars");
  for (int j = 0; j < num_vars; ++j)
    if (lower[j] > upper[j]) throw DimensionError("linear program: lower[j] > upper[j]");
  for (const Row& row : rows)
    for (const auto& [var, coeff] : row.coeffs) {
      (void)coeff;
      if (var < 0 || var >= num_vars) throw DimensionError("linear program: row names bad var");
    }
}

const char* status_name(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::IterationLimit: return "iteration-limit";
  }
  return "unknown";
}

namespace {

enum class VarState { Basic, AtLower, AtUpper };

// Working tableau for the bounded-variable simplex. Columns: the problem's
// structural variables, one logical per row, then any artificials added to
// patch up the initial basis.
class Simplex {
 public:
  Simplex(const LinearProgram& lp, const std::vector<BoundOverride>& overrides,
          const SimplexOptions& options)
      : options_(options),
        m_(static_cast<int>(lp.rows.size())),
        n_struct_(lp.num_vars) {
    lower_ = Vector::Zero(n_struct_ + m_);
    upper_ = Vector::Zero(n_struct_ + m_);
    lower_.head(n_struct_) = lp.lower;
    upper_.head(n_struct_) = lp.upper;
    for (const BoundOverride& o : overrides) {
      lower_[o.var] = std::max(lower_[o.var], o.lower);
      upper_[o.var] = std::min(upper_[o.var], o.upper);
    }

    cols_ = Matrix::Zero(m_, n_struct_ + m_);
    b_ = Vector::Zero(m_);
    for (int r = 0; r < m_; ++r) {
      const Row& row = lp.rows[static_cast<std::size_t>(r)];
      for (const auto& [var, coeff] : row.coeffs) cols_(r, var) += coeff;
      b_[r] = row.rhs;
      const int logical = n_struct_ + r;
      cols_(r, logical) = 1.0;
      switch (row.relation) {
        case Relation::LessEqual:
          lower_[logical] = 0.0;
          upper_[logical] = kInf;
          break;
        case Relation::Equal:
          lower_[logical] = 0.0;
          upper_[logical] = 0.0;
          break;
        case Relation::GreaterEqual:
          lower_[logical] = -kInf;
          upper_[logical] = 0.0;
          break;
      }
    }

    cost_ = Vector::Zero(n_struct_ + m_);
    cost_.head(n_struct_) = lp.objective;
  }

  // Returns false when the variable bounds themselves are contradictory.
  bool bounds_consistent() const {
    for (int j = 0; j < n_struct_; ++j)
      if (lower_[j] > upper_[j] + options_.feas_tol) return false;
    return true;
  }

  LpSolution run() {
    LpSolution out;
    if (!bounds_consistent()) {
      out.status = SolveStatus::Infeasible;
      return out;
    }
    init_basis();

    if (n_artificial_ > 0) {
      Vector phase1 = Vector::Zero(total());
      phase1.tail(n_artificial_).setConstant(-1.0);
      const SolveStatus st = optimize(phase1);
      if (st != SolveStatus::Optimal) {
        // Phase 1 is bounded above by zero, so anything but optimal means
        // numerical trouble.
        out.status = st == SolveStatus::Unbounded ? SolveStatus::IterationLimit : st;
        return out;
      }
      double infeas = 0.0;
      for (int j = n_struct_ + m_; j < total(); ++j) infeas += value_of(j);
      if (infeas > 1e-7) {
        out.status = SolveStatus::Infeasible;
        out.iterations = iterations_;
        return out;
      }
      // Artificials are pinned at zero for phase 2.
      for (int j = n_struct_ + m_; j < total(); ++j) {
        lower_[j] = 0.0;
        upper_[j] = 0.0;
      }
    }

    Vector cost = Vector::Zero(total());
    cost.head(n_struct_ + m_) = cost_;
    const SolveStatus st = optimize(cost);
    out.status = st;
    out.iterations = iterations_;
    if (st == SolveStatus::Optimal) {
      out.x = Vector(n_struct_);
      for (int j = 0; j < n_struct_; ++j) out.x[j] = value_of(j);
      out.objective = cost_.head(n_struct_).dot(out.x);
    }
    return out;
  }

 private:
  int total() const { return static_cast<int>(state_.size()); }

  double value_of(int j) const {
    if (state_[static_cast<std::size_t>(j)] == VarState::Basic) {
      for (int r = 0; r < m_; ++r)
        if (basis_[static_cast<std::size_t>(r)] == j) return xb_[r];
      return 0.0;  // unreachable
    }
    return nonbasic_value(j);
  }

  double nonbasic_value(int j) const {
    return state_[static_cast<std::size_t>(j)] == VarState::AtUpper ? upper_[j] : lower_[j];
  }

  void init_basis() {
    state_.assign(static_cast<std::size_t>(n_struct_ + m_), VarState::AtLower);
    for (int j = 0; j < n_struct_ + m_; ++j) {
      if (std::isfinite(lower_[j])) {
        state_[static_cast<std::size_t>(j)] = VarState::AtLower;
      } else if (std::isfinite(upper_[j])) {
        state_[static_cast<std::size_t>(j)] = VarState::AtUpper;
      } else {
        throw ConfigError("simplex: free variables are not supported");
      }
    }

    // Residual each logical would have to absorb with structurals at bounds.
    Vector rho = b_;
    for (int j = 0; j < n_struct_; ++j) {
      const double v = nonbasic_value(j);
      if (v != 0.0) rho -= cols_.col(j) * v;
    }

    basis_.assign(static_cast<std::size_t>(m_), -1);
    std::vector<double> art_value;
    std::vector<double> art_sign;
    std::vector<int> art_row;
    for (int r = 0; r < m_; ++r) {
      const int logical = n_struct_ + r;
      if (rho[r] >= lower_[logical] - options_.feas_tol &&
          rho[r] <= upper_[logical] + options_.feas_tol) {
        basis_[static_cast<std::size_t>(r)] = logical;
        state_[static_cast<std::size_t>(logical)] = VarState::Basic;
      } else {
        const double pinned =
            rho[r] < lower_[logical] ? lower_[logical] : upper_[logical];
        state_[static_cast<std::size_t>(logical)] =
            rho[r] < lower_[logical] ? VarState::AtLower : VarState::AtUpper;
        art_row.push_back(r);
        art_sign.push_back(rho[r] - pinned > 0 ? 1.0 : -1.0);
        art_value.push_back(std::abs(rho[r] - pinned));
      }
    }

    n_artificial_ = static_cast<int>(art_row.size());
    if (n_artificial_ > 0) {
      Matrix extended = Matrix::Zero(m_, n_struct_ + m_ + n_artificial_);
      extended.leftCols(n_struct_ + m_) = cols_;
      Vector lo(n_struct_ + m_ + n_artificial_), hi(n_struct_ + m_ + n_artificial_);
      lo.head(n_struct_ + m_) = lower_;
      hi.head(n_struct_ + m_) = upper_;
      for (int a = 0; a < n_artificial_; ++a) {
        const int col = n_struct_ + m_ + a;
        extended(art_row[static_cast<std::size_t>(a)], col) =
            art_sign[static_cast<std::size_t>(a)];
        lo[col] = 0.0;
        hi[col] = kInf;
        basis_[static_cast<std::size_t>(art_row[static_cast<std::size_t>(a)])] = col;
        state_.push_back(VarState::Basic);
      }
      cols_ = std::move(extended);
      lower_ = std::move(lo);
      upper_ = std::move(hi);
    }
  }

  // Recompute basic values from the current nonbasic assignment.
  void refresh_basics(const Eigen::PartialPivLU<Matrix>& lu) {
    Vector rhs = b_;
    for (int j = 0; j < total(); ++j) {
      if (state_[static_cast<std::size_t>(j)] == VarState::Basic) continue;
      const double v = nonbasic_value(j);
      if (v != 0.0) rhs -= cols_.col(j) * v;
    }
    xb_ = lu.solve(rhs);
  }

  SolveStatus optimize(const Vector& cost) {
    int degenerate_streak = 0;
    bool bland = false;

    for (;; ++iterations_) {
      if (iterations_ >= options_.max_iterations) return SolveStatus::IterationLimit;

      Matrix basis_matrix(m_, m_);
      for (int r = 0; r < m_; ++r)
        basis_matrix.col(r) = cols_.col(basis_[static_cast<std::size_t>(r)]);
      Eigen::PartialPivLU<Matrix> lu(basis_matrix);
      refresh_basics(lu);

      Vector cb(m_);
      for (int r = 0; r < m_; ++r) cb[r] = cost[basis_[static_cast<std::size_t>(r)]];
      const Vector pi = lu.transpose().solve(cb);

      // Pricing: Dantzig by default, Bland when stalled.
      int entering = -1;
      double best_score = options_.pivot_tol;
      int direction = +1;
      for (int j = 0; j < total(); ++j) {
        const VarState st = state_[static_cast<std::size_t>(j)];
        if (st == VarState::Basic) continue;
        if (upper_[j] - lower_[j] <= 0.0) continue;  // fixed, never enters
        const double d = cost[j] - pi.dot(cols_.col(j));
        int dir = 0;
        double score = 0.0;
        if (st == VarState::AtLower && d > options_.pivot_tol) {
          dir = +1;
          score = d;
        } else if (st == VarState::AtUpper && d < -options_.pivot_tol) {
          dir = -1;
          score = -d;
        } else {
          continue;
        }
        if (bland) {
          entering = j;
          direction = dir;
          break;
        }
        if (score > best_score) {
          best_score = score;
          entering = j;
          direction = dir;
        }
      }
      if (entering < 0) return SolveStatus::Optimal;

      const Vector w = lu.solve(cols_.col(entering));

      // Ratio test: entering moves by t >= 0 toward its opposite bound;
      // basics move by -direction * w * t.
      double t_best = upper_[entering] - lower_[entering];
      int leave_row = -1;
      double leave_pivot = 0.0;
      for (int r = 0; r < m_; ++r) {
        const double delta = direction * w[r];
        if (std::abs(delta) <= options_.pivot_tol) continue;
        const int var = basis_[static_cast<std::size_t>(r)];
        double t;
        if (delta > 0.0) {
          if (!std::isfinite(lower_[var])) continue;
          t = (xb_[r] - lower_[var]) / delta;
        } else {
          if (!std::isfinite(upper_[var])) continue;
          t = (xb_[r] - upper_[var]) / delta;
        }
        t = std::max(t, 0.0);
        bool take = false;
        if (t < t_best - 1e-12) {
          take = true;
        } else if (t <= t_best + 1e-12 && leave_row >= 0) {
          // Tie between candidate rows: Bland wants the smallest variable
          // index, otherwise prefer the larger pivot for stability.
          take = bland ? var < basis_[static_cast<std::size_t>(leave_row)]
                       : std::abs(delta) > std::abs(leave_pivot) + 1e-15;
        }
        if (take) {
          t_best = std::min(t_best, t);
          leave_row = r;
          leave_pivot = delta;
        }
      }

      if (!std::isfinite(t_best)) return SolveStatus::Unbounded;

      degenerate_streak = t_best <= 1e-12 ? degenerate_streak + 1 : 0;
      bland = degenerate_streak > 64;

      if (leave_row < 0) {
        // Bound flip: entering runs to its other bound, basis unchanged.
        state_[static_cast<std::size_t>(entering)] =
            direction > 0 ? VarState::AtUpper : VarState::AtLower;
        continue;
      }

      const int leaving = basis_[static_cast<std::size_t>(leave_row)];
      state_[static_cast<std::size_t>(leaving)] =
          direction * w[leave_row] > 0.0 ? VarState::AtLower : VarState::AtUpper;
      basis_[static_cast<std::size_t>(leave_row)] = entering;
      state_[static_cast<std::size_t>(entering)] = VarState::Basic;
    }
  }

  SimplexOptions options_;
  int m_ = 0;
  int n_struct_ = 0;
  int n_artificial_ = 0;
  Matrix cols_;
  Vector b_;
  Vector cost_;
  Vector lower_, upper_;
  Vector xb_;
  std::vector<int> basis_;
  std::vector<VarState> state_;
  int iterations_ = 0;
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp, const SimplexOptions& options) {
  return solve_lp(lp, {}, options);
}

LpSolution solve_lp(const LinearProgram& lp, const std::vector<BoundOverride>& overrides,
                    const SimplexOptions& options) {
  lp.check();
  if (lp.rows.empty()) {
    // Pure bound problem.
    LpSolution out;
    out.x = Vector(lp.num_vars);
    for (int j = 0; j < lp.num_vars; ++j) {
      double lo = lp.lower[j], hi = lp.upper[j];
      for (const BoundOverride& o : overrides)
        if (o.var == j) {
          lo = std::max(lo, o.lower);
          hi = std::min(hi, o.upper);
        }
      if (lo > hi + options.feas_tol) {
        out.status = SolveStatus::Infeasible;
        return out;
      }
      if (lp.objective[j] > 0) {
        if (!std::isfinite(hi)) {
          out.status = SolveStatus::Unbounded;
          return out;
        }
        out.x[j] = hi;
      } else {
        if (!std::isfinite(lo)) {
          out.status = lp.objective[j] < 0 ? SolveStatus::Unbounded : SolveStatus::Optimal;
          if (out.status == SolveStatus::Unbounded) return out;
          out.x[j] = std::isfinite(hi) ? hi : 0.0;
        } else {
          out.x[j] = lo;
        }
      }
    }
    out.status = SolveStatus::Optimal;
    out.objective = lp.objective.dot(out.x);
    return out;
  }
  Simplex simplex(lp, overrides, options);
  return simplex.run();
}

namespace {

struct BbNode {
  double bound = 0.0;  // parent relaxation value; optimistic for this node
  long id = 0;
  std::vector<BoundOverride> fixes;
};

struct BbNodeOrder {
  bool operator()(const BbNode& a, const BbNode& b) const {
    if (a.bound != b.bound) return a.bound < b.bound;  // priority_queue pops max
    return a.id > b.id;
  }
};

}  // namespace

MilpSolution solve_milp(const LinearProgram& lp, const MilpOptions& options) {
  return solve_milp(lp, {}, options);
}

MilpSolution solve_milp(const LinearProgram& lp, const std::vector<BoundOverride>& root_fixes,
                        const MilpOptions& options) {
  lp.check();
  // Status Infeasible on return means "no solution strictly better than
  // options.initial_incumbent", which is plain infeasibility by default.
  MilpSolution best;
  best.status = SolveStatus::Infeasible;
  double incumbent = options.initial_incumbent;

  std::priority_queue<BbNode, std::vector<BbNode>, BbNodeOrder> open;
  long next_id = 0;
  open.push({kInf, next_id++, root_fixes});

  while (!open.empty()) {
    if (best.nodes >= options.max_nodes) {
      best.status = SolveStatus::IterationLimit;
      return best;
    }
    BbNode node = open.top();
    open.pop();
    if (node.bound <= incumbent + options.prune_tol) continue;

    ++best.nodes;
    const LpSolution relax = solve_lp(lp, node.fixes, options.simplex);
    if (relax.status == SolveStatus::Infeasible) continue;
    if (relax.status != SolveStatus::Optimal) {
      best.status = relax.status;  // unbounded or iteration trouble: surface it
      return best;
    }
    if (relax.objective <= incumbent + options.prune_tol) continue;

    // Most-fractional integral variable.
    int branch_var = -1;
    double branch_score = 0.5;  // |frac - 0.5|, smaller is more fractional
    for (int j = 0; j < lp.num_vars; ++j) {
      if (!lp.integral[static_cast<std::size_t>(j)]) continue;
      const double v = relax.x[j];
      const double frac = v - std::floor(v);
      if (std::min(frac, 1.0 - frac) <= options.int_tol) continue;
      const double score = std::abs(frac - 0.5);
      if (branch_var < 0 || score < branch_score - 1e-15) {
        branch_var = j;
        branch_score = score;
      }
    }

    if (branch_var < 0) {
      // Integral: round and accept as incumbent candidate.
      Vector x = relax.x;
      for (int j = 0; j < lp.num_vars; ++j)
        if (lp.integral[static_cast<std::size_t>(j)]) x[j] = std::round(x[j]);
      const double obj = lp.objective.dot(x);
      if (obj > incumbent + 1e-12) {
        incumbent = obj;
        best.status = SolveStatus::Optimal;
        best.objective = obj;
        best.x = std::move(x);
      }
      continue;
    }

    const double v = relax.x[branch_var];
    BbNode down{relax.objective, next_id++, node.fixes};
    down.fixes.push_back({branch_var, -kInf, std::floor(v)});
    BbNode up{relax.objective, next_id++, node.fixes};
    up.fixes.push_back({branch_var, std::ceil(v), kInf});
    open.push(std::move(down));
    open.push(std::move(up));
  }

  return best;
}

}  // namespace chanrec::lp
