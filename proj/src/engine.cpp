// Copyright 2026 The gopvi Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gopvi/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "gopvi/rng.hpp"

namespace gopvi {

namespace {
std::vector<int> probe_connected(const BiconvexProblem& problem, const LinearizedLagrange& lin);
}  // namespace

namespace {

// Fixed conversion from kernel Newton steps to the deterministic elapsed_s
// written into traces; see README ("Determinism").
constexpr double kSecondsPerWorkUnit = 2e-5;

int thread_count(const IterationLimits& limits) {
  if (limits.threads > 0) return limits.threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

SolveOptions kernel_options(const IterationLimits& limits) {
  SolveOptions o;
  o.tol = limits.kernel_tol;
  o.max_iterations = limits.kernel_max_iterations;
  return o;
}

// Equality-constraint coefficient on alpha_j: simplex groups first, then
// alpha-block extra equalities.
double equality_coeff(const BiconvexProblem& problem, int eq_index, int j) {
  const auto& groups = problem.alpha.simplex_groups;
  if (eq_index < static_cast<int>(groups.size())) {
    for (int g : groups[eq_index])
      if (g == j) return 1.0;
    return 0.0;
  }
  int extra = eq_index - static_cast<int>(groups.size());
  int seen = 0;
  for (const auto& eq : problem.extra_equalities) {
    if (eq.block != AffineConstraint::Block::Alpha) continue;
    if (seen == extra) return j < eq.coeffs.size() ? eq.coeffs[j] : 0.0;
    ++seen;
  }
  return 0.0;
}

double equality_value(const BiconvexProblem& problem, int eq_index, const Vector& alpha) {
  const auto& groups = problem.alpha.simplex_groups;
  if (eq_index < static_cast<int>(groups.size())) {
    double s = -1.0;
    for (int g : groups[eq_index]) s += alpha[g];
    return s;
  }
  int extra = eq_index - static_cast<int>(groups.size());
  int seen = 0;
  for (const auto& eq : problem.extra_equalities) {
    if (eq.block != AffineConstraint::Block::Alpha) continue;
    if (seen == extra) return eq.coeffs.dot(alpha) - eq.rhs;
    ++seen;
  }
  return 0.0;
}

int alpha_equality_count(const BiconvexProblem& problem) {
  int n = static_cast<int>(problem.alpha.simplex_groups.size());
  for (const auto& eq : problem.extra_equalities)
    if (eq.block == AffineConstraint::Block::Alpha) ++n;
  return n;
}

// Numeric affine extraction of beta -> grad_alpha(alpha_t, beta) about the
// box center; exact for affine maps up to roundoff.
std::pair<Matrix, Vector> extract_affine(const BiconvexProblem& problem, const Vector& alpha_t) {
  const int nb = problem.beta.dim();
  const Vector center = problem.beta.interior_point();
  const Vector g_center = problem.grad_alpha(alpha_t, center);
  Matrix G(g_center.size(), nb);
  Vector bp = center;
  for (int j = 0; j < nb; ++j) {
    const double h = 1e-3 * (problem.beta.upper[j] - problem.beta.lower[j]);
    bp[j] = center[j] + h;
    const Vector gp = problem.grad_alpha(alpha_t, bp);
    bp[j] = center[j] - h;
    const Vector gm = problem.grad_alpha(alpha_t, bp);
    bp[j] = center[j];
    G.col(j) = (gp - gm) / (2.0 * h);
  }
  return {G, g_center - G * center};
}

bool affine_matches(const BiconvexProblem& problem, const Vector& alpha_t, const Matrix& G,
                    const Vector& g0) {
  Rng rng(0xAFF1E5u);
  for (int probe = 0; probe < 2; ++probe) {
    const Vector b = random_feasible_point(problem.beta, rng);
    const Vector exact = problem.grad_alpha(alpha_t, b);
    const Vector affine = G * b + g0;
    const double scale = std::max(1.0, exact.cwiseAbs().maxCoeff());
    if ((exact - affine).cwiseAbs().maxCoeff() > 1e-6 * scale) return false;
  }
  return true;
}

}  // namespace

PrimalSolution solve_primal(const BiconvexProblem& problem, const Vector& beta_t,
                            const IterationLimits& limits) {
  if (problem.primal_closed_form) {
    PrimalSolution sol = problem.primal_closed_form(beta_t);
    if (problem.alpha.contains(sol.alpha, 1e-9)) {
      sol.value = problem.objective(sol.alpha, beta_t);
      return sol;
    }
  }
  ConvexProgram prog;
  prog.space = problem.alpha;
  for (const auto& eq : problem.extra_equalities)
    if (eq.block == AffineConstraint::Block::Alpha) prog.extra_equalities.push_back(eq);
  prog.objective = [&problem, beta_t](const Vector& a) { return problem.objective(a, beta_t); };
  prog.grad = [&problem, beta_t](const Vector& a) { return problem.grad_alpha(a, beta_t); };
  prog.hess = [&problem, beta_t](const Vector& a) { return problem.hess_alpha(a, beta_t); };
  const KernelSolution k = solve_convex(prog, problem.alpha.interior_point(), kernel_options(limits));
  if (k.status != SolveStatus::Optimal && k.status != SolveStatus::IterLimit)
    throw InternalError("primal subproblem reported infeasible");
  PrimalSolution sol;
  sol.alpha = k.x_star;
  sol.multipliers = k.multipliers;
  sol.value = k.objective_value;
  return sol;
}

LinearizedLagrange build_linearization(const BiconvexProblem& problem, int t, const PrimalSolution& primal,
                                       const Vector& beta_t) {
  LinearizedLagrange lin;
  lin.t = t;
  lin.alpha_t = primal.alpha;
  lin.beta_t = beta_t;
  lin.multipliers = primal.multipliers;
  lin.primal_value = primal.value;

  const int na = problem.alpha.dim();
  Matrix G;
  Vector g0;
  bool affine_ok = true;
  if (problem.alpha_grad_affine_in_beta) {
    std::tie(G, g0) = problem.alpha_grad_affine_in_beta(primal.alpha);
  } else {
    std::tie(G, g0) = extract_affine(problem, primal.alpha);
    affine_ok = affine_matches(problem, primal.alpha, G, g0);
  }

  // Constant correction from the dualized constraints: equality terms
  // lambda_i h_i(alpha_t) and active-box terms mu (both vanish at a feasible
  // primal point, kept for exactness).
  double const_corr = 0.0;
  const int neq = alpha_equality_count(problem);
  for (int e = 0; e < neq && e < lin.multipliers.lambda.size(); ++e)
    const_corr += lin.multipliers.lambda[e] * equality_value(problem, e, primal.alpha);
  for (const auto& m : lin.multipliers.mu) {
    const double resid = m.at_upper ? primal.alpha[m.index] - problem.alpha.upper[m.index]
                                    : problem.alpha.lower[m.index] - primal.alpha[m.index];
    const_corr += m.value * resid;
  }

  // g_j(beta) = d f/d alpha_j + sum_i lambda_i dh_i/d alpha_j + box terms.
  Vector b_corr = Vector::Zero(na);
  for (int j = 0; j < na; ++j) {
    for (int e = 0; e < neq && e < lin.multipliers.lambda.size(); ++e)
      b_corr[j] += lin.multipliers.lambda[e] * equality_coeff(problem, e, j);
  }
  for (const auto& m : lin.multipliers.mu) b_corr[m.index] += m.at_upper ? m.value : -m.value;

  if (!affine_ok) {
    // Fall back to the beta-linearized Lagrange about beta_t: both the
    // constant part and every gradient coefficient become affine, and the
    // surrogate remains a valid underestimator by convexity in beta.
    lin.beta_linearized = true;
    const Vector alpha_t = primal.alpha;
    const Vector gb = problem.grad_beta(alpha_t, beta_t);
    const double f0 = problem.objective(alpha_t, beta_t) + const_corr;
    const Vector bt = beta_t;
    lin.const_value = [f0, gb, bt](const Vector& b) { return f0 + gb.dot(b - bt); };
    lin.const_grad = [gb](const Vector&) { return gb; };
    lin.const_hess = [n = beta_t.size()](const Vector&) { return Matrix::Zero(n, n); };
    // Cross term d grad_alpha / d beta at (alpha_t, beta_t).
    Matrix Gx(na, beta_t.size());
    Vector bp = beta_t;
    for (int j = 0; j < beta_t.size(); ++j) {
      const double h = std::max(1e-7, 1e-7 * std::abs(beta_t[j]));
      bp[j] = beta_t[j] + h;
      const Vector gp = problem.grad_alpha(alpha_t, bp);
      bp[j] = beta_t[j] - h;
      const Vector gm = problem.grad_alpha(alpha_t, bp);
      bp[j] = beta_t[j];
      Gx.col(j) = (gp - gm) / (2.0 * h);
    }
    const Vector gat = problem.grad_alpha(alpha_t, beta_t);
    lin.cut_A = Gx;
    lin.cut_b = gat - Gx * beta_t + b_corr;
  } else {
    const Vector alpha_t = primal.alpha;
    const auto obj = problem.objective;
    const auto gradb = problem.grad_beta;
    const auto hessb = problem.hess_beta;
    lin.const_value = [obj, alpha_t, const_corr](const Vector& b) {
      return obj(alpha_t, b) + const_corr;
    };
    lin.const_grad = [gradb, alpha_t](const Vector& b) { return gradb(alpha_t, b); };
    lin.const_hess = [hessb, alpha_t](const Vector& b) { return hessb(alpha_t, b); };
    lin.cut_A = G;
    lin.cut_b = g0 + b_corr;
  }

  lin.connected = probe_connected(problem, lin);
  return lin;
}

namespace {
// Probes g_j over feasible beta: connected iff the value actually varies.
// The model hint can only veto, never add.
std::vector<int> probe_connected(const BiconvexProblem& problem, const LinearizedLagrange& lin) {
  const int na = problem.alpha.dim();
  Rng rng(0xC0FFEEu);
  std::vector<Vector> probes;
  probes.push_back(lin.beta_t);
  for (int i = 0; i < 4; ++i) probes.push_back(random_feasible_point(problem.beta, rng));

  std::vector<int> connected;
  for (int j = 0; j < na; ++j) {
    if (!problem.connected_hint.empty() && !problem.connected_hint[j]) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, scale = 1.0;
    for (const auto& b : probes) {
      const double g = lin.cut_value(j, b);
      lo = std::min(lo, g);
      hi = std::max(hi, g);
      scale = std::max(scale, std::abs(g));
    }
    if (hi - lo > 1e-9 * scale) connected.push_back(j);
  }
  return connected;
}
}  // namespace

std::vector<int> connected_variables(const LinearizedLagrange& lin) { return lin.connected; }

SurrogateAndCuts build_cuts(const LinearizedLagrange& lin, const BoundCombination& combo,
                            const VariableSpace& alpha_space) {
  if (combo.size() != lin.connected.size())
    throw InternalError("bound combination does not cover the connected set");
  SurrogateAndCuts out;
  const int nb = static_cast<int>(lin.cut_A.cols());
  out.lin_coeffs = Vector::Zero(nb);
  out.lin_offset = 0.0;
  for (size_t c = 0; c < combo.size(); ++c) {
    const int j = lin.connected[c];
    const double bound = combo[c] == 0 ? alpha_space.lower[j] : alpha_space.upper[j];
    const double delta = bound - lin.alpha_t[j];
    out.lin_coeffs += delta * lin.cut_A.row(j).transpose();
    out.lin_offset += delta * lin.cut_b[j];

    QualifyingCut cut;
    cut.t = lin.t;
    cut.j = j;
    cut.sense = combo[c] == 0 ? +1 : -1;
    cut.a = lin.cut_A.row(j).transpose();
    cut.b = lin.cut_b[j];
    out.cuts.push_back(cut);
  }
  const auto base_v = lin.const_value;
  const auto base_g = lin.const_grad;
  const auto base_h = lin.const_hess;
  const Vector d = out.lin_coeffs;
  const double e = out.lin_offset;
  out.value = [base_v, d, e](const Vector& b) { return base_v(b) + d.dot(b) + e; };
  out.grad = [base_g, d](const Vector& b) { return Vector(base_g(b) + d); };
  out.hess = [base_h](const Vector& b) { return base_h(b); };
  return out;
}

std::vector<std::pair<int, BoundCombination>> select_previous_lagrange(
    const std::vector<LinearizedLagrange>& history, const Vector& beta_T) {
  std::vector<std::pair<int, BoundCombination>> out;
  for (const auto& lin : history) {
    BoundCombination combo(lin.connected.size());
    for (size_t c = 0; c < lin.connected.size(); ++c) {
      const double g = lin.cut_value(lin.connected[c], beta_T);
      combo[c] = g >= 0.0 ? 0 : 1;  // boundary ties resolve to Lower
    }
    out.emplace_back(lin.t, combo);
  }
  return out;
}

void SolutionPool::store(const PoolKey& key, std::optional<PoolEntry> entry) {
  entries_[key] = std::move(entry);
}

int SolutionPool::live_count() const {
  int n = 0;
  for (const auto& [key, entry] : entries_)
    if (entry.has_value() && !consumed_.count(key)) ++n;
  return n;
}

bool SolutionPool::has_live() const {
  for (const auto& [key, entry] : entries_)
    if (entry.has_value() && !consumed_.count(key)) return true;
  return false;
}

std::pair<PoolKey, PoolEntry> SolutionPool::consume_min() {
  const PoolKey* best_key = nullptr;
  const PoolEntry* best = nullptr;
  for (const auto& [key, entry] : entries_) {
    if (!entry.has_value() || consumed_.count(key)) continue;
    if (!best || entry->v < best->v) {  // map order breaks ties: (t, lex combo)
      best_key = &key;
      best = &*entry;
    }
  }
  if (!best) throw PoolExhausted("no live relaxed-dual solutions remain");
  consumed_.insert(*best_key);
  return {*best_key, *best};
}

namespace {

struct FanTask {
  PoolKey key;
  std::optional<PoolEntry> result;
  int newton_steps = 0;
  bool warned = false;
};

void solve_one_subproblem(const BiconvexProblem& problem,
                          const std::vector<SurrogateAndCuts>& past_blocks,
                          const SurrogateAndCuts& current, const IterationLimits& limits, FanTask* task) {
  ConvexProgram prog;
  prog.space = problem.beta;
  for (const auto& eq : problem.extra_equalities)
    if (eq.block == AffineConstraint::Block::Beta) prog.extra_equalities.push_back(eq);

  auto add_cut_rows = [&prog](const SurrogateAndCuts& block) {
    for (const auto& cut : block.cuts) {
      LinearInequality row;  // sense * (a.b + b) >= 0  ->  -sense*a . x <= sense*b
      row.coeffs = -cut.sense * cut.a;
      row.rhs = cut.sense * cut.b;
      prog.linear_inequalities.push_back(row);
    }
  };
  for (const auto& block : past_blocks) add_cut_rows(block);
  add_cut_rows(current);

  const SolveOptions opts = kernel_options(limits);
  const Phase1Result p1 =
      max_slack_point(prog.space, prog.extra_equalities, prog.linear_inequalities, opts);
  task->newton_steps += p1.newton_steps;
  if (p1.slack <= opts.feas_slack) {
    task->result.reset();
    return;
  }

  for (const auto& block : past_blocks) {
    EpigraphTerm term;
    term.value = block.value;
    term.grad = block.grad;
    term.hess = block.hess;
    prog.epigraph_terms.push_back(term);
  }
  {
    EpigraphTerm term;
    term.value = current.value;
    term.grad = current.grad;
    term.hess = current.hess;
    prog.epigraph_terms.push_back(term);
  }

  const KernelSolution sol = solve_convex(prog, p1.x, opts);
  task->newton_steps += sol.newton_steps;
  if (sol.status == SolveStatus::Optimal) {
    task->result = PoolEntry{sol.objective_value, sol.x_star};
  } else if (sol.status == SolveStatus::IterLimit) {
    // The region is feasible but its bound is unknown; keeping it live at
    // -inf forces a revisit instead of silently discarding the region (which
    // could cut off the global optimum).
    task->result = PoolEntry{-std::numeric_limits<double>::infinity(), p1.x};
    task->warned = true;
  } else {
    task->result.reset();
  }
}

}  // namespace

void solve_relaxed_dual_fan(const BiconvexProblem& problem, GopState& state,
                            const LinearizedLagrange& lin_T, const IterationLimits& limits,
                            int* subproblems_solved) {
  // Step 2: previous Lagrange blocks. These are the blocks that defined the
  // consumed cell whose minimizer the current beta is, so the fan refines
  // exactly that cell; selecting regions afresh across all iterations at
  // beta_T can slice the cell against unrelated branches and lose the part
  // holding the optimum (observed as the lower bound crossing the verified
  // optimum), so the lineage is authoritative.
  std::vector<SurrogateAndCuts> past_blocks;
  for (const auto& [t, combo] : state.lineage)
    past_blocks.push_back(build_cuts(state.history[t - 1], combo, problem.alpha));

  const int nc = static_cast<int>(lin_T.connected.size());
  const int n_combos = 1 << nc;
  std::vector<FanTask> tasks(n_combos);
  std::vector<SurrogateAndCuts> currents(n_combos);
  for (int mask = 0; mask < n_combos; ++mask) {
    BoundCombination combo(nc);
    for (int c = 0; c < nc; ++c) combo[c] = (mask >> c) & 1;
    tasks[mask].key = PoolKey{lin_T.t, combo};
    currents[mask] = build_cuts(lin_T, combo, problem.alpha);
  }

  const int nt = std::min(thread_count(limits), std::max(1, n_combos));
  if (nt <= 1 || n_combos == 1) {
    for (int i = 0; i < n_combos; ++i)
      solve_one_subproblem(problem, past_blocks, currents[i], limits, &tasks[i]);
  } else {
    std::vector<std::thread> workers;
    std::atomic<int> next{0};
    for (int w = 0; w < nt; ++w) {
      workers.emplace_back([&]() {
        for (;;) {
          const int i = next.fetch_add(1);
          if (i >= n_combos) return;
          solve_one_subproblem(problem, past_blocks, currents[i], limits, &tasks[i]);
        }
      });
    }
    for (auto& w : workers) w.join();
  }

  for (auto& task : tasks) {
    if (task.result) {
      task.result->blocks = state.lineage;
      task.result->blocks.emplace_back(task.key.t, task.key.combo);
    }
    state.pool.store(task.key, task.result);
    state.work_units += task.newton_steps + 5;
    if (task.warned) ++state.warnings;
  }
  *subproblems_solved = n_combos;
}

std::pair<double, Vector> update_bounds(GopState& state) {
  auto [key, entry] = state.pool.consume_min();
  state.lbd = std::max(state.lbd, entry.v);
  state.beta_current = entry.beta;
  state.lineage = entry.blocks;
  return {entry.v, entry.beta};
}

GopResult gop_solve(const BiconvexProblem& problem, const Vector& beta1, double epsilon,
                    const IterationLimits& limits) {
  if (epsilon <= 0.0) throw Error("epsilon must be positive");
  if (!problem.beta.contains(beta1, 1e-8))
    throw InfeasibleStart("initial beta violates its box or simplex constraints");

  const auto t_start = std::chrono::steady_clock::now();
  GopState state;
  state.beta_current = beta1;

  GopResult result;
  result.status = GopStatus::IterLimit;

  while (state.T < limits.max_iterations) {
    ++state.T;
    // Step 1: primal at beta_T; update incumbent.
    const PrimalSolution primal = solve_primal(problem, state.beta_current, limits);
    state.work_units += 10;
    if (primal.value < state.ubd) {
      state.ubd = primal.value;
      state.incumbent_alpha = primal.alpha;
      state.incumbent_beta = state.beta_current;
    }
    // Primal heuristic: descend from the fresh primal point to the bottom of
    // its basin. Any feasible point bounds the optimum from above, so this
    // only sharpens the incumbent; the cut machinery still linearizes at the
    // unpolished primal solution.
    if (problem.coordinate_polish) {
      Vector a = primal.alpha;
      Vector b = state.beta_current;
      double prev = primal.value;
      for (int sweep = 0; sweep < 200; ++sweep) {
        problem.coordinate_polish(a, b);
        const double cur = problem.objective(a, b);
        state.work_units += 1;
        if (prev - cur < 1e-12 * std::max(1.0, std::abs(prev))) {
          prev = std::min(prev, cur);
          break;
        }
        prev = cur;
      }
      if (prev < state.ubd) {
        state.ubd = prev;
        state.incumbent_alpha = a;
        state.incumbent_beta = b;
      }
    }
    LinearizedLagrange lin = build_linearization(problem, state.T, primal, state.beta_current);

    // Steps 2+3: fan of relaxed-dual subproblems (past blocks selected at the
    // current beta), then Step 4: pool minimum -> bounds and next beta.
    int solved = 0;
    solve_relaxed_dual_fan(problem, state, lin, limits, &solved);
    state.history.push_back(std::move(lin));
    update_bounds(state);

    TraceRecord row;
    row.iter = state.T;
    row.elapsed_s = static_cast<double>(state.work_units) * kSecondsPerWorkUnit;
    row.ubd = state.ubd;
    row.lbd = state.lbd;
    row.pool_live = state.pool.live_count();
    row.subproblems_solved = solved;
    state.trace.push_back(row);

    // Step 5.
    if (state.lbd > state.ubd - epsilon) {
      result.status = GopStatus::Converged;
      break;
    }
  }

  result.iterations = state.T;
  result.lbd = state.lbd;
  result.ubd = state.ubd;
  result.incumbent_alpha = state.incumbent_alpha;
  result.incumbent_beta = state.incumbent_beta;
  result.warnings = state.warnings;
  result.trace = std::move(state.trace);

  // Final descent to the bottom of the incumbent's basin; a plain primal
  // heuristic that can only lower the upper bound.
  if (problem.coordinate_polish && result.incumbent_alpha.size() > 0) {
    Vector a = result.incumbent_alpha;
    Vector b = result.incumbent_beta;
    double prev = problem.objective(a, b);
    for (int sweep = 0; sweep < 500; ++sweep) {
      problem.coordinate_polish(a, b);
      const double cur = problem.objective(a, b);
      if (prev - cur < 1e-13 * std::max(1.0, std::abs(prev))) {
        prev = std::min(prev, cur);
        break;
      }
      prev = cur;
    }
    if (prev < result.ubd) {
      result.ubd = prev;
      result.incumbent_alpha = a;
      result.incumbent_beta = b;
    }
  }

  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace gopvi
