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

#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "gopvi/convex.hpp"
#include "gopvi/core.hpp"
#include "gopvi/types.hpp"

namespace gopvi {

// Lagrange function of iteration t linearized in alpha about alpha_t:
//   L(alpha, beta)|lin = Lconst(beta) + sum_j g_j(beta) (alpha_j - alpha_t_j)
// with g_j(beta) = cut_A.row(j) . beta + cut_b[j] (affine; when the model's
// gradient is not affine in beta the whole function is linearized in beta
// about beta_t first, which keeps it a valid underestimator).
struct LinearizedLagrange {
  int t = 0;
  Vector alpha_t;
  Vector beta_t;
  MultiplierSet multipliers;
  double primal_value = 0.0;

  std::vector<int> connected;  // sorted alpha indices with beta-dependent g_j
  Matrix cut_A;                // |alpha| x |beta|
  Vector cut_b;                // |alpha|
  bool beta_linearized = false;

  // Split form of the constant part (see BiconvexProblem::beta_split):
  // const_value(beta) = split_coeffs . beta + split_const + phi(beta).
  bool has_split = false;
  Vector split_coeffs;
  double split_const = 0.0;

  std::function<double(const Vector&)> const_value;  // L(alpha_t, beta)
  std::function<Vector(const Vector&)> const_grad;
  std::function<Matrix(const Vector&)> const_hess;

  double cut_value(int j, const Vector& beta) const { return cut_A.row(j).dot(beta) + cut_b[j]; }
};

// Per connected variable: 0 = Lower bound, 1 = Upper bound. Ordered like
// LinearizedLagrange::connected.
using BoundCombination = std::vector<std::uint8_t>;

struct QualifyingCut {
  int t = 0;
  int j = 0;       // alpha index
  int sense = +1;  // +1: g_j(beta) >= 0 (alpha_j at Lower); -1: g_j(beta) <= 0 (Upper)
  Vector a;
  double b = 0.0;
};

struct SurrogateAndCuts {
  // surrogate(beta) = const_value(beta) + lin_coeffs . beta + lin_offset
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hess;
  Vector lin_coeffs;
  double lin_offset = 0.0;
  std::vector<QualifyingCut> cuts;

  // When the problem's objective splits, surrogate(beta) = split_row_a . beta
  // + split_row_b + phi(beta), so the epigraph constraint is a linear row in
  // (beta, w) with w = v - phi(beta).
  bool has_split = false;
  Vector split_row_a;
  double split_row_b = 0.0;
};

SurrogateAndCuts build_cuts(const LinearizedLagrange& lin, const BoundCombination& combo,
                            const VariableSpace& alpha_space);

struct PoolKey {
  int t = 0;
  BoundCombination combo;
  auto operator<=>(const PoolKey&) const = default;
};

struct PoolEntry {
  double v = 0.0;
  Vector beta;
  // The (t, combination) constraint blocks that defined this subproblem; its
  // refinement at a later iteration restricts exactly this cell, which keeps
  // the live pool a cover of the beta space (and the pool minimum a valid
  // global lower bound).
  std::vector<std::pair<int, BoundCombination>> blocks;
};

// Stored relaxed-dual solutions: (T, B) -> (v_B, beta) or null for an
// infeasible subproblem. Consumed keys are never selected again.
class SolutionPool {
 public:
  void store(const PoolKey& key, std::optional<PoolEntry> entry);
  // Smallest live v; ties resolved by (t, lexicographic combo). Marks the
  // entry consumed. Throws PoolExhausted when no live entry remains.
  std::pair<PoolKey, PoolEntry> consume_min();
  int live_count() const;
  bool has_live() const;
  const std::map<PoolKey, std::optional<PoolEntry>>& entries() const { return entries_; }

 private:
  std::map<PoolKey, std::optional<PoolEntry>> entries_;
  std::set<PoolKey> consumed_;
};

struct TraceRecord {
  int iter = 0;
  double elapsed_s = 0.0;  // deterministic cost-model time (see README)
  double ubd = 0.0;
  double lbd = 0.0;
  int pool_live = 0;
  int subproblems_solved = 0;
};

struct IterationLimits {
  int max_iterations = 200;
  double kernel_tol = 1e-8;
  int kernel_max_iterations = 500;
  int threads = 0;  // 0: hardware concurrency
};

enum class GopStatus { Converged, IterLimit };

struct GopResult {
  GopStatus status = GopStatus::Converged;
  double ubd = 0.0;
  double lbd = 0.0;
  Vector incumbent_alpha;
  Vector incumbent_beta;
  int iterations = 0;
  int warnings = 0;  // relaxed-dual subproblems lost to kernel iteration caps
  std::vector<TraceRecord> trace;
  double wall_time_s = 0.0;
};

struct GopState {
  int T = 0;
  double ubd = std::numeric_limits<double>::infinity();
  double lbd = -std::numeric_limits<double>::infinity();
  Vector beta_current;
  std::vector<LinearizedLagrange> history;
  SolutionPool pool;
  Vector incumbent_alpha;
  Vector incumbent_beta;
  std::vector<std::pair<int, BoundCombination>> lineage;  // blocks of the consumed cell
  std::vector<TraceRecord> trace;
  int warnings = 0;
  long long work_units = 0;  // kernel Newton steps, for the cost-model clock
};

// Step 1. Closed form when available (verified against the box), kernel
// otherwise.
PrimalSolution solve_primal(const BiconvexProblem& problem, const Vector& beta_t,
                            const IterationLimits& limits = {});

// Builds the iteration-T linearization at (alpha_t, beta_t).
LinearizedLagrange build_linearization(const BiconvexProblem& problem, int t, const PrimalSolution& primal,
                                       const Vector& beta_t);

std::vector<int> connected_variables(const LinearizedLagrange& lin);

// Step 2. For each past iteration the unique bound combination whose
// qualifying cuts hold at beta_T; ties on a cut boundary resolve to Lower.
std::vector<std::pair<int, BoundCombination>> select_previous_lagrange(
    const std::vector<LinearizedLagrange>& history, const Vector& beta_T);

// Step 3. Solves the 2^|connected| subproblems of iteration T and stores
// results (or nulls) into the pool. Thread count never changes the results.
void solve_relaxed_dual_fan(const BiconvexProblem& problem, GopState& state,
                            const LinearizedLagrange& lin_T, const IterationLimits& limits,
                            int* subproblems_solved);

// Step 4. Pool minimum -> (lbd candidate, next beta); consumes the entry.
std::pair<double, Vector> update_bounds(GopState& state);

// Steps 0-5 driver.
GopResult gop_solve(const BiconvexProblem& problem, const Vector& beta1, double epsilon,
                    const IterationLimits& limits = {});

}  // namespace gopvi
