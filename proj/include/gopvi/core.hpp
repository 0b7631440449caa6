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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gopvi/rng.hpp"
#include "gopvi/types.hpp"

namespace gopvi {

// A box with optional unit-simplex groups over disjoint index sets. This is
// the compact feasible set for one decision-variable block.
struct VariableSpace {
  std::vector<std::string> names;
  Vector lower;
  Vector upper;
  std::vector<std::vector<int>> simplex_groups;

  int dim() const { return static_cast<int>(lower.size()); }

  // Enforces: strict finite bounds, disjoint in-range simplex groups, and
  // per-group feasibility (sum of lowers <= 1 <= sum of uppers, lowers >= 0).
  // Throws InvalidSpace.
  void validate() const;

  bool contains(const Vector& x, double tol = 1e-8) const;

  // Deterministic strictly feasible interior point (also a Slater witness).
  Vector interior_point() const;
};

// Multipliers of the constraints dualized into the Lagrange function.
// `lambda` follows the order of the block's equality constraints (simplex
// groups first, then extra affine equalities). `mu` carries the active
// inequality multipliers: for this interface these are always box bounds,
// identified by variable index and side.
struct MultiplierSet {
  Vector lambda;
  struct BoxMultiplier {
    int index = 0;
    bool at_upper = false;
    double value = 0.0;  // >= 0
  };
  std::vector<BoxMultiplier> mu;
};

// General affine equality row over one block: coeffs . x == rhs.
struct AffineConstraint {
  enum class Block { Alpha, Beta };
  Block block = Block::Alpha;
  Vector coeffs;
  double rhs = 0.0;
};

struct PrimalSolution {
  Vector alpha;
  MultiplierSet multipliers;
  double value = 0.0;
};

// A biconvex program min f(alpha, beta) over alpha in A, beta in B with
// per-block affine equality constraints. All evaluators must be pure; the
// struct is immutable after construction and shareable across threads.
struct BiconvexProblem {
  VariableSpace alpha;
  VariableSpace beta;

  std::function<double(const Vector&, const Vector&)> objective;
  std::function<Vector(const Vector&, const Vector&)> grad_alpha;
  std::function<Vector(const Vector&, const Vector&)> grad_beta;
  std::function<Matrix(const Vector&, const Vector&)> hess_alpha;
  std::function<Matrix(const Vector&, const Vector&)> hess_beta;

  // Equality constraints beyond the simplex groups already encoded in the
  // spaces. Each touches only one block.
  std::vector<AffineConstraint> extra_equalities;

  // Optional model-supplied accelerators.
  std::function<PrimalSolution(const Vector& beta)> primal_closed_form;

  // Affine decomposition of grad_alpha in beta at fixed alpha:
  // grad_alpha(alpha, beta) = G(alpha) * beta + g0(alpha).
  // Supplying it makes the engine's cuts exact; otherwise they are extracted
  // numerically and checked by superposition.
  std::function<std::pair<Matrix, Vector>(const Vector& alpha)> alpha_grad_affine_in_beta;

  // Split of the objective as f(alpha, beta) = c(alpha).beta + k(alpha) +
  // phi(beta) with phi convex and alpha-free. When available the relaxed-dual
  // subproblems carry every Lagrange surrogate as a linear row instead of a
  // separate nonlinear epigraph term, which keeps their cost flat in the
  // iteration count.
  struct BetaSplitObjective {
    std::function<std::pair<Vector, double>(const Vector& alpha)> affine;
    std::function<double(const Vector& beta)> phi;
    std::function<Vector(const Vector& beta)> phi_grad;
    std::function<Matrix(const Vector& beta)> phi_hess;
  };
  std::optional<BetaSplitObjective> beta_split;

  // One exact block-coordinate descent sweep respecting the boxes; used to
  // polish incumbents and oracle candidates.
  std::function<void(Vector& alpha, Vector& beta)> coordinate_polish;

  // Per-alpha-variable hint: does d f / d alpha_j depend on beta?
  std::vector<bool> connected_hint;
};

struct ValidationReport {
  double max_grad_rel_err_alpha = 0.0;
  double max_grad_rel_err_beta = 0.0;
  double min_eig_hess_alpha = 0.0;
  double min_eig_hess_beta = 0.0;
  Vector slater_alpha;
  Vector slater_beta;
  bool slater_ok = false;
  int n_probe = 0;
};

// Probes the problem at n_probe random feasible points: finite-difference
// gradient agreement, partial-Hessian PSD margins, and a Slater witness.
// Throws NonBiconvex if a partial Hessian eigenvalue drops below -1e-6 and
// GradientMismatch if a relative gradient error exceeds 1e-3.
ValidationReport validate_problem(const BiconvexProblem& problem, int n_probe, std::uint64_t seed);

// Deterministic sample inside the box satisfying every simplex group sum to
// within 1e-12.
Vector random_feasible_point(const VariableSpace& space, std::uint64_t seed);
Vector random_feasible_point(const VariableSpace& space, Rng& rng);

}  // namespace gopvi
