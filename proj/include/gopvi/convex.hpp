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

#include <functional>
#include <vector>

#include "gopvi/core.hpp"
#include "gopvi/types.hpp"

namespace gopvi {

// coeffs . x <= rhs
struct LinearInequality {
  Vector coeffs;
  double rhs = 0.0;
};

// Smooth convex scalar term c_r(x); in epigraph mode the kernel adds one
// variable v and the constraints c_r(x) <= v, minimizing f(x) + v.
struct EpigraphTerm {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hess;  // optional; finite differences of grad otherwise
};

struct ConvexProgram {
  VariableSpace space;

  // Smooth convex objective over x. May be absent when epigraph terms carry
  // the whole objective.
  std::function<double(const Vector&)> objective;
  std::function<Vector(const Vector&)> grad;
  std::function<Matrix(const Vector&)> hess;  // optional

  std::vector<AffineConstraint> extra_equalities;  // block tag ignored here
  std::vector<LinearInequality> linear_inequalities;
  std::vector<EpigraphTerm> epigraph_terms;

  bool affine_objective = false;  // set by solve_lp
};

enum class SolveStatus { Optimal, Infeasible, IterLimit, Unbounded };

struct KernelSolution {
  Vector x_star;          // primal point (epigraph variable not included)
  double objective_value = 0.0;
  double epigraph_value = 0.0;  // v at the optimum, when epigraph terms exist
  MultiplierSet multipliers;    // lambda: simplex groups then extra equalities
  Vector ineq_multipliers;      // one per linear inequality
  Vector epi_multipliers;       // one per epigraph term
  SolveStatus status = SolveStatus::Optimal;
  double kkt_residual = 0.0;
  int newton_steps = 0;                // deterministic work counter
  std::vector<double> objective_trace; // objective after each centering stage
};

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::IterLimit: return "IterLimit";
    case SolveStatus::Unbounded: return "Unbounded";
  }
  return "?";
}

struct SolveOptions {
  double tol = 1e-8;
  int max_iterations = 500;   // total Newton steps across the barrier path
  double feas_slack = 1e-9;   // phase-1 slack below which the set is empty
};

// Log-barrier path following with equality-constrained Newton centering and a
// final active-set polish. Returns multipliers satisfying stationarity of the
// Lagrangian at x_star to kkt_residual.
KernelSolution solve_convex(const ConvexProgram& program, const Vector& x0, const SolveOptions& opts = {});

// Same machinery restricted to affine objectives; adds Unbounded detection.
KernelSolution solve_lp(const ConvexProgram& program, const SolveOptions& opts = {});

// Euclidean projection onto the unit simplex (components >= 0, sum == 1).
Vector project_simplex(const Vector& v);

// Euclidean projection onto {x : lo <= x <= hi, sum x == 1} by bisection on
// the shift multiplier. Requires sum(lo) <= 1 <= sum(hi).
Vector project_box_simplex(const Vector& v, const Vector& lo, const Vector& hi);

// Largest slack s such that cuts coeffs.x + s <= rhs admit x in the space;
// returns the witness x. Used to decide relaxed-dual subproblem feasibility.
struct Phase1Result {
  double slack = 0.0;
  Vector x;
  int newton_steps = 0;
};
Phase1Result max_slack_point(const VariableSpace& space,
                             const std::vector<AffineConstraint>& extra_equalities,
                             const std::vector<LinearInequality>& cuts, const SolveOptions& opts = {});

}  // namespace gopvi
