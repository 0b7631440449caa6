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

#include "gopvi/core.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "gopvi/convex.hpp"

namespace gopvi {

void VariableSpace::validate() const {
  const int n = dim();
  if (upper.size() != n || (names.size() != 0 && static_cast<int>(names.size()) != n))
    throw InvalidSpace("variable space field sizes disagree");
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(lower[j]) || !std::isfinite(upper[j]) || !(lower[j] < upper[j])) {
      std::ostringstream os;
      os << "bounds for variable " << j << " must be finite with lower < upper";
      throw InvalidSpace(os.str());
    }
  }
  std::set<int> seen;
  for (const auto& group : simplex_groups) {
    if (group.empty()) throw InvalidSpace("empty simplex group");
    double lo_sum = 0.0, hi_sum = 0.0;
    for (int j : group) {
      if (j < 0 || j >= n) throw InvalidSpace("simplex index out of range");
      if (!seen.insert(j).second) throw InvalidSpace("simplex groups overlap");
      if (lower[j] < 0.0) throw InvalidSpace("simplex variable with negative lower bound");
      lo_sum += lower[j];
      hi_sum += upper[j];
    }
    if (lo_sum > 1.0 + 1e-12 || hi_sum < 1.0 - 1e-12)
      throw InvalidSpace("simplex group infeasible against its box");
  }
}

bool VariableSpace::contains(const Vector& x, double tol) const {
  if (x.size() != dim()) return false;
  for (int j = 0; j < dim(); ++j)
    if (x[j] < lower[j] - tol || x[j] > upper[j] + tol) return false;
  for (const auto& group : simplex_groups) {
    double s = 0.0;
    for (int j : group) s += x[j];
    if (std::abs(s - 1.0) > tol) return false;
  }
  return true;
}

Vector VariableSpace::interior_point() const {
  Vector x(dim());
  for (int j = 0; j < dim(); ++j) x[j] = 0.5 * (lower[j] + upper[j]);
  for (const auto& group : simplex_groups) {
    // Scale along the segment from the lower corner towards the upper corner
    // until the group sums to one; strictly interior whenever the group is
    // non-degenerate.
    double lo_sum = 0.0, width = 0.0;
    for (int j : group) {
      lo_sum += lower[j];
      width += upper[j] - lower[j];
    }
    const double s = (1.0 - lo_sum) / width;
    for (int j : group) x[j] = lower[j] + s * (upper[j] - lower[j]);
  }
  return x;
}

Vector random_feasible_point(const VariableSpace& space, Rng& rng) {
  Vector x(space.dim());
  for (int j = 0; j < space.dim(); ++j) x[j] = rng.uniform(space.lower[j], space.upper[j]);
  for (const auto& group : space.simplex_groups) {
    Vector v(group.size()), lo(group.size()), hi(group.size());
    for (size_t i = 0; i < group.size(); ++i) {
      v[i] = rng.uniform();
      lo[i] = space.lower[group[i]];
      hi[i] = space.upper[group[i]];
    }
    v /= v.sum();
    const Vector p = project_box_simplex(v, lo, hi);
    for (size_t i = 0; i < group.size(); ++i) x[group[i]] = p[i];
  }
  return x;
}

Vector random_feasible_point(const VariableSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  return random_feasible_point(space, rng);
}

namespace {

// Points pulled slightly into the interior so central differences stay in the
// domain of the callbacks.
Vector probe_point(const VariableSpace& space, Rng& rng) {
  VariableSpace shrunk = space;
  for (int j = 0; j < space.dim(); ++j) {
    const double margin = 1e-3 * (space.upper[j] - space.lower[j]);
    shrunk.lower[j] += margin;
    shrunk.upper[j] -= margin;
  }
  return random_feasible_point(shrunk, rng);
}

double grad_rel_err(const std::function<double(const Vector&)>& f, const Vector& g, const Vector& x,
                    double h) {
  Vector fd(x.size());
  Vector xp = x;
  for (int j = 0; j < x.size(); ++j) {
    const double x0 = x[j];
    xp[j] = x0 + h;
    const double fp = f(xp);
    xp[j] = x0 - h;
    const double fm = f(xp);
    xp[j] = x0;
    fd[j] = (fp - fm) / (2.0 * h);
  }
  const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
  return (g - fd).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

ValidationReport validate_problem(const BiconvexProblem& problem, int n_probe, std::uint64_t seed) {
  problem.alpha.validate();
  problem.beta.validate();
  ValidationReport report;
  report.n_probe = n_probe;
  report.min_eig_hess_alpha = std::numeric_limits<double>::infinity();
  report.min_eig_hess_beta = std::numeric_limits<double>::infinity();

  report.slater_alpha = problem.alpha.interior_point();
  report.slater_beta = problem.beta.interior_point();
  report.slater_ok =
      problem.alpha.contains(report.slater_alpha, 1e-9) && problem.beta.contains(report.slater_beta, 1e-9);

  Rng rng(seed);
  const double h = 1e-6;
  for (int p = 0; p < n_probe; ++p) {
    const Vector a = probe_point(problem.alpha, rng);
    const Vector b = probe_point(problem.beta, rng);

    const double ea = grad_rel_err([&](const Vector& x) { return problem.objective(x, b); },
                                   problem.grad_alpha(a, b), a, h);
    const double eb = grad_rel_err([&](const Vector& x) { return problem.objective(a, x); },
                                   problem.grad_beta(a, b), b, h);
    report.max_grad_rel_err_alpha = std::max(report.max_grad_rel_err_alpha, ea);
    report.max_grad_rel_err_beta = std::max(report.max_grad_rel_err_beta, eb);

    const Matrix ha = problem.hess_alpha(a, b);
    const Matrix hb = problem.hess_beta(a, b);
    Eigen::SelfAdjointEigenSolver<Matrix> es_a(0.5 * (ha + ha.transpose()));
    Eigen::SelfAdjointEigenSolver<Matrix> es_b(0.5 * (hb + hb.transpose()));
    report.min_eig_hess_alpha = std::min(report.min_eig_hess_alpha, es_a.eigenvalues().minCoeff());
    report.min_eig_hess_beta = std::min(report.min_eig_hess_beta, es_b.eigenvalues().minCoeff());
  }

  if (report.min_eig_hess_alpha < -1e-6 || report.min_eig_hess_beta < -1e-6)
    throw NonBiconvex("partial Hessian has a negative eigenvalue beyond tolerance");
  if (report.max_grad_rel_err_alpha > 1e-3 || report.max_grad_rel_err_beta > 1e-3)
    throw GradientMismatch("analytic gradient disagrees with finite differences");
  return report;
}

}  // namespace gopvi
