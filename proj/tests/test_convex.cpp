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

#include <doctest.h>

#include <cmath>

#include "gopvi/convex.hpp"
#include "gopvi/rng.hpp"

using namespace gopvi;

namespace {

VariableSpace box(std::initializer_list<double> lo, std::initializer_list<double> hi) {
  VariableSpace s;
  s.lower = Eigen::Map<const Vector>(std::data(lo), static_cast<Eigen::Index>(lo.size()));
  s.upper = Eigen::Map<const Vector>(std::data(hi), static_cast<Eigen::Index>(hi.size()));
  return s;
}

ConvexProgram quadratic_over_simplex(int n) {
  ConvexProgram p;
  p.space.lower = Vector::Constant(n, 0.0);
  p.space.upper = Vector::Constant(n, 1.0);
  std::vector<int> group(n);
  for (int i = 0; i < n; ++i) group[i] = i;
  p.space.simplex_groups.push_back(group);
  p.objective = [](const Vector& x) { return x.squaredNorm(); };
  p.grad = [](const Vector& x) { return Vector(2.0 * x); };
  p.hess = [](const Vector& x) { return Matrix(2.0 * Matrix::Identity(x.size(), x.size())); };
  return p;
}

// Stationarity residual recomputed from the returned multipliers, mirroring
// what the kernel reports.
double recompute_kkt(const ConvexProgram& p, const KernelSolution& sol) {
  Vector r = p.grad(sol.x_star);
  int eq = 0;
  for (const auto& group : p.space.simplex_groups) {
    for (int j : group) r[j] += sol.multipliers.lambda[eq];
    ++eq;
  }
  for (const auto& m : sol.multipliers.mu) r[m.index] += m.at_upper ? m.value : -m.value;
  for (int i = 0; i < sol.ineq_multipliers.size(); ++i)
    r += sol.ineq_multipliers[i] * p.linear_inequalities[i].coeffs;
  double res = r.cwiseAbs().maxCoeff();
  for (const auto& group : p.space.simplex_groups) {
    double s = -1.0;
    for (int j : group) s += sol.x_star[j];
    res = std::max(res, std::abs(s));
  }
  return res;
}

}  // namespace

TEST_CASE("minimum norm over the 2-simplex is the centroid") {
  auto p = quadratic_over_simplex(2);
  const auto sol = solve_convex(p, Vector::Zero(2));
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.x_star[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(sol.x_star[1] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(sol.objective_value == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("kkt residual matches an external recomputation") {
  auto p = quadratic_over_simplex(3);
  p.objective = [](const Vector& x) { return x.squaredNorm() + x[0]; };
  p.grad = [](const Vector& x) {
    Vector g = 2.0 * x;
    g[0] += 1.0;
    return g;
  };
  const auto sol = solve_convex(p, Vector::Zero(3));
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(std::abs(recompute_kkt(p, sol) - sol.kkt_residual) < 1e-10);
  CHECK(sol.kkt_residual < 1e-8);
}

TEST_CASE("epigraph mode: two parabolas meet at their crossing") {
  // Oracle: 1-d grid search at step 1e-4 over max(x^2, (x-2)^2).
  double best_x = 0.0, best_v = 1e300;
  for (double x = -5.0; x <= 5.0; x += 1e-4) {
    const double v = std::max(x * x, (x - 2.0) * (x - 2.0));
    if (v < best_v) {
      best_v = v;
      best_x = x;
    }
  }
  CHECK(best_x == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(best_v == doctest::Approx(1.0).epsilon(1e-3));

  ConvexProgram p;
  p.space = box({-5.0}, {5.0});
  EpigraphTerm c1, c2;
  c1.value = [](const Vector& x) { return x[0] * x[0]; };
  c1.grad = [](const Vector& x) { return Vector(Vector::Constant(1, 2.0 * x[0])); };
  c1.hess = [](const Vector&) { return Matrix(Matrix::Constant(1, 1, 2.0)); };
  c2.value = [](const Vector& x) { return (x[0] - 2.0) * (x[0] - 2.0); };
  c2.grad = [](const Vector& x) { return Vector(Vector::Constant(1, 2.0 * (x[0] - 2.0))); };
  c2.hess = [](const Vector&) { return Matrix(Matrix::Constant(1, 1, 2.0)); };
  p.epigraph_terms = {c1, c2};

  const auto sol = solve_convex(p, Vector::Constant(1, -3.0));
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.x_star[0] == doctest::Approx(best_x).epsilon(1e-4));
  CHECK(sol.epigraph_value == doctest::Approx(best_v).epsilon(1e-5));
}

TEST_CASE("lp: box vertex") {
  ConvexProgram p;
  p.space = box({-1.0}, {1.0});
  p.objective = [](const Vector& x) { return x[0]; };
  p.grad = [](const Vector&) { return Vector(Vector::Constant(1, 1.0)); };
  p.hess = [](const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
  const auto sol = solve_lp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.x_star[0] == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("lp: simplex argmin vertex") {
  ConvexProgram p;
  p.space.lower = Vector::Constant(3, 0.0);
  p.space.upper = Vector::Constant(3, 1.0);
  p.space.simplex_groups.push_back({0, 1, 2});
  const Vector c = (Vector(3) << 3.0, 1.0, 2.0).finished();
  p.objective = [c](const Vector& x) { return c.dot(x); };
  p.grad = [c](const Vector&) { return c; };
  p.hess = [](const Vector&) { return Matrix(Matrix::Zero(3, 3)); };
  const auto sol = solve_lp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.x_star[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(sol.x_star[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol.x_star[2] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("lp: intersection of two cuts") {
  // minimize -v subject to v <= 1-x, v <= x over x in [0,1]; v is a plain
  // variable here, not an epigraph one.
  ConvexProgram p;
  p.space = box({0.0, -1.0}, {1.0, 2.0});  // (x, v)
  const Vector c = (Vector(2) << 0.0, -1.0).finished();
  p.objective = [c](const Vector& x) { return c.dot(x); };
  p.grad = [c](const Vector&) { return c; };
  p.hess = [](const Vector&) { return Matrix(Matrix::Zero(2, 2)); };
  LinearInequality r1, r2;  // v + x <= 1 ; v - x <= 0
  r1.coeffs = (Vector(2) << 1.0, 1.0).finished();
  r1.rhs = 1.0;
  r2.coeffs = (Vector(2) << -1.0, 1.0).finished();
  r2.rhs = 0.0;
  p.linear_inequalities = {r1, r2};
  const auto sol = solve_lp(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.x_star[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(sol.x_star[1] == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("contradictory cuts are reported infeasible") {
  ConvexProgram p;
  p.space = box({0.0}, {1.0});
  p.objective = [](const Vector& x) { return x[0]; };
  p.grad = [](const Vector&) { return Vector(Vector::Constant(1, 1.0)); };
  p.hess = [](const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
  LinearInequality r1, r2;  // x <= 0.2 and -x <= -0.8
  r1.coeffs = Vector::Constant(1, 1.0);
  r1.rhs = 0.2;
  r2.coeffs = Vector::Constant(1, -1.0);
  r2.rhs = -0.8;
  p.linear_inequalities = {r1, r2};
  const auto sol = solve_convex(p, Vector::Constant(1, 0.5));
  CHECK(sol.status == SolveStatus::Infeasible);
}

TEST_CASE("solver independence across starting points") {
  auto p = quadratic_over_simplex(4);
  p.objective = [](const Vector& x) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += (i + 1) * x[i] * x[i];
    return acc;
  };
  p.grad = [](const Vector& x) {
    Vector g(x.size());
    for (int i = 0; i < x.size(); ++i) g[i] = 2.0 * (i + 1) * x[i];
    return g;
  };
  p.hess = [](const Vector& x) {
    Matrix h = Matrix::Zero(x.size(), x.size());
    for (int i = 0; i < x.size(); ++i) h(i, i) = 2.0 * (i + 1);
    return h;
  };
  Rng rng(11);
  double lo = 1e300, hi = -1e300;
  for (int s = 0; s < 10; ++s) {
    Vector x0(4);
    for (int i = 0; i < 4; ++i) x0[i] = rng.uniform();
    x0 /= x0.sum();
    const auto sol = solve_convex(p, x0);
    REQUIRE(sol.status == SolveStatus::Optimal);
    lo = std::min(lo, sol.objective_value);
    hi = std::max(hi, sol.objective_value);
  }
  CHECK(hi - lo < 10 * 1e-8);
}

TEST_CASE("central path objective is monotone non-increasing") {
  auto p = quadratic_over_simplex(3);
  Vector x0 = (Vector(3) << 0.7, 0.2, 0.1).finished();
  const auto sol = solve_convex(p, x0);
  REQUIRE(sol.objective_trace.size() > 1);
  for (size_t i = 1; i < sol.objective_trace.size(); ++i)
    CHECK(sol.objective_trace[i] <= sol.objective_trace[i - 1] + 1e-9);
}

TEST_CASE("degenerate singleton simplex is pinned") {
  ConvexProgram p;
  p.space = box({1e-6}, {1.0});
  p.space.simplex_groups.push_back({0});
  p.objective = [](const Vector& x) { return (x[0] - 0.3) * (x[0] - 0.3); };
  p.grad = [](const Vector& x) { return Vector(Vector::Constant(1, 2.0 * (x[0] - 0.3))); };
  p.hess = [](const Vector&) { return Matrix(Matrix::Constant(1, 1, 2.0)); };
  const auto sol = solve_convex(p, Vector::Constant(1, 0.5));
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.x_star[0] == doctest::Approx(1.0));
}

TEST_CASE("simplex projection") {
  CHECK((project_simplex((Vector(2) << 0.3, 0.7).finished()) -
         (Vector(2) << 0.3, 0.7).finished())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((project_simplex((Vector(2) << 2.0, 0.0).finished()) -
         (Vector(2) << 1.0, 0.0).finished())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  const Vector p3 = project_simplex((Vector(3) << 0.4, 0.4, 0.4).finished());
  for (int i = 0; i < 3; ++i) CHECK(p3[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(std::abs(p3.sum() - 1.0) < 1e-12);
}

TEST_CASE("box simplex projection respects bounds and sums to one") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.raw() % 5);
    Vector v(n), lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
      v[i] = rng.uniform(-2.0, 2.0);
      lo[i] = rng.uniform(0.0, 0.2 / n);
      hi[i] = rng.uniform(0.5, 1.0);
    }
    const Vector x = project_box_simplex(v, lo, hi);
    CHECK(std::abs(x.sum() - 1.0) < 1e-12);
    for (int i = 0; i < n; ++i) {
      CHECK(x[i] >= lo[i] - 1e-12);
      CHECK(x[i] <= hi[i] + 1e-12);
    }
  }
}

TEST_CASE("phase one slack detects empty and thin regions") {
  VariableSpace s = box({0.0, 0.0}, {1.0, 1.0});
  LinearInequality a, b;
  a.coeffs = (Vector(2) << 1.0, 0.0).finished();
  a.rhs = 0.3;
  b.coeffs = (Vector(2) << -1.0, 0.0).finished();
  b.rhs = -0.7;
  const auto infeas = max_slack_point(s, {}, {a, b});
  CHECK(infeas.slack <= 0.0);

  b.rhs = -0.1;
  const auto feas = max_slack_point(s, {}, {a, b});
  CHECK(feas.slack > 1e-3);
  CHECK(feas.x[0] > 0.1 - 1e-6);
  CHECK(feas.x[0] < 0.3 + 1e-6);
}
