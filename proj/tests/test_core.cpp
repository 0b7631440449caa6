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

#include "gopvi/core.hpp"
#include "gopvi/models.hpp"

using namespace gopvi;

namespace {

Dataset minimal_dataset() {
  Dataset d;
  d.y = (Vector(4) << -10.0, -10.0, 5.0, 25.0).finished();
  return d;
}

// Bilinear toy: f(a, b) = a*b on [-1,1]^2. Both partial Hessians vanish, so
// it is biconvex even though it is jointly indefinite.
BiconvexProblem bilinear_problem() {
  BiconvexProblem p;
  p.alpha.lower = Vector::Constant(1, -1.0);
  p.alpha.upper = Vector::Constant(1, 1.0);
  p.beta.lower = Vector::Constant(1, -1.0);
  p.beta.upper = Vector::Constant(1, 1.0);
  p.objective = [](const Vector& a, const Vector& b) { return a[0] * b[0]; };
  p.grad_alpha = [](const Vector&, const Vector& b) { return Vector(Vector::Constant(1, b[0])); };
  p.grad_beta = [](const Vector& a, const Vector&) { return Vector(Vector::Constant(1, a[0])); };
  p.hess_alpha = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
  p.hess_beta = [](const Vector&, const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
  return p;
}

}  // namespace

TEST_CASE("space validation rejects bad boxes and groups") {
  VariableSpace s;
  s.lower = (Vector(2) << 0.0, 1.0).finished();
  s.upper = (Vector(2) << 1.0, 1.0).finished();
  CHECK_THROWS_AS(s.validate(), InvalidSpace);

  s.upper[1] = 2.0;
  s.simplex_groups.push_back({0, 0});
  CHECK_THROWS_AS(s.validate(), InvalidSpace);

  s.simplex_groups = {{0, 1}};
  s.lower[1] = 1.5;  // group lower sum exceeds one
  CHECK_THROWS_AS(s.validate(), InvalidSpace);
}

TEST_CASE("random feasible point obeys the simplex and is deterministic") {
  VariableSpace s;
  s.lower = Vector::Constant(2, 0.0);
  s.upper = Vector::Constant(2, 1.0);
  s.simplex_groups.push_back({0, 1});
  const Vector a = random_feasible_point(s, 42);
  const Vector b = random_feasible_point(s, 42);
  CHECK(std::abs(a.sum() - 1.0) < 1e-12);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("random feasible point stays inside a negative box") {
  VariableSpace s;
  s.lower = Vector::Constant(1, -50.0);
  s.upper = Vector::Constant(1, -1e-4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vector x = random_feasible_point(s, seed);
    CHECK(x[0] >= -50.0);
    CHECK(x[0] <= -1e-4);
  }
}

TEST_CASE("point mass instance validates as biconvex at 100 probes") {
  const auto problem = build_problem({ModelKind::BgmmPointMass, 2}, minimal_dataset());
  const auto report = validate_problem(problem, 100, 7);
  CHECK(report.min_eig_hess_alpha >= -1e-8);
  CHECK(report.min_eig_hess_beta >= -1e-8);
  CHECK(report.slater_ok);
  CHECK(report.max_grad_rel_err_alpha <= 1e-4);
  CHECK(report.max_grad_rel_err_beta <= 1e-4);
}

TEST_CASE("bilinear objective is accepted: both partial Hessians vanish") {
  const auto report = validate_problem(bilinear_problem(), 25, 3);
  CHECK(report.min_eig_hess_alpha == doctest::Approx(0.0));
  CHECK(report.min_eig_hess_beta == doctest::Approx(0.0));
}

TEST_CASE("gaussian approximation gradients match finite differences") {
  const auto problem = build_problem({ModelKind::BgmmGaussian, 2}, minimal_dataset());
  const auto report = validate_problem(problem, 100, 11);
  CHECK(report.max_grad_rel_err_alpha <= 1e-4);
  CHECK(report.max_grad_rel_err_beta <= 1e-4);
}

TEST_CASE("a problem with a wrong gradient is rejected") {
  auto p = bilinear_problem();
  p.grad_alpha = [](const Vector&, const Vector& b) { return Vector(Vector::Constant(1, -b[0])); };
  CHECK_THROWS_AS(validate_problem(p, 10, 1), GradientMismatch);
}

TEST_CASE("equality constraints evaluate affine under superposition") {
  const auto problem = build_problem({ModelKind::BgmmPointMass, 2}, minimal_dataset());
  // h(x) = sum over each simplex group minus one; affine by construction, the
  // superposition identity h(x+y) - h(0) = (h(x)-h(0)) + (h(y)-h(0)) must
  // hold exactly.
  auto h = [&](const Vector& x) {
    Vector out(problem.beta.simplex_groups.size());
    for (size_t g = 0; g < problem.beta.simplex_groups.size(); ++g) {
      double s = -1.0;
      for (int j : problem.beta.simplex_groups[g]) s += x[j];
      out[static_cast<int>(g)] = s;
    }
    return out;
  };
  Rng rng(9);
  const int nb = problem.beta.dim();
  Vector x(nb), y(nb);
  for (int i = 0; i < nb; ++i) {
    x[i] = rng.uniform(-1.0, 1.0);
    y[i] = rng.uniform(-1.0, 1.0);
  }
  const Vector zero = Vector::Zero(nb);
  const Vector lhs = h(x + y) - h(zero);
  const Vector rhs = (h(x) - h(zero)) + (h(y) - h(zero));
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}
