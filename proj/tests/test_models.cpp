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
#include <fstream>

#include "gopvi/convex.hpp"
#include "gopvi/models.hpp"
#include "gopvi/oracle.hpp"

using namespace gopvi;

namespace {

Dataset minimal_dataset() {
  Dataset d;
  d.y = (Vector(4) << -10.0, -10.0, 5.0, 25.0).finished();
  return d;
}

VariationalParams hard_tau_split() {
  VariationalParams q;
  q.tau.resize(4, 2);
  q.tau << 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0;
  q.nu = Vector::Zero(2);
  return q;
}

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

TEST_CASE("single point, single cluster elbo vanishes term by term") {
  Dataset d;
  d.y = Vector::Zero(1);
  ModelParams p;
  p.pi = Vector::Ones(1);
  p.eta_m = -0.5;
  VariationalParams q;
  q.tau = Matrix::Ones(1, 1);
  q.nu = Vector::Zero(1);
  CHECK(elbo({ModelKind::BgmmPointMass, 1}, p, q, d) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("gaussian elbo approaches the point mass value plus its gamma terms") {
  const Dataset d = minimal_dataset();
  ModelParams p;
  p.pi = (Vector(2) << 0.4, 0.6).finished();
  p.eta_m = -0.25;
  VariationalParams q = hard_tau_split();
  q.nu = (Vector(2) << -9.0, 14.0).finished();
  const double pm = elbo({ModelKind::BgmmPointMass, 2}, p, q, d);

  const double g = 1e-8;
  q.gamma = Vector::Constant(2, g);
  const double gauss = elbo({ModelKind::BgmmGaussian, 2}, p, q, d);

  // Exact decomposition of the extra terms at equal (tau, pi, nu, eta).
  double extra = 0.0;
  for (int k = 0; k < 2; ++k) {
    double tcol = 0.0;
    for (int i = 0; i < 4; ++i) tcol += q.tau(i, k);
    extra += -0.5 * tcol * g + p.eta_m * g + 0.5 * (kLog2Pi + 1.0 + std::log(g));
  }
  CHECK(gauss - pm == doctest::Approx(extra).epsilon(1e-10));
  CHECK(gauss < pm);  // the vanishing-entropy limit diverges to -inf
}

TEST_CASE("full convention shifts by the dropped constants") {
  const Dataset d = minimal_dataset();
  ModelParams p;
  p.pi = (Vector(2) << 0.5, 0.5).finished();
  p.eta_m = -0.1;
  VariationalParams q = hard_tau_split();
  q.nu = (Vector(2) << -9.0, 14.0).finished();
  const double prop = elbo({ModelKind::BgmmPointMass, 2, ElboConvention::Proportional}, p, q, d);
  const double full = elbo({ModelKind::BgmmPointMass, 2, ElboConvention::Full}, p, q, d);
  CHECK(prop - full == doctest::Approx(0.5 * (4 + 2) * kLog2Pi).epsilon(1e-12));

  Dataset d1;
  d1.y = (Vector(2) << 0.5, 1.0).finished();
  ModelParams pg;
  pg.pi = (Vector(1) << 1.0).finished();
  VariationalParams qg;
  qg.tau = Matrix::Ones(2, 1);
  qg.nu = (Vector(1) << 0.7).finished();
  const double prop_g = elbo({ModelKind::Gmm, 1, ElboConvention::Proportional}, pg, qg, d1);
  const double full_g = elbo({ModelKind::Gmm, 1, ElboConvention::Full}, pg, qg, d1);
  CHECK(prop_g - full_g == doctest::Approx(0.5 * 2 * kLog2Pi).epsilon(1e-12));
}

TEST_CASE("domain errors where a log is taken") {
  const Dataset d = minimal_dataset();
  ModelParams p;
  p.pi = (Vector(2) << 0.0, 1.0).finished();
  p.eta_m = -0.1;
  VariationalParams q = hard_tau_split();
  q.nu = Vector::Zero(2);
  // tau(0,0) = 1 weights log pi_0 = log 0.
  CHECK_THROWS_AS(elbo({ModelKind::BgmmPointMass, 2}, p, q, d), DomainError);
  p.pi[0] = 0.5;
  p.pi[1] = 0.5;
  p.eta_m = 0.0;
  CHECK_THROWS_AS(elbo({ModelKind::BgmmPointMass, 2}, p, q, d), DomainError);
}

TEST_CASE("gradients vanish at the closed form and match finite differences") {
  const Dataset d = minimal_dataset();
  const ModelVariant variant{ModelKind::BgmmPointMass, 2};
  const auto problem = build_problem(variant, d);

  Vector beta = pack_beta(variant, {.pi = Vector::Ones(2), .eta_m = -0.1}, hard_tau_split(), 4);
  const auto primal = primal_closed_form(variant, beta, d);
  const Vector ga = problem.grad_alpha(primal.alpha, beta);
  // d/d nu at the closed-form nu is exactly zero.
  CHECK(std::abs(ga[0]) < 1e-10);
  CHECK(std::abs(ga[1]) < 1e-10);

  // d/d eta at eta = -K/(2 sum nu^2) is zero.
  ModelParams p;
  VariationalParams q;
  unpack(variant, primal.alpha, beta, 4, p, q);
  p.eta_m = -2.0 / (2.0 * q.nu.squaredNorm());
  const auto [ga2, gb2] = elbo_gradients(variant, p, q, d);
  CHECK(std::abs(gb2[8]) < 1e-10);

  // Finite differences across the interior of both blocks.
  Rng rng(3);
  std::vector<Vector> pts;
  VariableSpace shrink_a = problem.alpha, shrink_b = problem.beta;
  for (int j = 0; j < shrink_a.dim(); ++j) {
    const double m = 1e-2 * (shrink_a.upper[j] - shrink_a.lower[j]);
    shrink_a.lower[j] += m;
    shrink_a.upper[j] -= m;
  }
  for (int j = 0; j < shrink_b.dim(); ++j) {
    const double m = 1e-2 * (shrink_b.upper[j] - shrink_b.lower[j]);
    shrink_b.lower[j] += m;
    shrink_b.upper[j] -= m;
  }
  for (int t = 0; t < 25; ++t) {
    const Vector a = random_feasible_point(shrink_a, rng);
    const Vector b = random_feasible_point(shrink_b, rng);
    const double err_a = finite_diff_check(
        [&](const Vector& aa) { return problem.objective(aa, b); },
        [&](const Vector& aa) { return problem.grad_alpha(aa, b); }, {a}, 1e-6);
    const double err_b = finite_diff_check(
        [&](const Vector& bb) { return problem.objective(a, bb); },
        [&](const Vector& bb) { return problem.grad_beta(a, bb); }, {b}, 1e-6);
    CHECK(err_a <= 1e-6);
    CHECK(err_b <= 1e-6);
  }
}

TEST_CASE("primal closed form: shrunken means and simplex multiplier") {
  const Dataset d = minimal_dataset();
  const ModelVariant pm{ModelKind::BgmmPointMass, 2};
  Vector beta = pack_beta(pm, {.pi = Vector::Ones(2), .eta_m = -0.1}, hard_tau_split(), 4);
  const auto sol = primal_closed_form(pm, beta, d);
  CHECK(sol.alpha[2] == doctest::Approx(0.5).epsilon(1e-14));  // pi
  CHECK(sol.alpha[3] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(sol.alpha[0] == doctest::Approx(-20.0 / 2.2).epsilon(1e-14));  // nu_1
  CHECK(sol.alpha[1] == doctest::Approx(30.0 / 2.2).epsilon(1e-14));   // nu_2
  CHECK(sol.multipliers.lambda[0] == doctest::Approx(4.0));

  const ModelVariant ga{ModelKind::BgmmGaussian, 2};
  VariationalParams qg = hard_tau_split();
  qg.gamma = Vector::Ones(2);
  Vector beta_g = pack_beta(ga, {.pi = Vector::Ones(2), .eta_m = -0.1}, qg, 4);
  const auto sol_g = primal_closed_form(ga, beta_g, d);
  CHECK(sol_g.alpha[4] == doctest::Approx(1.0 / 2.2).epsilon(1e-14));
  CHECK(sol_g.alpha[5] == doctest::Approx(1.0 / 2.2).epsilon(1e-14));

  // K = 1: pi is pinned to one for any beta.
  const ModelVariant k1{ModelKind::BgmmPointMass, 1};
  VariationalParams q1;
  q1.tau = Matrix::Ones(4, 1);
  q1.nu = Vector::Zero(1);
  Vector beta1 = pack_beta(k1, {.pi = Vector::Ones(1), .eta_m = -0.3}, q1, 4);
  CHECK(primal_closed_form(k1, beta1, d).alpha[1] == doctest::Approx(1.0));
}

TEST_CASE("closed form agrees with the kernel at random betas") {
  const Dataset d = minimal_dataset();
  for (const ModelKind kind : {ModelKind::Gmm, ModelKind::BgmmPointMass, ModelKind::BgmmGaussian}) {
    const ModelVariant variant{kind, 2};
    const auto problem = build_problem(variant, d);
    Rng rng(17);
    for (int t = 0; t < 5; ++t) {
      const Vector beta = random_feasible_point(problem.beta, rng);
      const auto closed = primal_closed_form(variant, beta, d);

      ConvexProgram prog;
      prog.space = problem.alpha;
      prog.objective = [&](const Vector& a) { return problem.objective(a, beta); };
      prog.grad = [&](const Vector& a) { return problem.grad_alpha(a, beta); };
      prog.hess = [&](const Vector& a) { return problem.hess_alpha(a, beta); };
      const auto kernel = solve_convex(prog, problem.alpha.interior_point());
      REQUIRE(kernel.status == SolveStatus::Optimal);
      CHECK((kernel.x_star - closed.alpha).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("problem dimensions per variant") {
  const Dataset d = minimal_dataset();
  const auto pm = build_problem({ModelKind::BgmmPointMass, 2}, d);
  CHECK(pm.alpha.dim() == 4);
  CHECK(pm.beta.dim() == 9);
  const auto ga = build_problem({ModelKind::BgmmGaussian, 2}, d);
  CHECK(ga.alpha.dim() == 6);
  CHECK(ga.beta.dim() == 9);
  const auto gmm = build_problem({ModelKind::Gmm, 2}, d);
  CHECK(gmm.alpha.dim() == 4);
  CHECK(gmm.beta.dim() == 8);
}

TEST_CASE("hessian diagonals match their closed forms") {
  const Dataset d = minimal_dataset();
  const auto problem = build_problem({ModelKind::BgmmGaussian, 2}, d);
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    const Vector a = random_feasible_point(problem.alpha, rng);
    const Vector b = random_feasible_point(problem.beta, rng);
    const Matrix hb = problem.hess_beta(a, b);
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 2; ++k)
        CHECK(hb(i * 2 + k, i * 2 + k) == doctest::Approx(1.0 / b[i * 2 + k]).epsilon(1e-12));
    CHECK(hb(8, 8) == doctest::Approx(2.0 / (2.0 * b[8] * b[8])).epsilon(1e-12));
    const Matrix ha = problem.hess_alpha(a, b);
    double tcol0 = b[0] + b[2] + b[4] + b[6];
    CHECK(ha(0, 0) == doctest::Approx(tcol0 - 2.0 * b[8]).epsilon(1e-12));
    CHECK(ha(2, 2) == doctest::Approx(tcol0 / (a[2] * a[2])).epsilon(1e-12));
    CHECK(ha(4, 4) == doctest::Approx(0.5 / (a[4] * a[4])).epsilon(1e-12));
    // strictly diagonal
    CHECK((ha - Matrix(ha.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0);
    CHECK((hb - Matrix(hb.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("analytic likelihood and its maximizer") {
  const Dataset d = minimal_dataset();
  CHECK(mle_gamma(d) == doctest::Approx(211.5).epsilon(1e-14));

  // Golden-section search over (0, 1e4] as the independent 1-d oracle.
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 1e-9, b = 1e4;
  double c = b - phi * (b - a), e = a + phi * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (analytic_loglik(c, d) > analytic_loglik(e, d))
      b = e;
    else
      a = c;
    c = b - phi * (b - a);
    e = a + phi * (b - a);
  }
  CHECK(0.5 * (a + b) == doctest::Approx(211.5).epsilon(1e-6));

  Dataset single;
  single.y = Vector::Ones(1);
  CHECK(mle_gamma(single) == doctest::Approx(0.0));
  CHECK(analytic_loglik(1e-12, single) == doctest::Approx(-0.5 * kLog2Pi - 0.5).epsilon(1e-9));
  CHECK_THROWS_AS(analytic_loglik(-1.5, d), DomainError);
}

TEST_CASE("full-convention elbo is dominated by the analytic log-likelihood") {
  const Dataset d = minimal_dataset();
  const ModelVariant variant{ModelKind::BgmmPointMass, 2, ElboConvention::Full};
  const auto problem = build_problem(variant, d);
  Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    const Vector a = random_feasible_point(problem.alpha, rng);
    const Vector b = random_feasible_point(problem.beta, rng);
    ModelParams p;
    VariationalParams q;
    unpack(variant, a, b, 4, p, q);
    CHECK(elbo(variant, p, q, d) <= analytic_loglik(p.gamma_moment(), d) + 1e-9);
  }
}

TEST_CASE("dataset loader skips comments and blanks") {
  const char* path = "gopvi_test_dataset.txt";
  {
    std::ofstream out(path);
    out << "# minimal set\n-10\n\n-10\n5 # trailing comment\n25\n";
  }
  const Dataset d = Dataset::load(path);
  REQUIRE(d.n() == 4);
  CHECK(d.y[3] == 25.0);
  std::remove(path);
}
