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

#include "gopvi/convex.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>

namespace gopvi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Variables forced to a single value by a simplex group colliding with its
// box (singleton groups, or group bound sums hitting one).
struct Presolve {
  std::vector<int> free_of_full;   // free index -> full index
  std::vector<int> full_to_free;   // -1 when fixed
  Vector fixed_value;              // full size; meaningful where fixed
  std::vector<char> is_fixed;

  int n_free() const { return static_cast<int>(free_of_full.size()); }

  Vector expand(const Vector& z) const {
    Vector x = fixed_value;
    for (int i = 0; i < n_free(); ++i) x[free_of_full[i]] = z[i];
    return x;
  }
  Vector reduce(const Vector& x) const {
    Vector z(n_free());
    for (int i = 0; i < n_free(); ++i) z[i] = x[free_of_full[i]];
    return z;
  }
};

Presolve make_presolve(const VariableSpace& space) {
  const int n = space.dim();
  Presolve p;
  p.fixed_value = Vector::Zero(n);
  p.is_fixed.assign(n, 0);
  for (const auto& group : space.simplex_groups) {
    double lo_sum = 0.0, hi_sum = 0.0;
    for (int j : group) {
      lo_sum += space.lower[j];
      hi_sum += space.upper[j];
    }
    if (group.size() == 1) {
      p.is_fixed[group[0]] = 1;
      p.fixed_value[group[0]] = 1.0;
    } else if (lo_sum >= 1.0 - 1e-11) {
      for (int j : group) {
        p.is_fixed[j] = 1;
        p.fixed_value[j] = space.lower[j];
      }
    } else if (hi_sum <= 1.0 + 1e-11) {
      for (int j : group) {
        p.is_fixed[j] = 1;
        p.fixed_value[j] = space.upper[j];
      }
    }
  }
  p.full_to_free.assign(n, -1);
  for (int j = 0; j < n; ++j) {
    if (!p.is_fixed[j]) {
      p.full_to_free[j] = static_cast<int>(p.free_of_full.size());
      p.free_of_full.push_back(j);
    }
  }
  return p;
}

// The reduced smooth program the barrier loop works on. Variable layout:
// z = [free x vars, optional epigraph v].
struct Reduced {
  const ConvexProgram* prog = nullptr;
  Presolve pre;
  int nx = 0;     // free x vars
  int nz = 0;     // nx + (has_v ? 1 : 0)
  bool has_v = false;

  Vector lo, hi;             // nz; +-inf allowed for v
  Matrix A;                  // equality rows over z
  Vector b;
  Matrix C;                  // linear inequality rows C z <= d
  Vector d;

  Vector full_x(const Vector& z) const { return pre.expand(z.head(nx)); }

  double f(const Vector& z) const {
    double val = prog->objective ? prog->objective(full_x(z)) : 0.0;
    if (has_v) val += z[nz - 1];
    return val;
  }
  Vector fgrad(const Vector& z) const {
    Vector g = Vector::Zero(nz);
    if (prog->grad) {
      const Vector gx = prog->grad(full_x(z));
      for (int i = 0; i < nx; ++i) g[i] = gx[pre.free_of_full[i]];
    }
    if (has_v) g[nz - 1] += 1.0;
    return g;
  }
  Matrix fhess(const Vector& z) const {
    Matrix h = Matrix::Zero(nz, nz);
    if (!prog->grad) return h;
    const Vector x = full_x(z);
    if (prog->hess) {
      const Matrix hx = prog->hess(x);
      for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nx; ++j) h(i, j) = hx(pre.free_of_full[i], pre.free_of_full[j]);
      return h;
    }
    // finite differences of the gradient
    const double step = 1e-6;
    Vector zp = z;
    for (int i = 0; i < nx; ++i) {
      zp[i] = z[i] + step;
      const Vector gp = fgrad(zp);
      zp[i] = z[i] - step;
      const Vector gm = fgrad(zp);
      zp[i] = z[i];
      h.col(i) = (gp - gm) / (2.0 * step);
    }
    h = 0.5 * (h + h.transpose()).eval();
    return h;
  }

  double epi_value(int r, const Vector& z) const { return prog->epigraph_terms[r].value(full_x(z)); }
  Vector epi_grad(int r, const Vector& z) const {
    Vector g = Vector::Zero(nz);
    const Vector gx = prog->epigraph_terms[r].grad(full_x(z));
    for (int i = 0; i < nx; ++i) g[i] = gx[pre.free_of_full[i]];
    return g;
  }
  Matrix epi_hess(int r, const Vector& z) const {
    Matrix h = Matrix::Zero(nz, nz);
    const auto& term = prog->epigraph_terms[r];
    const Vector x = full_x(z);
    if (term.hess) {
      const Matrix hx = term.hess(x);
      for (int i = 0; i < nx; ++i)
        for (int j = 0; j < nx; ++j) h(i, j) = hx(pre.free_of_full[i], pre.free_of_full[j]);
      return h;
    }
    const double step = 1e-6;
    Vector zp = z;
    for (int i = 0; i < nx; ++i) {
      zp[i] = z[i] + step;
      const Vector gp = epi_grad(r, zp);
      zp[i] = z[i] - step;
      const Vector gm = epi_grad(r, zp);
      zp[i] = z[i];
      for (int j = 0; j < nz; ++j) h(j, i) = (gp[j] - gm[j]) / (2.0 * step);
    }
    h = 0.5 * (h + h.transpose()).eval();
    return h;
  }
};

Reduced make_reduced(const ConvexProgram& prog) {
  Reduced r;
  r.prog = &prog;
  r.pre = make_presolve(prog.space);
  r.nx = r.pre.n_free();
  r.has_v = !prog.epigraph_terms.empty();
  r.nz = r.nx + (r.has_v ? 1 : 0);

  r.lo = Vector::Constant(r.nz, -kInf);
  r.hi = Vector::Constant(r.nz, kInf);
  for (int i = 0; i < r.nx; ++i) {
    r.lo[i] = prog.space.lower[r.pre.free_of_full[i]];
    r.hi[i] = prog.space.upper[r.pre.free_of_full[i]];
  }

  std::vector<Vector> eq_rows;
  std::vector<double> eq_rhs;
  for (const auto& group : prog.space.simplex_groups) {
    Vector row = Vector::Zero(r.nz);
    double rhs = 1.0;
    int nfree = 0;
    for (int j : group) {
      if (r.pre.is_fixed[j]) {
        rhs -= r.pre.fixed_value[j];
      } else {
        row[r.pre.full_to_free[j]] = 1.0;
        ++nfree;
      }
    }
    if (nfree > 0) {
      eq_rows.push_back(row);
      eq_rhs.push_back(rhs);
    }
  }
  for (const auto& eq : prog.extra_equalities) {
    Vector row = Vector::Zero(r.nz);
    double rhs = eq.rhs;
    int nfree = 0;
    for (int j = 0; j < eq.coeffs.size(); ++j) {
      if (eq.coeffs[j] == 0.0) continue;
      if (r.pre.is_fixed[j]) {
        rhs -= eq.coeffs[j] * r.pre.fixed_value[j];
      } else {
        row[r.pre.full_to_free[j]] = eq.coeffs[j];
        ++nfree;
      }
    }
    if (nfree > 0) {
      eq_rows.push_back(row);
      eq_rhs.push_back(rhs);
    }
  }
  r.A.resize(eq_rows.size(), r.nz);
  r.b.resize(eq_rows.size());
  for (size_t i = 0; i < eq_rows.size(); ++i) {
    r.A.row(i) = eq_rows[i];
    r.b[i] = eq_rhs[i];
  }

  r.C.resize(prog.linear_inequalities.size(), r.nz);
  r.d.resize(prog.linear_inequalities.size());
  for (size_t i = 0; i < prog.linear_inequalities.size(); ++i) {
    const auto& ineq = prog.linear_inequalities[i];
    Vector row = Vector::Zero(r.nz);
    double rhs = ineq.rhs;
    for (int j = 0; j < ineq.coeffs.size(); ++j) {
      if (ineq.coeffs[j] == 0.0) continue;
      if (r.pre.is_fixed[j])
        rhs -= ineq.coeffs[j] * r.pre.fixed_value[j];
      else
        row[r.pre.full_to_free[j]] = ineq.coeffs[j];
    }
    r.C.row(i) = row;
    r.d[i] = rhs;
  }
  return r;
}

// All inequality slacks at z, in a fixed order: box lowers, box uppers,
// linear rows, epigraph rows. Strict feasibility means all positive.
struct Slacks {
  Vector box_lo, box_hi, lin, epi;
  double min() const {
    double m = kInf;
    if (box_lo.size()) m = std::min(m, box_lo.minCoeff());
    if (box_hi.size()) m = std::min(m, box_hi.minCoeff());
    if (lin.size()) m = std::min(m, lin.minCoeff());
    if (epi.size()) m = std::min(m, epi.minCoeff());
    return m;
  }
};

// Box and linear slacks only; safe to evaluate anywhere.
double min_affine_slack(const Reduced& red, const Vector& z) {
  double m = kInf;
  for (int i = 0; i < red.nz; ++i) {
    if (std::isfinite(red.lo[i])) m = std::min(m, z[i] - red.lo[i]);
    if (std::isfinite(red.hi[i])) m = std::min(m, red.hi[i] - z[i]);
  }
  for (int i = 0; i < red.d.size(); ++i) m = std::min(m, red.d[i] - red.C.row(i).dot(z));
  return m;
}

// The epigraph terms may only be evaluated inside (or marginally outside) the
// box; callers must stage the affine check first.
double min_slack_staged(const Reduced& red, const Vector& z, double affine_floor) {
  const double affine = min_affine_slack(red, z);
  if (affine <= affine_floor) return affine;
  double m = affine;
  for (size_t r = 0; r < red.prog->epigraph_terms.size(); ++r)
    m = std::min(m, z[red.nz - 1] - red.epi_value(static_cast<int>(r), z));
  return m;
}

Slacks slacks_at(const Reduced& red, const Vector& z) {
  Slacks s;
  s.box_lo.resize(red.nz);
  s.box_hi.resize(red.nz);
  for (int i = 0; i < red.nz; ++i) {
    s.box_lo[i] = std::isfinite(red.lo[i]) ? z[i] - red.lo[i] : kInf;
    s.box_hi[i] = std::isfinite(red.hi[i]) ? red.hi[i] - z[i] : kInf;
  }
  s.lin = red.d - red.C * z;
  s.epi.resize(red.prog->epigraph_terms.size());
  for (int rindex = 0; rindex < s.epi.size(); ++rindex)
    s.epi[rindex] = z[red.nz - 1] - red.epi_value(rindex, z);
  return s;
}

int count_barriers(const Reduced& red) {
  int m = 0;
  for (int i = 0; i < red.nz; ++i) m += std::isfinite(red.lo[i]) + std::isfinite(red.hi[i]);
  m += static_cast<int>(red.d.size());
  m += static_cast<int>(red.prog->epigraph_terms.size());
  return m;
}

struct BarrierEval {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

// Centering objective f(z) + inv_t * phi(z); keeping f unscaled preserves
// floating-point headroom at small inv_t (values stay O(f), not O(t*f)).
BarrierEval barrier_eval(const Reduced& red, const Vector& z, double inv_t, bool want_hess) {
  BarrierEval out;
  out.grad = Vector::Zero(red.nz);
  if (want_hess) out.hess = Matrix::Zero(red.nz, red.nz);

  out.value = red.f(z);
  out.grad = red.fgrad(z);
  if (want_hess) out.hess = red.fhess(z);

  for (int i = 0; i < red.nz; ++i) {
    if (std::isfinite(red.lo[i])) {
      const double s = z[i] - red.lo[i];
      out.value -= inv_t * std::log(s);
      out.grad[i] -= inv_t / s;
      if (want_hess) out.hess(i, i) += inv_t / (s * s);
    }
    if (std::isfinite(red.hi[i])) {
      const double s = red.hi[i] - z[i];
      out.value -= inv_t * std::log(s);
      out.grad[i] += inv_t / s;
      if (want_hess) out.hess(i, i) += inv_t / (s * s);
    }
  }
  for (int i = 0; i < red.d.size(); ++i) {
    const double s = red.d[i] - red.C.row(i).dot(z);
    out.value -= inv_t * std::log(s);
    out.grad += inv_t * red.C.row(i).transpose() / s;
    if (want_hess) out.hess += inv_t * (red.C.row(i).transpose() * red.C.row(i)) / (s * s);
  }
  for (size_t rindex = 0; rindex < red.prog->epigraph_terms.size(); ++rindex) {
    const int r = static_cast<int>(rindex);
    const double s = z[red.nz - 1] - red.epi_value(r, z);
    Vector gs = -red.epi_grad(r, z);
    gs[red.nz - 1] += 1.0;
    out.value -= inv_t * std::log(s);
    out.grad -= inv_t * gs / s;
    if (want_hess) {
      out.hess += inv_t * (gs * gs.transpose()) / (s * s);
      out.hess += inv_t * red.epi_hess(r, z) / s;
    }
  }
  return out;
}

// Equality-constrained Newton step on the barrier objective via the Schur
// complement (H is positive definite on the interior).
bool newton_direction(const Reduced& red, const Vector& z, const BarrierEval& be, Vector* dz, Vector* w) {
  const int n = static_cast<int>(be.hess.rows());
  // Barrier curvature spans many orders of magnitude near the boundary;
  // equilibrate so the factorization keeps its digits.
  Vector scale(n);
  for (int i = 0; i < n; ++i) scale[i] = 1.0 / std::sqrt(std::max(be.hess(i, i), 1e-12));
  Matrix H = scale.asDiagonal() * be.hess * scale.asDiagonal();
  for (int i = 0; i < n; ++i) H(i, i) += 1e-13 * (1.0 + std::abs(H(i, i)));
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() != Eigen::Success) {
    for (int i = 0; i < n; ++i) H(i, i) += 1e-7 * (1.0 + std::abs(H(i, i)));
    llt.compute(H);
    if (llt.info() != Eigen::Success) return false;
  }
  const Vector gs = scale.asDiagonal() * be.grad;
  if (red.A.rows() == 0) {
    *dz = scale.asDiagonal() * llt.solve(-gs);
    w->resize(0);
    return true;
  }
  // Also corrects any equality drift: A dz = -(A z - b).
  const Vector rp = red.A * z - red.b;
  const Matrix As = red.A * scale.asDiagonal();
  const Matrix HinvAt = llt.solve(As.transpose());
  const Vector Hinvg = llt.solve(gs);
  Matrix S = As * HinvAt;
  for (int i = 0; i < S.rows(); ++i) S(i, i) += 1e-14 * (1.0 + std::abs(S(i, i)));
  *w = S.ldlt().solve(rp - As * Hinvg);
  *dz = scale.asDiagonal() * (-Hinvg - HinvAt * (*w));
  return true;
}

double max_feasible_step(const Reduced& red, const Vector& z, const Vector& dz) {
  double theta = 1.0;
  auto cap = [&theta](double slack, double rate) {
    if (rate > 0.0) theta = std::min(theta, slack / rate);
  };
  for (int i = 0; i < red.nz; ++i) {
    if (std::isfinite(red.lo[i])) cap(z[i] - red.lo[i], -dz[i]);
    if (std::isfinite(red.hi[i])) cap(red.hi[i] - z[i], dz[i]);
  }
  for (int i = 0; i < red.d.size(); ++i) cap(red.d[i] - red.C.row(i).dot(z), red.C.row(i).dot(dz));
  // Epigraph terms are nonlinear; the backtracking line search guards them.
  return theta;
}

bool strictly_feasible(const Reduced& red, const Vector& z) {
  return min_slack_staged(red, z, 0.0) > 0.0;
}

struct ActiveConstraint {
  enum class Kind { BoxLo, BoxHi, Lin, Epi } kind;
  int idx;
};

// Newton refinement of the KKT system with the active set frozen; quadratic
// convergence once the barrier has identified the right set.
void polish(const Reduced& red, Vector& z, Vector& eq_mult, Vector& box_lo_m, Vector& box_hi_m,
            Vector& lin_m, Vector& epi_m, int* steps, int max_steps) {
  const double act_tol = 1e-5;
  Slacks s = slacks_at(red, z);
  std::vector<ActiveConstraint> act;
  Vector act_mult0;
  std::vector<double> mults;
  for (int i = 0; i < red.nz; ++i) {
    if (std::isfinite(red.lo[i]) && s.box_lo[i] < act_tol * (1.0 + std::abs(red.lo[i]))) {
      act.push_back({ActiveConstraint::Kind::BoxLo, i});
      mults.push_back(box_lo_m[i]);
    }
    if (std::isfinite(red.hi[i]) && s.box_hi[i] < act_tol * (1.0 + std::abs(red.hi[i]))) {
      act.push_back({ActiveConstraint::Kind::BoxHi, i});
      mults.push_back(box_hi_m[i]);
    }
  }
  for (int i = 0; i < s.lin.size(); ++i)
    if (s.lin[i] < act_tol * (1.0 + std::abs(red.d[i]))) {
      act.push_back({ActiveConstraint::Kind::Lin, i});
      mults.push_back(lin_m[i]);
    }
  for (int i = 0; i < s.epi.size(); ++i)
    if (s.epi[i] < act_tol * (1.0 + std::abs(z[red.nz - 1]))) {
      act.push_back({ActiveConstraint::Kind::Epi, i});
      mults.push_back(epi_m[i]);
    }

  const int na = static_cast<int>(act.size());
  const int ne = static_cast<int>(red.A.rows());
  const int n = red.nz;

  auto constraint_val = [&](const ActiveConstraint& c, const Vector& zz) -> double {
    switch (c.kind) {
      case ActiveConstraint::Kind::BoxLo: return red.lo[c.idx] - zz[c.idx];
      case ActiveConstraint::Kind::BoxHi: return zz[c.idx] - red.hi[c.idx];
      case ActiveConstraint::Kind::Lin: return red.C.row(c.idx).dot(zz) - red.d[c.idx];
      case ActiveConstraint::Kind::Epi: return red.epi_value(c.idx, zz) - zz[red.nz - 1];
    }
    return 0.0;
  };
  auto constraint_grad = [&](const ActiveConstraint& c, const Vector& zz) -> Vector {
    Vector g = Vector::Zero(n);
    switch (c.kind) {
      case ActiveConstraint::Kind::BoxLo: g[c.idx] = -1.0; break;
      case ActiveConstraint::Kind::BoxHi: g[c.idx] = 1.0; break;
      case ActiveConstraint::Kind::Lin: g = red.C.row(c.idx).transpose(); break;
      case ActiveConstraint::Kind::Epi:
        g = red.epi_grad(c.idx, zz);
        g[red.nz - 1] -= 1.0;
        break;
    }
    return g;
  };

  Vector lam = eq_mult;
  Vector mu(na);
  for (int i = 0; i < na; ++i) mu[i] = mults[i];

  auto kkt_norm = [&](const Vector& zz, const Vector& ll, const Vector& mm) {
    Vector rd = red.fgrad(zz);
    if (ne) rd += red.A.transpose() * ll;
    for (int i = 0; i < na; ++i) rd += mm[i] * constraint_grad(act[i], zz);
    double rp = 0.0;
    if (ne) rp = (red.A * zz - red.b).cwiseAbs().maxCoeff();
    for (int i = 0; i < na; ++i) rp = std::max(rp, std::abs(constraint_val(act[i], zz)));
    return std::max(rd.size() ? rd.cwiseAbs().maxCoeff() : 0.0, rp);
  };

  double best = kkt_norm(z, lam, mu);
  for (int it = 0; it < max_steps && best > 1e-13; ++it) {
    Matrix W = red.fhess(z);
    for (int i = 0; i < na; ++i)
      if (act[i].kind == ActiveConstraint::Kind::Epi) W += mu[i] * red.epi_hess(act[i].idx, z);

    const int dim = n + ne + na;
    Matrix K = Matrix::Zero(dim, dim);
    Vector rhs = Vector::Zero(dim);
    K.topLeftCorner(n, n) = W;
    for (int i = 0; i < n; ++i) K(i, i) += 1e-12;
    if (ne) {
      K.block(0, n, n, ne) = red.A.transpose();
      K.block(n, 0, ne, n) = red.A;
    }
    for (int i = 0; i < na; ++i) {
      const Vector g = constraint_grad(act[i], z);
      K.block(0, n + ne + i, n, 1) = g;
      K.block(n + ne + i, 0, 1, n) = g.transpose();
    }
    for (int i = n; i < dim; ++i) K(i, i) -= 1e-13;

    Vector rd = red.fgrad(z);
    if (ne) rd += red.A.transpose() * lam;
    for (int i = 0; i < na; ++i) rd += mu[i] * constraint_grad(act[i], z);
    rhs.head(n) = -rd;
    if (ne) rhs.segment(n, ne) = -(red.A * z - red.b);
    for (int i = 0; i < na; ++i) rhs[n + ne + i] = -constraint_val(act[i], z);

    Eigen::FullPivLU<Matrix> lu(K);
    if (!lu.isInvertible()) break;
    const Vector step = lu.solve(rhs);

    // Shrink toward feasibility of the inactive constraints.
    Vector zn;
    double stepsize = 1.0;
    bool ok = false;
    for (int bt = 0; bt < 30; ++bt) {
      zn = z + stepsize * step.head(n);
      if (min_slack_staged(red, zn, -1e-9) > -1e-9) {
        ok = true;
        break;
      }
      stepsize *= 0.5;
    }
    if (!ok) break;
    Vector ln = lam + stepsize * step.segment(n, ne);
    Vector mn = mu + stepsize * step.tail(na);
    const double cand = kkt_norm(zn, ln, mn);
    ++(*steps);
    if (cand >= best) break;
    z = zn;
    lam = ln;
    mu = mn;
    best = cand;
  }

  // Nonnegative multipliers for the frozen inequalities; anything pushed the
  // wrong way is zeroed (it then simply reports a larger residual).
  eq_mult = lam;
  for (int i = 0; i < na; ++i) {
    const double v = std::max(0.0, mu[i]);
    switch (act[i].kind) {
      case ActiveConstraint::Kind::BoxLo: box_lo_m[act[i].idx] = v; break;
      case ActiveConstraint::Kind::BoxHi: box_hi_m[act[i].idx] = v; break;
      case ActiveConstraint::Kind::Lin: lin_m[act[i].idx] = v; break;
      case ActiveConstraint::Kind::Epi: epi_m[act[i].idx] = v; break;
    }
  }
}

// Pulls z into the strict interior: box margins, exact simplex repair for the
// original groups, and leaves cut feasibility to the caller.
Vector interior_start(const ConvexProgram& prog, const Reduced& red, const Vector& x0_full) {
  const auto& space = prog.space;
  Vector x = x0_full.size() == space.dim() ? x0_full : space.interior_point();
  for (int j = 0; j < space.dim(); ++j) {
    const double w = space.upper[j] - space.lower[j];
    const double m = std::min(1e-4 * w, 0.45 * w);
    x[j] = std::clamp(x[j], space.lower[j] + m, space.upper[j] - m);
  }
  for (const auto& group : space.simplex_groups) {
    Vector v(group.size()), lo(group.size()), hi(group.size());
    for (size_t i = 0; i < group.size(); ++i) {
      v[i] = x[group[i]];
      const double w = space.upper[group[i]] - space.lower[group[i]];
      const double m = std::min(1e-6 * w, 0.4 * w);
      lo[i] = space.lower[group[i]] + m;
      hi[i] = space.upper[group[i]] - m;
    }
    double lo_sum = lo.sum(), hi_sum = hi.sum();
    if (lo_sum <= 1.0 && hi_sum >= 1.0) {
      const Vector p = project_box_simplex(v, lo, hi);
      for (size_t i = 0; i < group.size(); ++i) x[group[i]] = p[i];
    }
    // Degenerate groups are handled by the presolve fixing.
  }
  Vector z = red.pre.reduce(x).eval();
  if (red.has_v) {
    z.conservativeResize(red.nz);
    double vmax = -kInf;
    const Vector zx = z;
    for (size_t r = 0; r < prog.epigraph_terms.size(); ++r) {
      Vector ztmp = Vector::Zero(red.nz);
      ztmp.head(red.nx) = zx.head(red.nx);
      vmax = std::max(vmax, red.epi_value(static_cast<int>(r), ztmp));
    }
    z[red.nz - 1] = vmax + 1.0;
  }
  return z;
}

KernelSolution finish(const ConvexProgram& prog, const Reduced& red, const Vector& z, const Vector& eq_mult,
                      const Vector& box_lo_m, const Vector& box_hi_m, const Vector& lin_m,
                      const Vector& epi_m, SolveStatus status, int steps) {
  KernelSolution sol;
  sol.status = status;
  sol.newton_steps = steps;
  sol.x_star = red.full_x(z);
  sol.objective_value = prog.objective ? prog.objective(sol.x_star) : 0.0;
  if (red.has_v) {
    sol.epigraph_value = z[red.nz - 1];
    sol.objective_value += sol.epigraph_value;
  }

  // Multipliers in the caller's indexing. Equality order: simplex groups that
  // survived presolve, then extra equalities; presolved-away groups get 0.
  const int total_eq = static_cast<int>(prog.space.simplex_groups.size() + prog.extra_equalities.size());
  sol.multipliers.lambda = Vector::Zero(total_eq);
  {
    int reduced_row = 0;
    int out_row = 0;
    for (const auto& group : prog.space.simplex_groups) {
      bool any_free = false;
      for (int j : group) any_free |= !red.pre.is_fixed[j];
      sol.multipliers.lambda[out_row++] = any_free ? eq_mult[reduced_row++] : 0.0;
    }
    for (size_t e = 0; e < prog.extra_equalities.size(); ++e) {
      bool any_free = false;
      const auto& eq = prog.extra_equalities[e];
      for (int j = 0; j < eq.coeffs.size(); ++j)
        if (eq.coeffs[j] != 0.0 && !red.pre.is_fixed[j]) any_free = true;
      sol.multipliers.lambda[out_row++] = any_free ? eq_mult[reduced_row++] : 0.0;
    }
  }
  for (int i = 0; i < red.nx; ++i) {
    const int j = red.pre.free_of_full[i];
    if (box_lo_m[i] > 1e-12) sol.multipliers.mu.push_back({j, false, box_lo_m[i]});
    if (box_hi_m[i] > 1e-12) sol.multipliers.mu.push_back({j, true, box_hi_m[i]});
  }
  sol.ineq_multipliers = lin_m;
  sol.epi_multipliers = epi_m;

  // Stationarity + primal feasibility residual, recomputable externally from
  // the returned point and multipliers.
  Vector rd = red.fgrad(z);
  if (red.A.rows()) rd += red.A.transpose() * eq_mult;
  for (int i = 0; i < red.nz; ++i) {
    rd[i] -= box_lo_m[i];
    rd[i] += box_hi_m[i];
  }
  for (int i = 0; i < red.d.size(); ++i) rd += lin_m[i] * red.C.row(i).transpose();
  for (int r = 0; r < epi_m.size(); ++r) {
    Vector g = red.epi_grad(r, z);
    g[red.nz - 1] -= 1.0;
    rd += epi_m[r] * g;
  }
  double res = rd.size() ? rd.cwiseAbs().maxCoeff() : 0.0;
  if (red.A.rows()) res = std::max(res, (red.A * z - red.b).cwiseAbs().maxCoeff());
  const double smin = slacks_at(red, z).min();
  if (smin < 0.0) res = std::max(res, -smin);
  sol.kkt_residual = res;
  return sol;
}

KernelSolution barrier_solve(const ConvexProgram& prog, const Vector& x0, const SolveOptions& opts,
                             bool lp_mode) {
  prog.space.validate();
  Reduced red = make_reduced(prog);

  int steps = 0;
  Vector z = interior_start(prog, red, x0);

  // If the caller's start violates the linear cuts, find a strictly feasible
  // point first.
  if (red.d.size() > 0) {
    const Vector s = red.d - red.C * z;
    if (s.size() > 0 && s.minCoeff() <= 0.0) {
      std::vector<LinearInequality> cuts(prog.linear_inequalities.begin(), prog.linear_inequalities.end());
      Phase1Result p1 = max_slack_point(prog.space, prog.extra_equalities, cuts, opts);
      steps += p1.newton_steps;
      if (p1.slack <= opts.feas_slack) {
        KernelSolution sol;
        sol.status = SolveStatus::Infeasible;
        sol.newton_steps = steps;
        sol.x_star = p1.x;
        sol.kkt_residual = kInf;
        return sol;
      }
      z = interior_start(prog, red, p1.x);
      z.head(red.nx) = red.pre.reduce(p1.x);
      if (red.has_v) {
        double vmax = -kInf;
        for (size_t r = 0; r < prog.epigraph_terms.size(); ++r)
          vmax = std::max(vmax, red.epi_value(static_cast<int>(r), z));
        z[red.nz - 1] = vmax + 1.0;
      }
    }
  }
  if (red.nz == 0) {
    return finish(prog, red, z, Vector(), Vector(), Vector(), Vector::Zero(red.d.size()), Vector(),
                  SolveStatus::Optimal, steps);
  }
  if (!strictly_feasible(red, z)) {
    KernelSolution sol;
    sol.status = SolveStatus::Infeasible;
    sol.newton_steps = steps;
    sol.x_star = red.full_x(z);
    sol.kkt_residual = kInf;
    return sol;
  }

  const int m = count_barriers(red);
  const double gap_target = std::min(1e-9, opts.tol);
  double inv_t = 1.0;
  Vector eq_mult = Vector::Zero(red.A.rows());
  bool iter_capped = false;
  bool unbounded = false;
  int stalled_stages = 0;
  std::vector<double> objective_trace;

  std::vector<int> stage_steps;
  while (true) {
    // Centering for the current t.
    bool stalled = false;
    int steps_at_stage_start = steps;
    for (int inner = 0; inner < 80; ++inner) {
      if (steps >= opts.max_iterations) {
        iter_capped = true;
        break;
      }
      const BarrierEval be = barrier_eval(red, z, inv_t, true);
      Vector dz, w;
      if (!newton_direction(red, z, be, &dz, &w)) {
        iter_capped = true;
        break;
      }
      eq_mult = w;
      const double decrement2 = -be.grad.dot(dz);
      if (decrement2 * 0.5 < 1e-12 * std::max(1.0, std::abs(be.value))) break;

      double theta = 0.99 * max_feasible_step(red, z, dz);
      theta = std::min(theta, 1.0);
      double fz = be.value;
      Vector zn;
      for (int bt = 0; bt < 60; ++bt) {
        zn = z + theta * dz;
        if (strictly_feasible(red, zn)) {
          const double fn = barrier_eval(red, zn, inv_t, false).value;
          if (fn <= fz + 1e-4 * theta * be.grad.dot(dz) || fn <= fz) break;
        }
        theta *= 0.5;
        if (theta < 1e-14) break;
      }
      if (theta < 1e-14) {
        stalled = true;
        break;
      }
      z = zn;
      ++steps;
      if (lp_mode && (z.cwiseAbs().maxCoeff() > 1e10 || red.f(z) < -1e13)) {
        unbounded = true;
        break;
      }
    }
    objective_trace.push_back(red.f(z));
    stage_steps.push_back(steps - steps_at_stage_start);
    if (iter_capped || unbounded) break;
    stalled_stages = stalled ? stalled_stages + 1 : 0;
    if (stalled_stages >= 3) {
      iter_capped = true;
      break;
    }
    if (static_cast<double>(m) * inv_t <= gap_target || m == 0) break;
    inv_t /= 20.0;
  }

  if (iter_capped && std::getenv("GOPVI_KERNEL_DEBUG")) {
    std::fprintf(stderr, "[kernel] cap: nz=%d eq=%d lin=%d epi=%d inv_t=%.3g steps=%d stalled=%d stages:",
                 red.nz, (int)red.A.rows(), (int)red.d.size(), (int)red.prog->epigraph_terms.size(), inv_t,
                 steps, stalled_stages);
    for (int c : stage_steps) std::fprintf(stderr, " %d", c);
    std::fprintf(stderr, "\n");
  }
  if (unbounded) {
    KernelSolution sol;
    sol.status = SolveStatus::Unbounded;
    sol.newton_steps = steps;
    sol.x_star = red.full_x(z);
    sol.kkt_residual = kInf;
    return sol;
  }

  // Barrier multipliers mu_i = inv_t / s_i.
  const Slacks s = slacks_at(red, z);
  Vector box_lo_m = Vector::Zero(red.nz), box_hi_m = Vector::Zero(red.nz);
  for (int i = 0; i < red.nz; ++i) {
    if (std::isfinite(red.lo[i])) box_lo_m[i] = inv_t / s.box_lo[i];
    if (std::isfinite(red.hi[i])) box_hi_m[i] = inv_t / s.box_hi[i];
  }
  Vector lin_m(red.d.size()), epi_m(s.epi.size());
  for (int i = 0; i < lin_m.size(); ++i) lin_m[i] = inv_t / s.lin[i];
  for (int i = 0; i < epi_m.size(); ++i) epi_m[i] = inv_t / s.epi[i];

  if (!iter_capped) polish(red, z, eq_mult, box_lo_m, box_hi_m, lin_m, epi_m, &steps, 12);

  for (int i = 0; i < red.nz; ++i) {
    if (box_lo_m[i] < 1e-12) box_lo_m[i] = 0.0;
    if (box_hi_m[i] < 1e-12) box_hi_m[i] = 0.0;
  }
  for (int i = 0; i < lin_m.size(); ++i)
    if (lin_m[i] < 1e-12) lin_m[i] = 0.0;
  for (int i = 0; i < epi_m.size(); ++i)
    if (epi_m[i] < 1e-12) epi_m[i] = 0.0;

  KernelSolution sol = finish(prog, red, z, eq_mult, box_lo_m, box_hi_m, lin_m, epi_m,
                              iter_capped ? SolveStatus::IterLimit : SolveStatus::Optimal, steps);
  sol.objective_trace = std::move(objective_trace);
  return sol;
}

}  // namespace

KernelSolution solve_convex(const ConvexProgram& program, const Vector& x0, const SolveOptions& opts) {
  return barrier_solve(program, x0, opts, program.affine_objective);
}

KernelSolution solve_lp(const ConvexProgram& program, const SolveOptions& opts) {
  ConvexProgram lp = program;
  lp.affine_objective = true;
  return barrier_solve(lp, program.space.interior_point(), opts, true);
}

Vector project_simplex(const Vector& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, theta = 0.0;
  for (int i = 0; i < n; ++i) {
    cum += u[i];
    const double cand = (cum - 1.0) / (i + 1);
    if (u[i] - cand > 0.0) theta = cand;
  }
  Vector x(n);
  for (int i = 0; i < n; ++i) x[i] = std::max(v[i] - theta, 0.0);
  // Absorb the rounding residual into the largest coordinate.
  int imax = 0;
  x.maxCoeff(&imax);
  x[imax] += 1.0 - x.sum();
  return x;
}

Vector project_box_simplex(const Vector& v, const Vector& lo, const Vector& hi) {
  const int n = static_cast<int>(v.size());
  auto sum_at = [&](double shift) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::clamp(v[i] + shift, lo[i], hi[i]);
    return s;
  };
  double a = -(v.maxCoeff() - lo.minCoeff()) - 1.0;
  double b = (hi.maxCoeff() - v.minCoeff()) + 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (a + b);
    if (sum_at(mid) < 1.0)
      a = mid;
    else
      b = mid;
  }
  const double shift = 0.5 * (a + b);
  Vector x(n);
  for (int i = 0; i < n; ++i) x[i] = std::clamp(v[i] + shift, lo[i], hi[i]);
  // Exact sum: push the residual through coordinates with slack.
  double resid = 1.0 - x.sum();
  for (int i = 0; i < n && std::abs(resid) > 0.0; ++i) {
    const double room = resid > 0.0 ? hi[i] - x[i] : lo[i] - x[i];
    const double step = resid > 0.0 ? std::min(resid, room) : std::max(resid, room);
    x[i] += step;
    resid -= step;
  }
  return x;
}

Phase1Result max_slack_point(const VariableSpace& space, const std::vector<AffineConstraint>& extra_eqs,
                             const std::vector<LinearInequality>& cuts, const SolveOptions& opts) {
  Phase1Result out;
  if (cuts.empty()) {
    out.slack = 1.0;
    out.x = space.interior_point();
    return out;
  }
  const int n = space.dim();
  const Vector x0 = space.interior_point();
  double worst = kInf;
  for (const auto& cut : cuts) worst = std::min(worst, cut.rhs - cut.coeffs.dot(x0));

  VariableSpace ext = space;
  ext.names.resize(n);
  ext.names.push_back("slack");
  ext.lower.conservativeResize(n + 1);
  ext.upper.conservativeResize(n + 1);
  ext.lower[n] = std::min(worst, 0.0) - 2.0;
  ext.upper[n] = 1.0;

  ConvexProgram lp;
  lp.space = ext;
  lp.extra_equalities = extra_eqs;
  for (auto& eq : lp.extra_equalities) {
    eq.coeffs.conservativeResize(n + 1);
    eq.coeffs[n] = 0.0;
  }
  for (const auto& cut : cuts) {
    LinearInequality row;
    row.coeffs = Vector::Zero(n + 1);
    row.coeffs.head(n) = cut.coeffs;
    row.coeffs[n] = 1.0;
    row.rhs = cut.rhs;
    lp.linear_inequalities.push_back(row);
  }
  // Couple the box into the slack so the maximizer keeps a margin from every
  // bound, not just from the cuts; the returned point then starts the main
  // barrier strictly feasible even after the polish pins cut rows exactly.
  {
    const Presolve pre = make_presolve(space);
    for (int j = 0; j < n; ++j) {
      if (pre.is_fixed[j]) continue;
      const double kappa = 1e-3 * (space.upper[j] - space.lower[j]);
      LinearInequality up, down;
      up.coeffs = Vector::Zero(n + 1);
      up.coeffs[j] = 1.0;
      up.coeffs[n] = kappa;
      up.rhs = space.upper[j];
      down.coeffs = Vector::Zero(n + 1);
      down.coeffs[j] = -1.0;
      down.coeffs[n] = kappa;
      down.rhs = -space.lower[j];
      lp.linear_inequalities.push_back(up);
      lp.linear_inequalities.push_back(down);
    }
  }
  Vector c = Vector::Zero(n + 1);
  c[n] = -1.0;
  lp.objective = [c](const Vector& x) { return c.dot(x); };
  lp.grad = [c](const Vector&) { return c; };
  lp.hess = [](const Vector& x) { return Matrix::Zero(x.size(), x.size()); };
  lp.affine_objective = true;

  Vector start(n + 1);
  start.head(n) = x0;
  start[n] = std::min(worst, 1.0) - 1.0;
  const KernelSolution sol = solve_convex(lp, start, opts);
  out.newton_steps = sol.newton_steps;
  if (sol.status != SolveStatus::Optimal && sol.status != SolveStatus::IterLimit) {
    out.slack = -kInf;
    out.x = x0;
    return out;
  }
  out.slack = sol.x_star[n];
  out.x = sol.x_star.head(n);
  return out;
}

}  // namespace gopvi
