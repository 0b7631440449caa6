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

#include "gopvi/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace gopvi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// x log x with the limit value 0 at x == 0; negative x is a domain error.
double xlogx(double x) {
  if (x < 0.0) throw DomainError("log of a negative responsibility");
  return x > 0.0 ? x * std::log(x) : 0.0;
}

double weighted_log(double weight, double arg, const char* what) {
  if (weight == 0.0) return 0.0;
  if (arg <= 0.0) throw DomainError(std::string("log of nonpositive ") + what);
  return weight * std::log(arg);
}

double convention_offset(const ModelVariant& v, int n) {
  // The expanded forms drop -(N/2)log(2 pi) from the likelihood and, when the
  // cluster means carry a prior, -(K/2)log(2 pi) from it.
  if (v.elbo_constant_convention == ElboConvention::Proportional) return 0.0;
  double off = -0.5 * n * kLog2Pi;
  if (v.tag != ModelKind::Gmm) off -= 0.5 * v.K * kLog2Pi;
  return off;
}

}  // namespace

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double v;
    if (ls >> v) {
      std::string rest;
      if (ls >> rest) throw Error("malformed dataset line: " + line);
      vals.push_back(v);
    } else {
      std::string rest;
      ls.clear();
      if (ls >> rest) throw Error("malformed dataset line: " + line);
    }
  }
  Dataset d;
  d.y = Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  d.validate();
  return d;
}

void Dataset::validate() const {
  if (y.size() < 1) throw Error("dataset needs at least one observation");
  for (int i = 0; i < y.size(); ++i)
    if (!std::isfinite(y[i])) throw Error("dataset contains a non-finite value");
}

void ModelVariant::validate() const {
  if (K < 1) throw Error("cluster count must be >= 1");
}

const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Gmm: return "gmm";
    case ModelKind::BgmmPointMass: return "pm";
    case ModelKind::BgmmGaussian: return "gauss";
  }
  return "?";
}

std::optional<ModelKind> parse_model_kind(const std::string& s) {
  if (s == "gmm") return ModelKind::Gmm;
  if (s == "pm") return ModelKind::BgmmPointMass;
  if (s == "gauss") return ModelKind::BgmmGaussian;
  return std::nullopt;
}

double elbo(const ModelVariant& variant, const ModelParams& params, const VariationalParams& vparams,
            const Dataset& data) {
  variant.validate();
  const int n = data.n();
  const int K = variant.K;
  const Vector& y = data.y;
  const Vector& nu = vparams.nu;
  const Matrix& tau = vparams.tau;

  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) {
      const double t = tau(i, k);
      acc += -0.5 * t * (y[i] - nu[k]) * (y[i] - nu[k]);
      acc += weighted_log(t, params.pi[k], "mixture weight");
      acc -= xlogx(t);
    }
  }
  if (variant.tag != ModelKind::Gmm) {
    if (!(params.eta_m < 0.0)) throw DomainError("eta_m must be negative");
    acc += params.eta_m * nu.squaredNorm();
    acc += 0.5 * K * std::log(-2.0 * params.eta_m);
  }
  if (variant.tag == ModelKind::BgmmGaussian) {
    const Vector& g = vparams.gamma;
    for (int k = 0; k < K; ++k) {
      if (!(g[k] > 0.0)) throw DomainError("gamma must be positive");
      double tcol = 0.0;
      for (int i = 0; i < n; ++i) tcol += tau(i, k);
      acc += -0.5 * tcol * g[k];
      acc += params.eta_m * g[k];
      acc += 0.5 * (kLog2Pi + 1.0 + std::log(g[k]));
    }
  }
  return acc + convention_offset(variant, n);
}

Vector pack_alpha(const ModelVariant& v, const ModelParams& p, const VariationalParams& q) {
  const int K = v.K;
  Vector a(v.has_gamma() ? 3 * K : 2 * K);
  a.head(K) = q.nu;
  a.segment(K, K) = p.pi;
  if (v.has_gamma()) a.segment(2 * K, K) = q.gamma;
  return a;
}

Vector pack_beta(const ModelVariant& v, const ModelParams& p, const VariationalParams& q, int n) {
  const int K = v.K;
  Vector b(v.has_eta() ? n * K + 1 : n * K);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) b[i * K + k] = q.tau(i, k);
  if (v.has_eta()) b[n * K] = p.eta_m;
  return b;
}

void unpack(const ModelVariant& v, const Vector& alpha, const Vector& beta, int n, ModelParams& p,
            VariationalParams& q) {
  const int K = v.K;
  q.nu = alpha.head(K);
  p.pi = alpha.segment(K, K);
  q.gamma = v.has_gamma() ? Vector(alpha.segment(2 * K, K)) : Vector();
  q.tau.resize(n, K);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) q.tau(i, k) = beta[i * K + k];
  p.eta_m = v.has_eta() ? beta[n * K] : -0.5;
}

std::pair<Vector, Vector> elbo_gradients(const ModelVariant& variant, const ModelParams& params,
                                         const VariationalParams& vparams, const Dataset& data) {
  const int n = data.n();
  const int K = variant.K;
  const Vector& y = data.y;
  const Vector& nu = vparams.nu;
  const Matrix& tau = vparams.tau;
  const double eta = params.eta_m;

  Vector tau_col = Vector::Zero(K);
  Vector ytau_col = Vector::Zero(K);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) {
      tau_col[k] += tau(i, k);
      ytau_col[k] += y[i] * tau(i, k);
    }

  // Gradients of the negative ELBO.
  Vector ga(variant.has_gamma() ? 3 * K : 2 * K);
  for (int k = 0; k < K; ++k) {
    double g_nu = nu[k] * tau_col[k] - ytau_col[k];
    if (variant.has_eta()) g_nu -= 2.0 * eta * nu[k];
    ga[k] = g_nu;
    ga[K + k] = -tau_col[k] / params.pi[k];
    if (variant.has_gamma()) ga[2 * K + k] = 0.5 * tau_col[k] - eta - 0.5 / vparams.gamma[k];
  }

  Vector gb(variant.has_eta() ? n * K + 1 : n * K);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) {
      double g = 0.5 * (y[i] - nu[k]) * (y[i] - nu[k]) - std::log(params.pi[k]) +
                 std::log(tau(i, k)) + 1.0;
      if (variant.has_gamma()) g += 0.5 * vparams.gamma[k];
      gb[i * K + k] = g;
    }
  if (variant.has_eta()) {
    double g_eta = -0.5 * K / eta - nu.squaredNorm();
    if (variant.has_gamma()) g_eta -= vparams.gamma.sum();
    gb[n * K] = g_eta;
  }
  return {ga, gb};
}

double analytic_loglik(double gamma_value, const Dataset& data) {
  if (gamma_value <= -1.0) throw DomainError("analytic log-likelihood needs Gamma > -1");
  const double n = static_cast<double>(data.n());
  const double ss = data.y.squaredNorm();
  return -0.5 * n * kLog2Pi - 0.5 * n * std::log(gamma_value + 1.0) - ss / (2.0 * (gamma_value + 1.0));
}

double mle_gamma(const Dataset& data) { return data.y.squaredNorm() / data.n() - 1.0; }

namespace {

struct Layout {
  ModelVariant variant;
  int n = 0;

  int K() const { return variant.K; }
  int alpha_dim() const { return variant.has_gamma() ? 3 * K() : 2 * K(); }
  int beta_dim() const { return variant.has_eta() ? n * K() + 1 : n * K(); }
  int nu_at(int k) const { return k; }
  int pi_at(int k) const { return K() + k; }
  int gamma_at(int k) const { return 2 * K() + k; }
  int tau_at(int i, int k) const { return i * K() + k; }
  int eta_at() const { return n * K(); }
};

VariableSpace alpha_space(const Layout& lay, const Dataset& data, const BoundsConfig& bc) {
  const int K = lay.K();
  VariableSpace s;
  s.lower.resize(lay.alpha_dim());
  s.upper.resize(lay.alpha_dim());
  s.names.resize(lay.alpha_dim());
  const double range = std::max(data.range(), 1.0);
  const double mean_lo = data.min() - bc.nu_pad_fraction * range;
  const double mean_hi = data.max() + bc.nu_pad_fraction * range;
  const char* mean_name = lay.variant.tag == ModelKind::Gmm ? "mu" : "nu";
  for (int k = 0; k < K; ++k) {
    s.names[lay.nu_at(k)] = std::string(mean_name) + "[" + std::to_string(k) + "]";
    s.lower[lay.nu_at(k)] = mean_lo;
    s.upper[lay.nu_at(k)] = mean_hi;
    s.names[lay.pi_at(k)] = "pi[" + std::to_string(k) + "]";
    s.lower[lay.pi_at(k)] = bc.prob_floor;
    s.upper[lay.pi_at(k)] = 1.0;
    if (lay.variant.has_gamma()) {
      s.names[lay.gamma_at(k)] = "gamma[" + std::to_string(k) + "]";
      s.lower[lay.gamma_at(k)] = bc.gamma_floor;
      s.upper[lay.gamma_at(k)] = range * range;
    }
  }
  std::vector<int> pi_group(K);
  for (int k = 0; k < K; ++k) pi_group[k] = lay.pi_at(k);
  s.simplex_groups.push_back(pi_group);
  return s;
}

VariableSpace beta_space(const Layout& lay, const BoundsConfig& bc) {
  VariableSpace s;
  s.lower.resize(lay.beta_dim());
  s.upper.resize(lay.beta_dim());
  s.names.resize(lay.beta_dim());
  for (int i = 0; i < lay.n; ++i) {
    std::vector<int> row(lay.K());
    for (int k = 0; k < lay.K(); ++k) {
      const int j = lay.tau_at(i, k);
      s.names[j] = "tau[" + std::to_string(i) + "][" + std::to_string(k) + "]";
      s.lower[j] = bc.prob_floor;
      s.upper[j] = 1.0;
      row[k] = j;
    }
    s.simplex_groups.push_back(row);
  }
  if (lay.variant.has_eta()) {
    s.names[lay.eta_at()] = "eta_m";
    s.lower[lay.eta_at()] = bc.eta_lower;
    s.upper[lay.eta_at()] = bc.eta_upper;
  }
  return s;
}

}  // namespace

PrimalSolution primal_closed_form(const ModelVariant& variant, const Vector& beta, const Dataset& data,
                                  const BoundsConfig& bounds) {
  const Layout lay{variant, data.n()};
  const int K = variant.K;
  const int n = data.n();
  const double eta = variant.has_eta() ? beta[lay.eta_at()] : 0.0;

  Vector tau_col = Vector::Zero(K), ytau_col = Vector::Zero(K);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < K; ++k) {
      tau_col[k] += beta[lay.tau_at(i, k)];
      ytau_col[k] += data.y[i] * beta[lay.tau_at(i, k)];
    }

  PrimalSolution sol;
  sol.alpha.resize(lay.alpha_dim());
  sol.multipliers.lambda = Vector::Constant(1, static_cast<double>(n));

  // Clamps a coordinate into its box; the residual derivative at the bound is
  // folded into a box multiplier so KKT stationarity of the Lagrange function
  // still closes exactly.
  auto place = [&sol](int index, double free_min, double lo, double hi, auto deriv_at) {
    const double clamped = std::clamp(free_min, lo, hi);
    sol.alpha[index] = clamped;
    if (clamped != free_min) {
      MultiplierSet::BoxMultiplier m;
      m.index = index;
      m.at_upper = (clamped == hi);
      m.value = std::abs(deriv_at(clamped));
      sol.multipliers.mu.push_back(m);
    }
  };

  const double range = std::max(data.range(), 1.0);
  const double nu_lo = data.min() - bounds.nu_pad_fraction * range;
  const double nu_hi = data.max() + bounds.nu_pad_fraction * range;
  for (int k = 0; k < K; ++k) {
    sol.alpha[lay.pi_at(k)] = K == 1 ? 1.0 : tau_col[k] / n;
    const double denom = variant.tag == ModelKind::Gmm ? tau_col[k] : tau_col[k] - 2.0 * eta;
    place(lay.nu_at(k), ytau_col[k] / denom, nu_lo, nu_hi,
          [&](double x) { return x * denom - ytau_col[k]; });
    if (variant.has_gamma()) {
      place(lay.gamma_at(k), 1.0 / (tau_col[k] - 2.0 * eta), bounds.gamma_floor, range * range,
            [&](double x) { return 0.5 * tau_col[k] - eta - 0.5 / x; });
    }
  }
  return sol;
}

BiconvexProblem build_problem(const ModelVariant& variant, const Dataset& data,
                              const BoundsConfig& bounds) {
  variant.validate();
  data.validate();
  const Layout lay{variant, data.n()};
  const Dataset d = data;
  const ModelVariant v = variant;
  const int n = data.n();

  BiconvexProblem p;
  p.alpha = alpha_space(lay, data, bounds);
  p.beta = beta_space(lay, bounds);

  auto unpack_all = [v, n](const Vector& a, const Vector& b, ModelParams& mp, VariationalParams& vq) {
    unpack(v, a, b, n, mp, vq);
  };

  p.objective = [v, d, unpack_all](const Vector& a, const Vector& b) {
    ModelParams mp;
    VariationalParams vq;
    unpack_all(a, b, mp, vq);
    return -elbo(v, mp, vq, d);
  };
  p.grad_alpha = [v, d, unpack_all](const Vector& a, const Vector& b) {
    ModelParams mp;
    VariationalParams vq;
    unpack_all(a, b, mp, vq);
    return elbo_gradients(v, mp, vq, d).first;
  };
  p.grad_beta = [v, d, unpack_all](const Vector& a, const Vector& b) {
    ModelParams mp;
    VariationalParams vq;
    unpack_all(a, b, mp, vq);
    return elbo_gradients(v, mp, vq, d).second;
  };
  p.hess_alpha = [v, d, lay](const Vector& a, const Vector& b) {
    const int K = v.K;
    Matrix h = Matrix::Zero(lay.alpha_dim(), lay.alpha_dim());
    Vector tau_col = Vector::Zero(K);
    for (int i = 0; i < d.n(); ++i)
      for (int k = 0; k < K; ++k) tau_col[k] += b[lay.tau_at(i, k)];
    const double eta = v.has_eta() ? b[lay.eta_at()] : 0.0;
    for (int k = 0; k < K; ++k) {
      h(lay.nu_at(k), lay.nu_at(k)) = v.has_eta() ? tau_col[k] - 2.0 * eta : tau_col[k];
      const double pi_k = a[lay.pi_at(k)];
      h(lay.pi_at(k), lay.pi_at(k)) = tau_col[k] / (pi_k * pi_k);
      if (v.has_gamma()) {
        const double g = a[lay.gamma_at(k)];
        h(lay.gamma_at(k), lay.gamma_at(k)) = 0.5 / (g * g);
      }
    }
    return h;
  };
  p.hess_beta = [v, d, lay](const Vector&, const Vector& b) {
    Matrix h = Matrix::Zero(lay.beta_dim(), lay.beta_dim());
    for (int i = 0; i < d.n(); ++i)
      for (int k = 0; k < v.K; ++k) {
        const int j = lay.tau_at(i, k);
        h(j, j) = 1.0 / b[j];
      }
    if (v.has_eta()) {
      const double eta = b[lay.eta_at()];
      h(lay.eta_at(), lay.eta_at()) = 0.5 * v.K / (eta * eta);
    }
    return h;
  };

  p.primal_closed_form = [v, d, bounds](const Vector& beta) {
    return primal_closed_form(v, beta, d, bounds);
  };

  // grad_alpha(alpha, .) is affine in beta for all three models:
  //   d/d nu_k:    sum_i tau_ik (nu_k - y_i)  [- 2 eta nu_k]
  //   d/d pi_k:    - sum_i tau_ik / pi_k
  //   d/d gamma_k: 0.5 sum_i tau_ik - eta - 1/(2 gamma_k)
  p.alpha_grad_affine_in_beta = [v, d, lay](const Vector& a) {
    Matrix G = Matrix::Zero(lay.alpha_dim(), lay.beta_dim());
    Vector g0 = Vector::Zero(lay.alpha_dim());
    for (int k = 0; k < v.K; ++k) {
      for (int i = 0; i < d.n(); ++i) {
        G(lay.nu_at(k), lay.tau_at(i, k)) = a[lay.nu_at(k)] - d.y[i];
        G(lay.pi_at(k), lay.tau_at(i, k)) = -1.0 / a[lay.pi_at(k)];
        if (v.has_gamma()) G(lay.gamma_at(k), lay.tau_at(i, k)) = 0.5;
      }
      if (v.has_eta()) {
        G(lay.nu_at(k), lay.eta_at()) = -2.0 * a[lay.nu_at(k)];
        if (v.has_gamma()) {
          G(lay.gamma_at(k), lay.eta_at()) = -1.0;
          g0[lay.gamma_at(k)] = -0.5 / a[lay.gamma_at(k)];
        }
      }
    }
    return std::make_pair(G, g0);
  };

  p.connected_hint.assign(lay.alpha_dim(), true);

  const BoundsConfig bc = bounds;
  p.coordinate_polish = [v, d, lay, bc](Vector& alpha, Vector& beta) {
    const int K = v.K;
    const int n = d.n();
    // alpha block: exact box-constrained minimizers at fixed beta.
    Vector tau_col = Vector::Zero(K), ytau_col = Vector::Zero(K);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < K; ++k) {
        tau_col[k] += beta[lay.tau_at(i, k)];
        ytau_col[k] += d.y[i] * beta[lay.tau_at(i, k)];
      }
    const double eta0 = v.has_eta() ? beta[lay.eta_at()] : 0.0;
    const double range = std::max(d.range(), 1.0);
    const double nu_lo = d.min() - bc.nu_pad_fraction * range;
    const double nu_hi = d.max() + bc.nu_pad_fraction * range;
    {
      // pi: minimize -sum_k tau_col_k log pi_k over the boxed simplex. The
      // stationary form pi_k = tau_col_k / s is scaled to satisfy the boxed
      // sum exactly by bisection on s.
      double lo_s = tau_col.sum() / 1.0, hi_s = tau_col.sum() / (K * bc.prob_floor) + 1.0;
      lo_s = std::max(lo_s * 0.5, 1e-12);
      auto sum_pi = [&](double s) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += std::clamp(tau_col[k] / s, bc.prob_floor, 1.0);
        return acc;
      };
      while (sum_pi(lo_s) < 1.0) lo_s *= 0.5;
      while (sum_pi(hi_s) > 1.0) hi_s *= 2.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo_s + hi_s);
        (sum_pi(mid) >= 1.0 ? lo_s : hi_s) = mid;
      }
      const double s = 0.5 * (lo_s + hi_s);
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        alpha[lay.pi_at(k)] = std::clamp(tau_col[k] / s, bc.prob_floor, 1.0);
        acc += alpha[lay.pi_at(k)];
      }
      alpha[lay.pi_at(0)] += 1.0 - acc;
    }
    for (int k = 0; k < K; ++k) {
      const double denom = v.has_eta() ? tau_col[k] - 2.0 * eta0 : tau_col[k];
      alpha[lay.nu_at(k)] = std::clamp(ytau_col[k] / denom, nu_lo, nu_hi);
      if (v.has_gamma())
        alpha[lay.gamma_at(k)] =
            std::clamp(1.0 / (tau_col[k] - 2.0 * eta0), bc.gamma_floor, range * range);
    }

    // beta block: tau rows by boxed softmax (exact KKT via bisection on the
    // row multiplier), then eta at its boxed stationary point.
    for (int i = 0; i < n; ++i) {
      Vector c(K);
      for (int k = 0; k < K; ++k) {
        c[k] = 0.5 * (d.y[i] - alpha[lay.nu_at(k)]) * (d.y[i] - alpha[lay.nu_at(k)]) -
               std::log(alpha[lay.pi_at(k)]);
        if (v.has_gamma()) c[k] += 0.5 * alpha[lay.gamma_at(k)];
      }
      // minimize sum tau_k c_k + tau_k log tau_k, tau in boxed simplex:
      // tau_k = clamp(exp(-1 - c_k - m), floor, 1).
      const double cmin = c.minCoeff();
      auto sum_tau = [&](double m) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k)
          acc += std::clamp(std::exp(-1.0 - (c[k] - cmin) - m), bc.prob_floor, 1.0);
        return acc;
      };
      double lo_m = -800.0, hi_m = 800.0;
      for (int it = 0; it < 400; ++it) {
        const double mid = 0.5 * (lo_m + hi_m);
        (sum_tau(mid) >= 1.0 ? lo_m : hi_m) = mid;
      }
      const double m = 0.5 * (lo_m + hi_m);
      double acc = 0.0;
      int argmax = 0;
      for (int k = 0; k < K; ++k) {
        beta[lay.tau_at(i, k)] = std::clamp(std::exp(-1.0 - (c[k] - cmin) - m), bc.prob_floor, 1.0);
        acc += beta[lay.tau_at(i, k)];
        if (beta[lay.tau_at(i, k)] > beta[lay.tau_at(i, argmax)]) argmax = k;
      }
      beta[lay.tau_at(i, argmax)] += 1.0 - acc;
    }
    if (v.has_eta()) {
      double s = alpha.head(K).squaredNorm();
      if (v.has_gamma()) s += alpha.segment(2 * K, K).sum();
      const double eta_free = -0.5 * K / std::max(s, 1e-300);
      beta[lay.eta_at()] = std::clamp(eta_free, bc.eta_lower, bc.eta_upper);
    }
  };

  return p;
}

}  // namespace gopvi
