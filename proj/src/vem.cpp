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

#include "gopvi/vem.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace gopvi {

namespace {

// Responsibility update shared by all variants; the Gaussian approximation
// carries the extra -gamma_k/2 inside the exponent (coordinate ascent on its
// ELBO requires it).
void update_tau(const ModelVariant& v, const Dataset& data, const ModelParams& p, VariationalParams& q) {
  const int n = data.n();
  const int K = v.K;
  for (int i = 0; i < n; ++i) {
    Vector logw(K);
    for (int k = 0; k < K; ++k) {
      double lw = std::log(std::max(p.pi[k], 1e-300)) -
                  0.5 * (data.y[i] - q.nu[k]) * (data.y[i] - q.nu[k]);
      if (v.has_gamma()) lw -= 0.5 * q.gamma[k];
      logw[k] = lw;
    }
    const double m = logw.maxCoeff();
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(logw[k] - m);
    for (int k = 0; k < K; ++k) q.tau(i, k) = std::exp(logw[k] - m) / denom;
  }
}

void update_means(const ModelVariant& v, const Dataset& data, const ModelParams& p, VariationalParams& q) {
  const int K = v.K;
  for (int k = 0; k < K; ++k) {
    double tcol = 0.0, ytcol = 0.0;
    for (int i = 0; i < data.n(); ++i) {
      tcol += q.tau(i, k);
      ytcol += data.y[i] * q.tau(i, k);
    }
    const double denom = v.has_eta() ? tcol - 2.0 * p.eta_m : tcol;
    q.nu[k] = denom > 0.0 ? ytcol / denom : q.nu[k];
    if (v.has_gamma()) q.gamma[k] = 1.0 / (tcol - 2.0 * p.eta_m);
  }
}

}  // namespace

InitSampler InitSampler::defaults(const ModelVariant& variant, const Dataset& data) {
  InitSampler s;
  s.dirichlet_alpha = Vector::Ones(variant.K);
  s.gamma_shape = std::max(data.range(), 1e-3);
  s.nu_lo = data.min();
  s.nu_hi = data.max();
  return s;
}

std::pair<ModelParams, VariationalParams> InitSampler::sample(const ModelVariant& variant,
                                                              const Dataset& data, Rng& rng) const {
  const int K = variant.K;
  ModelParams p;
  VariationalParams q;
  p.pi = rng.dirichlet(dirichlet_alpha);
  q.tau.resize(data.n(), K);
  for (int i = 0; i < data.n(); ++i) {
    const Vector row = rng.dirichlet(dirichlet_alpha);
    for (int k = 0; k < K; ++k) q.tau(i, k) = row[k];
  }
  const double Gamma = std::max(rng.gamma(gamma_shape), 1e-8);
  p.eta_m = -1.0 / (2.0 * Gamma);
  q.nu.resize(K);
  for (int k = 0; k < K; ++k) q.nu[k] = rng.uniform(nu_lo, nu_hi);
  if (variant.has_gamma()) {
    const double range = std::max(data.range(), 1.0);
    q.gamma.resize(K);
    for (int k = 0; k < K; ++k)
      q.gamma[k] = std::clamp(rng.gamma(gamma_shape), 1e-6, range * range);
  }
  return {p, q};
}

VemResult vem_run(const VemConfig& config, const Dataset& data,
                  std::pair<ModelParams, VariationalParams> init) {
  const ModelVariant& v = config.variant;
  ModelParams p = std::move(init.first);
  VariationalParams q = std::move(init.second);

  VemResult res;
  double prev = elbo(v, p, q, data);
  res.elbo_trace.push_back(prev);

  int outer = 0;
  for (; outer < config.max_outer; ++outer) {
    // M-step.
    for (int k = 0; k < v.K; ++k) {
      double tcol = 0.0;
      for (int i = 0; i < data.n(); ++i) tcol += q.tau(i, k);
      p.pi[k] = tcol / data.n();
    }
    if (v.has_eta()) {
      double s = q.nu.squaredNorm();
      if (v.has_gamma()) s += q.gamma.sum();
      p.eta_m = -0.5 * v.K / std::max(s, 1e-300);
    }

    // E-step; the BGMM variants nest tau and the mean parameters to their own
    // fixed point, the plain GMM does a single pass.
    if (v.tag == ModelKind::Gmm) {
      update_tau(v, data, p, q);
      update_means(v, data, p, q);
    } else {
      for (int inner = 0; inner < config.max_inner; ++inner) {
        const Vector nu_before = q.nu;
        const Matrix tau_before = q.tau;
        update_tau(v, data, p, q);
        update_means(v, data, p, q);
        const double moved = std::max((q.nu - nu_before).cwiseAbs().maxCoeff(),
                                      (q.tau - tau_before).cwiseAbs().maxCoeff());
        if (moved <= config.inner_tol) break;
      }
    }

    const double cur = elbo(v, p, q, data);
    res.elbo_trace.push_back(cur);
    const bool done = std::abs(cur - prev) <= config.tol;
    prev = cur;
    if (done) {
      ++outer;
      break;
    }
  }

  res.params = std::move(p);
  res.vparams = std::move(q);
  res.final_elbo = prev;
  res.outer_iterations = outer;
  res.hit_iteration_cap = outer >= config.max_outer;
  return res;
}

double vem_kkt_residual(const ModelVariant& variant, const ModelParams& params,
                        const VariationalParams& vparams, const Dataset& data) {
  const auto [ga, gb] = elbo_gradients(variant, params, vparams, data);
  const int K = variant.K;
  const int n = data.n();

  double res = 0.0;
  // pi block: d(-ELBO)/d pi_k + lambda_p = 0 with lambda_p eliminated by the
  // simplex condition (sum pi dL = 0 gives lambda_p = sum_k pi_k * tau_col/pi).
  double lambda_p = 0.0;
  for (int k = 0; k < K; ++k) lambda_p += params.pi[k] * (-ga[K + k]);
  for (int k = 0; k < K; ++k) res = std::max(res, std::abs(ga[K + k] + lambda_p));
  // mean block (and gamma, eta where present): plain stationarity.
  for (int k = 0; k < K; ++k) res = std::max(res, std::abs(ga[k]));
  if (variant.has_gamma())
    for (int k = 0; k < K; ++k) res = std::max(res, std::abs(ga[2 * K + k]));
  if (variant.has_eta()) res = std::max(res, std::abs(gb[n * K]));
  // tau rows: residual orthogonal to the row-sum direction. Entries that have
  // underflowed to zero sit on the boundary where the entropy term pins them;
  // they are excluded (their KKT condition is an inequality).
  for (int i = 0; i < n; ++i) {
    double lam = 0.0;
    int live = 0;
    for (int k = 0; k < K; ++k)
      if (vparams.tau(i, k) > 0.0) {
        lam += -gb[i * K + k];
        ++live;
      }
    lam /= std::max(live, 1);
    for (int k = 0; k < K; ++k)
      if (vparams.tau(i, k) > 0.0) res = std::max(res, std::abs(gb[i * K + k] + lam));
  }
  return res;
}

RestartReport restart_experiment(const VemConfig& config, const Dataset& data, int n_restarts,
                                 const InitSampler& sampler, double reference_elbo, double threshold,
                                 int threads) {
  RestartReport report;
  report.threshold = threshold;
  report.rows.resize(n_restarts);

  const int nt = [&] {
    if (threads > 0) return std::min(threads, n_restarts);
    const unsigned hw = std::thread::hardware_concurrency();
    return std::min(hw == 0 ? 1 : static_cast<int>(hw), n_restarts);
  }();

  auto run_one = [&](int r) {
    Rng rng = Rng::substream(config.seed, static_cast<std::uint64_t>(r));
    auto init = sampler.sample(config.variant, data, rng);
    const VemResult res = vem_run(config, data, std::move(init));
    RestartRow row;
    row.restart = r;
    row.seed = config.seed;
    row.final_elbo = res.final_elbo;
    row.iters = res.outer_iterations;
    report.rows[r] = row;
  };

  if (nt <= 1) {
    for (int r = 0; r < n_restarts; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < nt; ++w)
      workers.emplace_back([&]() {
        for (;;) {
          const int r = next.fetch_add(1);
          if (r >= n_restarts) return;
          run_one(r);
        }
      });
    for (auto& w : workers) w.join();
  }

  double ref = reference_elbo;
  if (!std::isfinite(ref)) {
    ref = -std::numeric_limits<double>::infinity();
    for (const auto& row : report.rows) ref = std::max(ref, row.final_elbo);
  }
  report.reference_elbo = ref;
  for (auto& row : report.rows) {
    row.cls = std::abs(row.final_elbo - ref) > threshold ? RestartClass::Local : RestartClass::Global;
    (row.cls == RestartClass::Global ? report.global_count : report.local_count)++;
  }
  return report;
}

}  // namespace gopvi
