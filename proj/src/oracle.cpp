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

#include "gopvi/oracle.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

namespace gopvi {

namespace {

// Canonical order: clusters sorted by nu ascending, factoring out label
// switching before deduplication.
void canonicalize(const ModelVariant& v, ModelParams& p, VariationalParams& q) {
  const int K = v.K;
  std::vector<int> idx(K);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return q.nu[a] < q.nu[b]; });
  ModelParams p2 = p;
  VariationalParams q2 = q;
  for (int k = 0; k < K; ++k) {
    p2.pi[k] = p.pi[idx[k]];
    q2.nu[k] = q.nu[idx[k]];
    if (v.has_gamma()) q2.gamma[k] = q.gamma[idx[k]];
    for (int i = 0; i < q.tau.rows(); ++i) q2.tau(i, k) = q.tau(i, idx[k]);
  }
  p = std::move(p2);
  q = std::move(q2);
}

Vector signature(const ModelVariant& v, const ModelParams& p, const VariationalParams& q) {
  const int K = v.K;
  Vector s(2 * K + (v.has_gamma() ? K : 0) + (v.has_eta() ? 1 : 0));
  s.head(K) = q.nu;
  s.segment(K, K) = p.pi;
  int at = 2 * K;
  if (v.has_gamma()) {
    s.segment(at, K) = q.gamma;
    at += K;
  }
  if (v.has_eta()) s[at] = p.gamma_moment();
  return s;
}

struct Candidate {
  double elbo = 0.0;
  ModelParams params;
  VariationalParams vparams;
  Vector sig;
};

}  // namespace

OracleResult certify_optimum(const ModelVariant& variant, const Dataset& data, const OracleConfig& config,
                             const BoundsConfig& bounds) {
  const BiconvexProblem problem = build_problem(variant, data, bounds);
  const InitSampler sampler = InitSampler::defaults(variant, data);

  VemConfig vcfg;
  vcfg.variant = variant;
  vcfg.tol = 1e-12;
  vcfg.max_outer = 5000;
  vcfg.seed = config.seed;

  std::vector<Candidate> cands(config.n_starts);
  auto run_one = [&](int s) {
    Rng rng = Rng::substream(config.seed, static_cast<std::uint64_t>(s));
    auto init = sampler.sample(variant, data, rng);
    VemResult res = vem_run(vcfg, data, std::move(init));

    // Project into the problem's boxes and descend to the exact fixed point
    // of the box-constrained problem, the one the solver's bounds refer to.
    Vector a = pack_alpha(variant, res.params, res.vparams);
    Vector b = pack_beta(variant, res.params, res.vparams, data.n());
    for (int j = 0; j < a.size(); ++j) a[j] = std::clamp(a[j], problem.alpha.lower[j], problem.alpha.upper[j]);
    for (int j = 0; j < b.size(); ++j) b[j] = std::clamp(b[j], problem.beta.lower[j], problem.beta.upper[j]);
    double prev = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < 2000; ++sweep) {
      problem.coordinate_polish(a, b);
      const double cur = problem.objective(a, b);
      if (std::abs(prev - cur) <= config.polish_tol * std::max(1.0, std::abs(cur))) break;
      prev = cur;
    }
    Candidate c;
    unpack(variant, a, b, data.n(), c.params, c.vparams);
    c.elbo = -problem.objective(a, b);
    canonicalize(variant, c.params, c.vparams);
    c.sig = signature(variant, c.params, c.vparams);
    cands[s] = std::move(c);
  };

  const int nt = [&] {
    if (config.threads > 0) return std::min(config.threads, config.n_starts);
    const unsigned hw = std::thread::hardware_concurrency();
    return std::min(hw == 0 ? 1 : static_cast<int>(hw), config.n_starts);
  }();
  if (nt <= 1) {
    for (int s = 0; s < config.n_starts; ++s) run_one(s);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < nt; ++w)
      workers.emplace_back([&]() {
        for (;;) {
          const int s = next.fetch_add(1);
          if (s >= config.n_starts) return;
          run_one(s);
        }
      });
    for (auto& w : workers) w.join();
  }

  // Deduplicate in start order, so clustering is independent of scheduling.
  OracleResult out;
  out.n_starts = config.n_starts;
  for (const auto& c : cands) {
    bool merged = false;
    for (auto& opt : out.optima) {
      const Vector ref = signature(variant, opt.params, opt.vparams);
      if ((ref - c.sig).norm() <= config.cluster_radius) {
        ++opt.basin_count;
        if (c.elbo > opt.elbo) {
          opt.elbo = c.elbo;
          opt.params = c.params;
          opt.vparams = c.vparams;
        }
        merged = true;
        break;
      }
    }
    if (!merged) {
      OracleOptimum opt;
      opt.elbo = c.elbo;
      opt.params = c.params;
      opt.vparams = c.vparams;
      opt.basin_count = 1;
      out.optima.push_back(std::move(opt));
    }
  }
  std::stable_sort(out.optima.begin(), out.optima.end(),
                   [](const OracleOptimum& a, const OracleOptimum& b) { return a.elbo > b.elbo; });
  out.best_elbo = out.optima.front().elbo;
  out.best_params = out.optima.front().params;
  out.best_vparams = out.optima.front().vparams;
  return out;
}

double finite_diff_check(const std::function<double(const Vector&)>& f,
                         const std::function<Vector(const Vector&)>& grad, const std::vector<Vector>& points,
                         double h) {
  double worst = 0.0;
  for (const auto& x : points) {
    const Vector g = grad(x);
    Vector fd(x.size());
    Vector xp = x;
    for (int j = 0; j < x.size(); ++j) {
      xp[j] = x[j] + h;
      const double fp = f(xp);
      xp[j] = x[j] - h;
      const double fm = f(xp);
      xp[j] = x[j];
      fd[j] = (fp - fm) / (2.0 * h);
    }
    const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
    worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

bool psd_check(const Matrix& hessian, double tol) {
  const Matrix sym = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

}  // namespace gopvi
