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
#include <vector>

#include "gopvi/models.hpp"
#include "gopvi/types.hpp"

namespace gopvi {

struct VemConfig {
  ModelVariant variant;
  double tol = 1e-8;      // |ELBO change| fixed-point tolerance
  int max_outer = 1000;
  int max_inner = 100;    // nested E-step loop
  double inner_tol = 1e-10;
  std::uint64_t seed = 0;
};

struct VemResult {
  ModelParams params;
  VariationalParams vparams;
  double final_elbo = 0.0;
  int outer_iterations = 0;
  bool hit_iteration_cap = false;
  std::vector<double> elbo_trace;  // one entry per outer sweep
};

// Initialization sampler of the convergence experiment: pi and tau rows from
// Dirichlet(dirichlet_alpha), Gamma-prior variance from Gamma(shape=gamma_shape,
// scale=1), nu uniform over [nu_lo, nu_hi].
struct InitSampler {
  Vector dirichlet_alpha;
  double gamma_shape = 1.0;
  double nu_lo = 0.0;
  double nu_hi = 1.0;

  static InitSampler defaults(const ModelVariant& variant, const Dataset& data);
  std::pair<ModelParams, VariationalParams> sample(const ModelVariant& variant, const Dataset& data,
                                                   Rng& rng) const;
};

// Coordinate-ascent variational EM per the model's update formulas: M-step
// (pi, eta_m), then the E-step (tau, nu[, gamma]) iterated to its own fixed
// point, until the ELBO stops moving. The ELBO trace is non-decreasing.
VemResult vem_run(const VemConfig& config, const Dataset& data,
                  std::pair<ModelParams, VariationalParams> init);

// Max |stationarity residual| of the ELBO Lagrangian at (params, vparams),
// with the simplex multipliers eliminated by their closed forms. Near zero
// exactly at VEM fixed points.
double vem_kkt_residual(const ModelVariant& variant, const ModelParams& params,
                        const VariationalParams& vparams, const Dataset& data);

enum class RestartClass { Global, Local };

struct RestartRow {
  int restart = 0;
  std::uint64_t seed = 0;
  double final_elbo = 0.0;
  int iters = 0;
  RestartClass cls = RestartClass::Local;
};

struct RestartReport {
  std::vector<RestartRow> rows;
  double reference_elbo = 0.0;  // optimum the classification compares against
  double threshold = 1.0;
  int global_count = 0;
  int local_count = 0;
};

// n_restarts independent VEM runs from sampler draws; each restart owns the
// RNG substream (seed, index), so reports are identical for any thread count.
// If reference_elbo is NaN the best final ELBO across the report is used.
RestartReport restart_experiment(const VemConfig& config, const Dataset& data, int n_restarts,
                                 const InitSampler& sampler, double reference_elbo,
                                 double threshold = 1.0, int threads = 0);

}  // namespace gopvi
