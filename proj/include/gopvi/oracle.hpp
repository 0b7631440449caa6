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
#include <functional>
#include <vector>

#include "gopvi/models.hpp"
#include "gopvi/types.hpp"
#include "gopvi/vem.hpp"

namespace gopvi {

struct OracleConfig {
  int n_starts = 1000;
  double polish_tol = 1e-12;
  std::uint64_t seed = 0;
  double cluster_radius = 1e-2;  // optima deduplication distance
  int threads = 0;
};

struct OracleOptimum {
  double elbo = 0.0;
  ModelParams params;
  VariationalParams vparams;
  int basin_count = 0;
};

struct OracleResult {
  double best_elbo = 0.0;
  ModelParams best_params;
  VariationalParams best_vparams;
  std::vector<OracleOptimum> optima;  // descending ELBO
  int n_starts = 0;
};

// Multistart VEM, each run box-polished to an exact fixed point of the
// box-constrained problem, deduplicated after sorting clusters by nu to
// factor out label switching. Deterministic given the seed.
OracleResult certify_optimum(const ModelVariant& variant, const Dataset& data, const OracleConfig& config,
                             const BoundsConfig& bounds = {});

// Worst relative central-difference error of grad against f over the points.
// Points must keep an h margin to any domain boundary.
double finite_diff_check(const std::function<double(const Vector&)>& f,
                         const std::function<Vector(const Vector&)>& grad, const std::vector<Vector>& points,
                         double h);

// True iff the symmetrized matrix has min eigenvalue >= -tol.
bool psd_check(const Matrix& hessian, double tol);

}  // namespace gopvi
