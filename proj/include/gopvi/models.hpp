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

#include <optional>
#include <string>
#include <vector>

#include "gopvi/core.hpp"
#include "gopvi/types.hpp"

namespace gopvi {

struct Dataset {
  Vector y;

  int n() const { return static_cast<int>(y.size()); }
  double min() const { return y.minCoeff(); }
  double max() const { return y.maxCoeff(); }
  double range() const { return max() - min(); }

  // One real per line; blank lines and '#' comments ignored.
  static Dataset load(const std::string& path);
  void validate() const;  // N >= 1, all finite
};

enum class ModelKind { Gmm, BgmmPointMass, BgmmGaussian };

// Which additive constants the reported ELBO carries. Proportional matches
// the expanded forms the updates are derived from; Full restores the dropped
// -(N/2)log(2 pi) likelihood constant and, for the BGMM variants, the
// -(K/2)log(2 pi) prior constant (the Jensen bound holds in Full form).
enum class ElboConvention { Proportional, Full };

struct ModelVariant {
  ModelKind tag = ModelKind::BgmmPointMass;
  int K = 2;
  ElboConvention elbo_constant_convention = ElboConvention::Proportional;

  bool has_eta() const { return tag != ModelKind::Gmm; }
  bool has_gamma() const { return tag == ModelKind::BgmmGaussian; }
  void validate() const;
};

const char* to_string(ModelKind k);
std::optional<ModelKind> parse_model_kind(const std::string& s);

// phi: mixture weights plus, for the BGMM variants, the natural parameter
// eta_m = -1/(2 Gamma) < 0. For the plain GMM `mu` holds the cluster means
// and eta_m is unused.
struct ModelParams {
  Vector pi;
  double eta_m = -0.5;

  double gamma_moment() const { return -1.0 / (2.0 * eta_m); }
};

// xi: responsibilities tau (N x K, rows on the simplex), variational means
// nu, and for the Gaussian approximation the variational variances gamma.
struct VariationalParams {
  Matrix tau;
  Vector nu;
  Vector gamma;  // size 0 unless BgmmGaussian
};

struct BoundsConfig {
  double nu_pad_fraction = 0.1;   // box = [min y - pad*range, max y + pad*range]
  double prob_floor = 1e-6;       // lower bound for pi and tau entries
  double gamma_floor = 1e-6;
  double eta_lower = -50.0;       // Gamma <= 0.01 excluded
  double eta_upper = -1.0 / (2.0 * 1e4);  // Gamma >= 1e4 excluded
};

// Evidence lower bound under the variant's constant convention. Throws
// DomainError when a log argument is nonpositive at a point where the term
// has weight.
double elbo(const ModelVariant& variant, const ModelParams& params, const VariationalParams& vparams,
            const Dataset& data);

// Analytic gradients of the negative ELBO in the variant's (alpha, beta)
// partition, packed in the same layout as build_problem uses.
std::pair<Vector, Vector> elbo_gradients(const ModelVariant& variant, const ModelParams& params,
                                         const VariationalParams& vparams, const Dataset& data);

// Flat-vector packing used by the solver spaces.
//   Gmm:          alpha = [mu(K), pi(K)],            beta = [tau(N*K) row-major]
//   BgmmPointMass alpha = [nu(K), pi(K)],            beta = [tau, eta_m]
//   BgmmGaussian  alpha = [nu(K), pi(K), gamma(K)],  beta = [tau, eta_m]
Vector pack_alpha(const ModelVariant& v, const ModelParams& p, const VariationalParams& q);
Vector pack_beta(const ModelVariant& v, const ModelParams& p, const VariationalParams& q, int n);
void unpack(const ModelVariant& v, const Vector& alpha, const Vector& beta, int n, ModelParams& p,
            VariationalParams& q);

// Builds the BiconvexProblem instance: negative-ELBO objective, partition,
// simplex groups, default boxes, diagonal Hessians, closed-form primal, the
// affine-in-beta decomposition of grad_alpha, and the coordinate polish.
BiconvexProblem build_problem(const ModelVariant& variant, const Dataset& data,
                              const BoundsConfig& bounds = {});

// alpha minimizing the negative ELBO at fixed beta, with the pi-simplex
// multiplier (= N) and any active box-bound multipliers.
PrimalSolution primal_closed_form(const ModelVariant& variant, const Vector& beta, const Dataset& data,
                                  const BoundsConfig& bounds = {});

// Exact marginal log-likelihood of the point-mass BGMM generative model
// (pi drops out). DomainError for gamma_value <= -1.
double analytic_loglik(double gamma_value, const Dataset& data);

// (1/N) sum y_i^2 - 1, the stationary point of analytic_loglik.
double mle_gamma(const Dataset& data);

}  // namespace gopvi
