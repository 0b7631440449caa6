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

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace gopvi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for all solver errors so callers can catch the family at once.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : Error {
  using Error::Error;
};
struct InvalidSpace : Error {
  using Error::Error;
};
struct NonBiconvex : Error {
  using Error::Error;
};
struct GradientMismatch : Error {
  using Error::Error;
};
struct InfeasibleStart : Error {
  using Error::Error;
};
struct PoolExhausted : Error {
  using Error::Error;
};
struct InternalError : Error {
  using Error::Error;
};

}  // namespace gopvi
