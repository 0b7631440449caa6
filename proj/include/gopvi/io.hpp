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

#include <string>
#include <vector>

#include "gopvi/engine.hpp"
#include "gopvi/types.hpp"
#include "gopvi/vem.hpp"

namespace gopvi {

// Shortest round-trip decimal form, locale independent ('.' decimal point).
std::string format_double(double x);

// header: iter,elapsed_s,ubd,lbd,pool_live,subproblems_solved
std::string trace_csv(const std::vector<TraceRecord>& trace);

// header: restart,seed,final_elbo,iters,class
std::string restart_csv(const RestartReport& report);

void write_file(const std::string& path, const std::string& content);

}  // namespace gopvi
