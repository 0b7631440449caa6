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

#include "gopvi/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace gopvi {

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::ostringstream os;
  os << "iter,elapsed_s,ubd,lbd,pool_live,subproblems_solved\n";
  for (const auto& row : trace) {
    os << row.iter << ',' << format_double(row.elapsed_s) << ',' << format_double(row.ubd) << ','
       << format_double(row.lbd) << ',' << row.pool_live << ',' << row.subproblems_solved << '\n';
  }
  return os.str();
}

std::string restart_csv(const RestartReport& report) {
  std::ostringstream os;
  os << "restart,seed,final_elbo,iters,class\n";
  for (const auto& row : report.rows) {
    os << row.restart << ',' << row.seed << ',' << format_double(row.final_elbo) << ',' << row.iters
       << ',' << (row.cls == RestartClass::Global ? "Global" : "Local") << '\n';
  }
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  out << content;
}

}  // namespace gopvi
