#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "treehop/jsonl.hpp"

namespace treehop {

struct GradCheckOptions {
  std::vector<std::size_t> dims{2, 4, 8};
  std::size_t trials = 100;  // random instances per dimension
  double step = 1e-4;        // central-difference step h
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  std::string worst;  // e.g. "d=4 trial=17 w_key[5]"
  double seconds = 0.0;
  bool passed = false;
};

Json to_json(const GradCheckReport& report);

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// gradient is ~0 from reporting pure rounding noise as relative error.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Analytic backward() against central finite differences of
// L = <u, next_query(params, q, c)> for random params, inputs and u, over
// every parameter and both inputs.
GradCheckReport run_gradcheck(const GradCheckOptions& options);

}  // namespace treehop
