#pragma once

#include <functional>
#include <string>
#include <vector>

#include "twinnet/tensor.hpp"

namespace twinnet::ad {

// A named parameter handle used by grad_check; the checker perturbs the
// underlying storage in place.
struct CheckedParam {
  std::string name;
  Tensor<double> tensor;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Parameters larger than this get a seeded coordinate subsample.
  size_t max_coords_per_param = 64;
  uint64_t subsample_seed = 0x747769'6eULL;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  size_t coords_checked = 0;
};

// Guarded relative error: |a − n| / max(1, |a|, |n|).
double relative_error(double analytic, double numeric);

// Central-difference check of an analytic gradient. value_fn evaluates the
// loss at the current parameter values; grad_fn returns the analytic gradient
// per parameter (same order as `params`). value_fn must be deterministic;
// this is verified with two initial evaluations.
GradCheckReport grad_check(const std::function<double()>& value_fn,
                           const std::function<std::vector<std::vector<double>>()>& grad_fn,
                           std::vector<CheckedParam>& params,
                           const GradCheckOptions& opts = {});

}  // namespace twinnet::ad
