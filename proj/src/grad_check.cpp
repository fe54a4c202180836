#include "twinnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "twinnet/rng.hpp"

namespace twinnet::ad {

double relative_error(double analytic, double numeric) {
  double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(
    const std::function<double()>& value_fn,
    const std::function<std::vector<std::vector<double>>()>& grad_fn,
    std::vector<CheckedParam>& params, const GradCheckOptions& opts) {
  const double f0 = value_fn();
  const double f1 = value_fn();
  if (f0 != f1)
    throw InvalidArgument(str_cat("grad_check: loss_fn is non-deterministic (",
                                  f0, " vs ", f1, ")"));

  std::vector<std::vector<double>> analytic = grad_fn();
  if (analytic.size() != params.size())
    throw InvalidArgument("grad_check: gradient count does not match params");

  GradCheckReport report;
  Rng coord_rng(opts.subsample_seed);
  for (size_t p = 0; p < params.size(); ++p) {
    auto& values = *params[p].tensor.values;
    if (analytic[p].size() != values.size())
      throw InvalidArgument(str_cat("grad_check: gradient size mismatch for ",
                                    params[p].name));
    std::vector<size_t> coords;
    if (values.size() <= opts.max_coords_per_param) {
      coords.resize(values.size());
      for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      for (size_t i = 0; i < opts.max_coords_per_param; ++i)
        coords.push_back(static_cast<size_t>(coord_rng.below(values.size())));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + opts.epsilon;
      const double fp = value_fn();
      values[c] = saved - opts.epsilon;
      const double fm = value_fn();
      values[c] = saved;
      const double numeric = (fp - fm) / (2.0 * opts.epsilon);
      const double err = relative_error(analytic[p][c], numeric);
      ++report.coords_checked;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = params[p].name;
        report.worst_coord = c;
        report.worst_analytic = analytic[p][c];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace twinnet::ad
