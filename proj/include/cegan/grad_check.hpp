#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace cegan {

/// A scalar function of a flat parameter vector together with its analytic
/// gradient, as produced by a tape backward pass.
struct DifferentiableScalarFn {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compare the analytic gradient against central finite differences.
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|);
/// the maximum over coordinates is returned.
inline GradCheckReport grad_check_report(const DifferentiableScalarFn& fn,
                                         std::span<const double> params,
                                         double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> analytic = fn.gradient(p);
  if (analytic.size() != p.size())
    throw std::invalid_argument("grad_check: gradient length mismatch");

  GradCheckReport report;
  const double half_inv = 0.5 / step;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + step;
    const double fp = fn.value(p);
    p[i] = keep - step;
    const double fm = fn.value(p);
    p[i] = keep;
    const double numeric = (fp - fm) * half_inv;
    const double denom = std::max(1.0, std::abs(analytic[i]));
    const double err = std::abs(analytic[i] - numeric) / denom;
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

inline double grad_check(const DifferentiableScalarFn& fn,
                         std::span<const double> params, double step) {
  return grad_check_report(fn, params, step).max_rel_error;
}

}  // namespace cegan
