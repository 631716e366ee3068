#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "srl4h/errors.hpp"

namespace srl4h::diff {

// Returns the loss at `point`; fills `grad` with the analytic gradient when non-null.
using LossFn = std::function<double(const Eigen::VectorXd& point, Eigen::VectorXd* grad)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  Eigen::Index worst_index = -1;
  bool finite = true;
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;  // only filled at checked coordinates
};

// Central differences per coordinate against the analytic gradient. The
// relative error uses max(|analytic|, |numeric|, 1e-12) as denominator.
// `coords` restricts the check to a subset of coordinates.
inline GradCheckResult finite_diff_check(const LossFn& loss, const Eigen::VectorXd& point, double h,
                                         const std::optional<std::vector<Eigen::Index>>& coords = std::nullopt) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
  GradCheckResult r;
  r.analytic = Eigen::VectorXd::Zero(point.size());
  const double base = loss(point, &r.analytic);
  r.numeric = Eigen::VectorXd::Zero(point.size());
  if (!std::isfinite(base) || !r.analytic.allFinite()) {
    r.finite = false;
    r.max_relative_error = std::numeric_limits<double>::infinity();
    return r;
  }

  std::vector<Eigen::Index> idx;
  if (coords) {
    idx = *coords;
  } else {
    idx.resize(static_cast<std::size_t>(point.size()));
    for (Eigen::Index i = 0; i < point.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  }

  Eigen::VectorXd x = point;
  for (Eigen::Index i : idx) {
    if (i < 0 || i >= point.size()) throw ConfigError("finite_diff_check: coordinate out of range");
    const double x0 = x(i);
    x(i) = x0 + h;
    const double fp = loss(x, nullptr);
    x(i) = x0 - h;
    const double fm = loss(x, nullptr);
    x(i) = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      r.finite = false;
      r.worst_index = i;
      r.max_relative_error = std::numeric_limits<double>::infinity();
      return r;
    }
    const double num = (fp - fm) / (2.0 * h);
    r.numeric(i) = num;
    const double a = r.analytic(i);
    const double denom = std::max({std::abs(a), std::abs(num), 1e-12});
    const double rel = std::abs(a - num) / denom;
    if (r.worst_index < 0 || rel > r.max_relative_error) {
      r.max_relative_error = rel;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace srl4h::diff
