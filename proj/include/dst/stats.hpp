#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "dst/tensor.hpp"

namespace dst::stats {

inline double mean(const std::vector<double>& x) {
  if (x.empty()) throw DataError("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double variance(const std::vector<double>& x) {
  if (x.size() < 2) throw DataError("variance needs at least two values");
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

struct TestResult {
  double mean_difference = 0.0;
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
};

/// One-sided paired t-test of H1: mean(a - b) > 0. A zero-variance difference
/// gives p = 0 when the mean difference is positive and p = 1 otherwise.
inline TestResult paired_t_greater(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("paired test needs equal sample sizes");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  TestResult r;
  r.mean_difference = mean(d);
  r.dof = static_cast<double>(d.size() - 1);
  const double sd = std::sqrt(variance(d));
  if (sd == 0.0) {
    r.p = r.mean_difference > 0.0 ? 0.0 : 1.0;
    r.t = r.mean_difference > 0.0 ? INFINITY : (r.mean_difference < 0.0 ? -INFINITY : 0.0);
    return r;
  }
  r.t = r.mean_difference / (sd / std::sqrt(static_cast<double>(d.size())));
  r.p = boost::math::cdf(boost::math::complement(boost::math::students_t(r.dof), r.t));
  return r;
}

/// Two-sided Welch two-sample t-test.
inline TestResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  const double va = variance(a) / static_cast<double>(a.size());
  const double vb = variance(b) / static_cast<double>(b.size());
  TestResult r;
  r.mean_difference = mean(a) - mean(b);
  if (va + vb == 0.0) {
    r.p = r.mean_difference == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = r.mean_difference / std::sqrt(va + vb);
  r.dof = (va + vb) * (va + vb) /
          (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(r.dof), std::abs(r.t)));
  return r;
}

}  // namespace dst::stats
