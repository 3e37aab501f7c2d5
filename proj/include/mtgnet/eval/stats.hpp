#pragma once

#include <cmath>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "mtgnet/core/error.hpp"

namespace mtg {

struct TTestResult {
  double t_statistic = 0;
  double p_value = 1;
  int degrees_of_freedom = 0;
  double mean_difference = 0;
  double sd_difference = 0;
};

/// Two-sided paired t-test on post - pre with n - 1 degrees of freedom.
inline TTestResult paired_t_test(const std::vector<double>& pre, const std::vector<double>& post) {
  if (pre.size() != post.size()) throw ValidationError("paired_t_test: samples differ in length");
  const std::size_t n = pre.size();
  if (n < 2) throw ValidationError("paired_t_test needs at least two pairs");
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += post[i] - pre[i];
  mean /= static_cast<double>(n);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) ss += std::pow(post[i] - pre[i] - mean, 2);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) throw ValidationError("paired_t_test: differences have zero variance");
  TTestResult r;
  r.degrees_of_freedom = static_cast<int>(n - 1);
  r.mean_difference = mean;
  r.sd_difference = sd;
  r.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(n - 1));
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_statistic)));
  return r;
}

}  // namespace mtg
