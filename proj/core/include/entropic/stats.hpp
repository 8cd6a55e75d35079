#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace entropic {

double mean(std::span<const double> v);
double pearson(std::span<const double> a, std::span<const double> b);
// Pearson correlation of average ranks (ties share their mean rank).
double spearman(std::span<const double> a, std::span<const double> b);
std::vector<double> ranks(std::span<const double> v);
// Centered moving average; windows shrink at the ends.
std::vector<double> moving_average(std::span<const double> v, std::size_t window);
// Least-squares slope of log y against log x.
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace entropic
