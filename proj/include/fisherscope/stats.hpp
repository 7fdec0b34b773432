#pragma once

#include <span>
#include <vector>

namespace fisherscope::stats {

double mean(std::span<const double> x);
/// Population (divide-by-n) standard deviation.
double stddev(std::span<const double> x);
/// Linear-interpolation quantile, q in [0, 1].
double quantile(std::span<const double> x, double q);
double iqr(std::span<const double> x);
/// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> x);
/// Returns 0 when either input has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace fisherscope::stats
