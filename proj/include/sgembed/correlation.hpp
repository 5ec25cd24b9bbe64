#pragma once

#include <span>
#include <vector>

namespace sgembed {

// All three throw UndefinedMetricError for inputs shorter than two elements or
// when the coefficient is undefined (a constant input), and DimensionError for
// unequal lengths.

/// Kendall tau-b (tie-corrected), O(n log n).
double kendall_tau(std::span<const double> x, std::span<const double> y);
/// Spearman rho: Pearson correlation of average (fractional) ranks.
double spearman_rho(std::span<const double> x, std::span<const double> y);
double pearson_r(std::span<const double> x, std::span<const double> y);

/// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> x);

}  // namespace sgembed
