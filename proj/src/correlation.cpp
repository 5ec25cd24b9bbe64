#include "sgembed/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "sgembed/error.hpp"

namespace sgembed {

namespace {

void check_inputs(std::span<const double> x, std::span<const double> y, const char* name) {
  if (x.size() != y.size()) {
    throw DimensionError(std::string(name) + ": inputs of length " + std::to_string(x.size()) +
                         " and " + std::to_string(y.size()));
  }
  if (x.size() < 2) {
    throw UndefinedMetricError(std::string(name) + ": needs at least two observations");
  }
}

// Number of pairs tied within runs of equal keys in an already sorted order.
template <class Equal>
std::int64_t tied_pairs(std::span<const std::size_t> order, Equal equal) {
  std::int64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= order.size(); ++i) {
    if (i < order.size() && equal(order[i - 1], order[i])) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Stable merge sort of `order` by y, returning the number of inversions.
std::int64_t sort_counting_swaps(std::vector<std::size_t>& order, std::span<const double> y) {
  std::vector<std::size_t> buffer(order.size());
  std::int64_t swaps = 0;
  for (std::size_t width = 1; width < order.size(); width *= 2) {
    for (std::size_t lo = 0; lo < order.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, order.size());
      const std::size_t hi = std::min(lo + 2 * width, order.size());
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (y[order[j]] < y[order[i]]) {
          swaps += static_cast<std::int64_t>(mid - i);
          buffer[k++] = order[j++];
        } else {
          buffer[k++] = order[i++];
        }
      }
      while (i < mid) buffer[k++] = order[i++];
      while (j < hi) buffer[k++] = order[j++];
    }
    order.swap(buffer);
  }
  return swaps;
}

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y, "kendall_tau");
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  const auto total = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  const std::int64_t x_ties = tied_pairs(order, [&](std::size_t a, std::size_t b) { return x[a] == x[b]; });
  const std::int64_t joint_ties = tied_pairs(
      order, [&](std::size_t a, std::size_t b) { return x[a] == x[b] && y[a] == y[b]; });
  const std::int64_t swaps = sort_counting_swaps(order, y);
  const std::int64_t y_ties = tied_pairs(order, [&](std::size_t a, std::size_t b) { return y[a] == y[b]; });

  const std::int64_t x_untied = total - x_ties;
  const std::int64_t y_untied = total - y_ties;
  if (x_untied == 0 || y_untied == 0) {
    throw UndefinedMetricError("kendall_tau: an input is constant");
  }
  // concordant - discordant over pairs untied in both coordinates
  const std::int64_t numerator = total - x_ties - y_ties + joint_ties - 2 * swaps;
  return static_cast<double>(numerator) /
         std::sqrt(static_cast<double>(x_untied) * static_cast<double>(y_untied));
}

std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y, "pearson_r");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("pearson_r: an input is constant");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  check_inputs(x, y, "spearman_rho");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  try {
    return pearson_r(rx, ry);
  } catch (const UndefinedMetricError&) {
    throw UndefinedMetricError("spearman_rho: an input is constant");
  }
}

}  // namespace sgembed
