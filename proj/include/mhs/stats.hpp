#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace mhs {

struct FiveNumber {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;

  bool operator==(const FiveNumber&) const = default;
};

// Quantile with linear interpolation between order statistics (the common
// "type 7" definition: position p*(n-1) in the sorted sample).
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

template <typename T>
FiveNumber five_number_summary(std::span<const T> values) {
  if (values.empty()) throw std::invalid_argument("five-number summary of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return {v.front(), quantile_sorted(v, 0.25), quantile_sorted(v, 0.5), quantile_sorted(v, 0.75), v.back()};
}

template <typename T>
FiveNumber five_number_summary(const std::vector<T>& values) {
  return five_number_summary(std::span<const T>(values));
}

}  // namespace mhs
