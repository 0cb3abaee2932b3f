#pragma once
#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace drtep {

// (k+1)-th smallest of the values with k = floor(eps*N): the empirical eps-quantile
// order statistic that caps how far a joint chance constraint may lean on discarding
// samples. N = values.size(). Requires 0 <= eps < 1 and a nonempty set.
inline double order_statistic_q(std::span<const double> values, double eps) {
  if (values.empty()) throw std::invalid_argument("order_statistic_q: empty sample set");
  if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("order_statistic_q: eps outside [0,1)");
  const size_t n = values.size();
  size_t k = size_t(std::floor(eps * double(n)));
  if (k >= n) k = n - 1;
  std::vector<double> v(values.begin(), values.end());
  std::nth_element(v.begin(), v.begin() + k, v.end());
  return v[k];
}

inline double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

inline double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = mean(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Average ranks in 1..n (ties share the mean of the positions they straddle).
inline std::vector<double> average_ranks(std::span<const double> v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    double r = 0.5 * double(i + j) + 1.0;  // mean of 1-based positions i+1..j+1
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: bad inputs");
  double ma = mean(a), mb = mean(b), sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  auto ra = average_ranks(a), rb = average_ranks(b);
  return pearson(ra, rb);
}

// Two-sample Kolmogorov–Smirnov statistic: sup |F_a - F_b| over the pooled support.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / double(a.size()) - double(j) / double(b.size())));
  }
  return d;
}

inline double interquartile_range(std::vector<double> v) {
  if (v.size() < 4) return 0.0;
  std::sort(v.begin(), v.end());
  auto quantile = [&](double p) {
    double idx = p * double(v.size() - 1);
    size_t lo = size_t(idx);
    double frac = idx - double(lo);
    return lo + 1 < v.size() ? v[lo] * (1 - frac) + v[lo + 1] * frac : v[lo];
  };
  return quantile(0.75) - quantile(0.25);
}

}  // namespace drtep
