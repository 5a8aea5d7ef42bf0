#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace dcoach::harness {

// Episode returns of one repetition, stamped with the simulated time at which the episode ended.
struct CurvePoint {
  double time_s = 0;
  double ret = 0;
};
using RepetitionSeries = std::vector<CurvePoint>;

// Value held at each 1 s grid point 0, 1, ..., horizon: the latest return at or before that time, 0 before the first episode ends.
inline std::vector<double> resample_locf(const RepetitionSeries& series, std::size_t horizon_s) {
  std::vector<double> out(horizon_s + 1, 0.0);
  std::size_t k = 0;
  double held = 0.0;
  for (std::size_t g = 0; g <= horizon_s; ++g) {
    while (k < series.size() && series[k].time_s <= static_cast<double>(g)) held = series[k++].ret;
    out[g] = held;
  }
  return out;
}

// 1-based order statistics bounding the central 60% of n samples.
inline std::pair<std::size_t, std::size_t> band_ranks(std::size_t n) {
  if (n == 0) throw std::invalid_argument("band_ranks: no samples");
  const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n) - 1e-9)));
  const auto hi = std::max(lo, static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(n) + 1e-9)));
  return {lo, hi};
}

struct AggregateCurve {
  std::vector<double> time_s, mean, lower, upper;
};

inline AggregateCurve aggregate(const std::vector<std::vector<double>>& grids) {
  if (grids.empty()) throw std::invalid_argument("aggregate: no repetitions");
  const std::size_t len = grids.front().size();
  for (const auto& g : grids) {
    if (g.size() != len) throw std::invalid_argument("aggregate: repetitions have different grid lengths");
  }
  const auto [lo, hi] = band_ranks(grids.size());
  AggregateCurve a;
  std::vector<double> col(grids.size());
  for (std::size_t i = 0; i < len; ++i) {
    double sum = 0;
    for (std::size_t r = 0; r < grids.size(); ++r) {
      col[r] = grids[r][i];
      sum += col[r];
    }
    std::sort(col.begin(), col.end());
    a.time_s.push_back(static_cast<double>(i));
    a.mean.push_back(sum / static_cast<double>(grids.size()));
    a.lower.push_back(col[lo - 1]);
    a.upper.push_back(col[hi - 1]);
  }
  return a;
}

// Mean of the grid values whose time lies in the last `fraction` of the axis.
inline double final_return(const std::vector<double>& grid, double fraction) {
  if (grid.empty()) return 0.0;
  const double horizon = static_cast<double>(grid.size() - 1);
  const double from = horizon * (1.0 - fraction);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (static_cast<double>(g) >= from - 1e-9) {
      sum += grid[g];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

struct SampleStats {
  double mean = 0, variance = 0;  // unbiased variance
  std::size_t n = 0;
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  s.n = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    for (double x : xs) s.variance += (x - s.mean) * (x - s.mean);
    s.variance /= static_cast<double>(s.n - 1);
  }
  return s;
}

struct WelchResult {
  double t = 0, df = 0, p = 1;  // p for the alternative mean(a) > mean(b)
};

inline WelchResult welch_greater(const std::vector<double>& a, const std::vector<double>& b) {
  const auto sa = sample_stats(a), sb = sample_stats(b);
  if (sa.n < 2 || sb.n < 2) throw std::invalid_argument("welch test needs at least two samples per group");
  const double va = sa.variance / static_cast<double>(sa.n), vb = sb.variance / static_cast<double>(sb.n);
  WelchResult r;
  if (va + vb == 0) {
    r.t = sa.mean > sb.mean ? std::numeric_limits<double>::infinity() : 0.0;
    r.df = static_cast<double>(sa.n + sb.n - 2);
    r.p = sa.mean > sb.mean ? 0.0 : 1.0;
    return r;
  }
  r.t = (sa.mean - sb.mean) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) /
         (va * va / static_cast<double>(sa.n - 1) + vb * vb / static_cast<double>(sb.n - 1));
  boost::math::students_t dist(r.df);
  r.p = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

// Columns: time_s mean lower upper; '#' header line so gnuplot skips it.
inline void write_aggregate_dat(std::ostream& os, const AggregateCurve& a) {
  os << "# time_s mean lower upper\n";
  for (std::size_t i = 0; i < a.time_s.size(); ++i) {
    os << a.time_s[i] << ' ' << a.mean[i] << ' ' << a.lower[i] << ' ' << a.upper[i] << '\n';
  }
}

}  // namespace dcoach::harness
