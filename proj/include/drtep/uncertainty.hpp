#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drtep/network.hpp"

namespace drtep {

// Risk and ambiguity settings for the distributionally robust joint chance constraint.
// theta shares units with the aggregated per-line MW errors; the transport metric uses
// the L2 norm, which is its own dual.
struct AmbiguityConfig {
  double eps = 0.05;   // joint violation budget, in (0,1)
  double theta = 1.0;  // Wasserstein radius, MW
  int n = 0;           // training sample count
  void validate() const;
};

// Dependence model for the per-farm forecast errors (fractions of installed capacity):
// Gaussian kernel density estimates for the marginals plus a Gaussian copula fitted on
// normal scores. A degenerate marginal (all observations equal) is kept as a point mass.
struct CopulaModel {
  struct Marginal {
    std::vector<double> points;  // observed history, ascending
    double bandwidth = 0;        // 0 marks a point mass at points.front()
    std::vector<double> grid_x;  // precomputed CDF table for fast quantile inversion
    std::vector<double> grid_F;
  };
  std::vector<Marginal> marginals;
  std::vector<double> correlation;  // dim x dim row-major, unit diagonal
  std::vector<double> chol;         // lower Cholesky factor after the PSD repair

  int dim() const { return int(marginals.size()); }
  double corr(int a, int b) const { return correlation[size_t(a) * marginals.size() + size_t(b)]; }
};

// Fit marginal KDEs (Silverman bandwidths) and the normal-scores correlation from
// history rows (row = one observation across all farms). Needs at least 20 rows.
CopulaModel fit_copula(const std::vector<std::vector<double>>& history_rows);

// KDE cumulative distribution / quantile for one coordinate (exposed for testing).
double marginal_cdf(const CopulaModel& m, int coord, double x);
double marginal_quantile(const CopulaModel& m, int coord, double u);

// Deterministic copula draws in history units; rows[i][coord]. Same seed, same bytes.
std::vector<std::vector<double>> sample_rows(const CopulaModel& m, int count, std::uint64_t seed);

// A train or test set of per-farm forecast errors in MW. One independent farm-joint
// draw per (sample, period, condition) triple; entries are clipped so that forecast
// plus error stays within [0, installed capacity].
struct ErrorSampleSet {
  std::string role;  // "train" or "test"
  std::uint64_t seed = 0;
  int periods = 0, conditions = 0;
  std::vector<int> farm_ids;    // participant ids of the wind farms, ascending
  std::vector<double> values;   // [((i*T + t)*S + s)*F + f]

  int count() const {
    size_t block = size_t(periods) * size_t(conditions) * farm_ids.size();
    return block == 0 ? 0 : int(values.size() / block);
  }
  double at(int i, int t, int s, int f) const {
    return values[((size_t(i) * periods + t) * conditions + s) * farm_ids.size() + f];
  }
};

// Draw `count` samples for every (period, condition) block of the case, scale the
// fractional draws by installed capacity, and clip against the block's forecast.
ErrorSampleSet sample_error_set(const CopulaModel& m, const NetworkCase& c, int count,
                                std::uint64_t seed, const std::string& role);

// Clamp an externally supplied sample set to the case's physical envelope.
void clip_errors(ErrorSampleSet& set, const NetworkCase& c);

// Per-line aggregated errors under one network configuration:
// xi_{t,s,l,i} = sum_f s(bus(f), l) * e_{i,t,s,f}. Each line's N-vector is contiguous.
struct AggregatedErrors {
  int periods = 0, conditions = 0, n_lines = 0, count = 0;
  std::vector<double> values;  // [((t*S + s)*L + l)*N + i]

  double at(int t, int s, int l, int i) const {
    return values[((size_t(t) * conditions + s) * n_lines + l) * count + i];
  }
  std::span<const double> line_series(int t, int s, int l) const {
    return {values.data() + ((size_t(t) * conditions + s) * n_lines + l) * count,
            size_t(count)};
  }
};

AggregatedErrors aggregate_line_errors(const ErrorSampleSet& set, const NetworkCase& c,
                                       const Configuration& cfg);

// Order-statistic bounds on how much headroom the training errors can consume, per
// (period, condition, line, configuration): Q^max from the negated aggregates, Q^min
// from the positive ones. Entries for invalid configurations stay zero.
struct QTables {
  int periods = 0, conditions = 0, n_lines = 0, n_configs = 0;
  std::vector<double> qmax, qmin;  // [((t*S + s)*L + l)*C + c]

  double at_max(int t, int s, int l, int c) const {
    return qmax[((size_t(t) * conditions + s) * n_lines + l) * n_configs + c];
  }
  double at_min(int t, int s, int l, int c) const {
    return qmin[((size_t(t) * conditions + s) * n_lines + l) * n_configs + c];
  }
};

QTables precompute_Q(const ErrorSampleSet& set, const NetworkCase& c,
                     const std::vector<Configuration>& cfgs, double eps);

// CSV exchange format: header `sample_id,t,s,farm_id,error_mw`, 12 significant digits.
std::string samples_to_csv(const ErrorSampleSet& set);
ErrorSampleSet samples_from_csv(const std::string& text, const std::string& role);
void save_samples_csv(const ErrorSampleSet& set, const std::string& path);
ErrorSampleSet load_samples_csv(const std::string& path, const std::string& role);

}  // namespace drtep
