#pragma once

#include <Eigen/Dense>
#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "nowcast/mcmc.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

enum class RowKind { backfill, nowcast, forecast };

inline const char* row_kind_name(RowKind k) {
  switch (k) {
    case RowKind::backfill: return "backfill";
    case RowKind::nowcast: return "nowcast";
    default: return "forecast";
  }
}

// Predictive quantile levels (fixed set, reported in this order).
inline constexpr std::array<double, 9> kQuantileLevels = {
    0.025, 0.1, 0.175, 0.25, 0.5, 0.75, 0.825, 0.9, 0.975};

struct NowcastRow {
  int t = 0;
  int s = 0;  // 1-based region index; 0 for aggregates
  std::string region;
  Date date{};
  RowKind kind = RowKind::nowcast;
  Eigen::VectorXd draws;  // aligned across rows by (chain, iteration)
  std::array<double, 9> quantiles{};
  long observed_partial = 0;

  double median() const { return quantiles[4]; }
};

struct NowcastResult {
  std::vector<NowcastRow> rows;
  std::vector<std::string> warnings;

  const NowcastRow* find(int t, int s) const;
  void write_csv(std::ostream& out) const;
};

// Type-7 quantile (linear interpolation of order statistics); draws need
// not be sorted.
double quantile_type7(Eigen::VectorXd draws, double level);
std::array<double, 9> quantile_set(const Eigen::VectorXd& draws);

// Predictive totals for every row up to t0 (latent-sample reuse) plus
// `horizon` forecast days (basis extrapolation, NB draws). `data` must be
// the censored triangle the samples were fitted to.
NowcastResult predict_totals(const PosteriorSamples& samples, const CensoredTriangle& data,
                             int horizon);

// Routes to predict_totals or the matching baseline predictor based on
// the sample family.
NowcastResult predict_any(const PosteriorSamples& samples, const CensoredTriangle& data,
                          int horizon);

// Draw-wise sum over a subset of regions (1-based indices); quantiles are
// recomputed from the summed draws.
NowcastResult aggregate(const NowcastResult& result, const std::vector<int>& regions,
                        const std::string& label = "aggregate");

enum class PpcStatistic { sample_mean, sample_variance };

struct PpcResult {
  std::vector<double> replicates;
  double observed = 0.0;
  // min of the two one-sided empirical tail probabilities.
  double tail_prob = 0.5;
  int n_rows = 0;  // fully observed days entering the statistic
};

// Posterior predictive check on fully observed days: replicate totals for
// every fully observed (t,s), sum across regions per day, and compare the
// chosen statistic of those sums against the observed data.
PpcResult posterior_predictive_check(const PosteriorSamples& samples,
                                     const CensoredTriangle& data, PpcStatistic stat);

}  // namespace nowcast
