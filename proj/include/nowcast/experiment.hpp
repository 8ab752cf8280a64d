#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/mcmc.hpp"
#include "nowcast/prediction.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

// Generative truth covering the four variability sources: a smooth
// epidemic curve with regional offsets and NB noise for the totals, and a
// probit survivor curve with weekly cycle and reporting-speed drift plus
// GDM noise for the delays.
struct SimulationScenario {
  int T = 60, S = 3, d_max = 7;
  std::uint64_t seed = 1;

  double base_log_mean = 3.0;
  std::vector<double> region_offsets;  // length S; zeros when empty
  double trend_amplitude = 1.2;        // log-scale epidemic bump height
  double trend_peak_frac = 0.35;       // bump peak as a fraction of T
  double trend_width_frac = 0.18;      // bump width as a fraction of T
  // Common fast fluctuation shared by all regions (log scale).
  double common_wiggle_amplitude = 0.0;
  double common_wiggle_periods = 3.0;

  std::vector<double> psi_true;    // probit survivor baseline, length d_max-1
  double weekly_amplitude = 0.0;   // weekend effect, probit scale
  double drift_delta = 0.0;        // total probit shift of the reporting-speed ramp
  int drift_start = 0, drift_end = 0;  // ramp window; both 0 = whole series

  double theta = 30.0;
  double phi = 40.0;
  Date origin{18323};  // 2020-03-02, a Monday

  void validate() const;
  // Baseline survivor curve values used when psi_true is empty.
  std::vector<double> effective_psi() const;
};

struct SimulationTruth {
  Eigen::MatrixXd log_lambda;  // T x S
  std::vector<Eigen::MatrixXd> survivor;  // per region: T x (d_max-1)
  double theta = 0.0, phi = 0.0;
};

std::pair<ReportingTriangle, SimulationTruth> simulate_dataset(
    const SimulationScenario& scn);

// ---- rolling prediction experiment ---------------------------------------------

struct RollingConfig {
  int t0_start = 0;
  int n_days = 20;
  std::vector<std::string> models;  // subset of {gdm, nb, rw, window}
  std::optional<int> window;        // window length for the window model
  int horizon = 0;
  McmcConfig mcmc;
  bool warm_start = true;
  int jobs = 1;

  void validate(int T) const;
};

struct PredictionRecord {
  std::string model;
  int t0 = 0;
  int t = 0;
  int s = 0;
  int lead = 0;  // t - t0
  std::string region;
  Date date{};
  RowKind kind = RowKind::nowcast;
  double median = 0.0, q025 = 0.0, q975 = 0.0;
  long truth = 0;     // final observed total (within D_max)
  long partial = 0;   // observed partial sum at fit time
};

struct MetricsRow {
  std::string model;
  std::string region;  // region label or "overall"
  int lead = 0;
  double rmse = 0.0, bias = 0.0, mean_piw = 0.0, coverage95 = 0.0;
  long n = 0;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;

  const MetricsRow* find(const std::string& model, const std::string& region,
                         int lead) const;
  void write_csv(std::ostream& out) const;
  // Region x model blocks of the four metrics at a single lead time.
  void write_table(std::ostream& out, int lead = 0) const;
};

MetricsTable compute_metrics(const std::vector<PredictionRecord>& records);

struct RollingResult {
  MetricsTable metrics;
  std::vector<PredictionRecord> archive;
  // Total unobservable-cell reads recorded across every fit (leakage
  // check; must stay zero).
  long auditor_violations = 0;
  long fit_failures = 0;
};

// Steps per emulated present day: censor, fit every selected model,
// archive predictions by lead time, advance. `spec` configures the GDM and
// the marginal NB structure; its d_max is overridden by the data. The
// overload without a spec uses defaults.
RollingResult run_rolling(const ReportingTriangle& data, const RollingConfig& cfg,
                          const ModelSpec& spec);
RollingResult run_rolling(const ReportingTriangle& data, const RollingConfig& cfg);

}  // namespace nowcast
