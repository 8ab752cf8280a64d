#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nowcast/model.hpp"

namespace nowcast {

struct McmcConfig {
  int n_chains = 4;
  long n_iterations = 200000;
  long burn_in = 100000;
  int thin = 10;
  std::uint64_t master_seed = 1;
  double target_accept_scalar = 0.44;
  double target_accept_mv = 0.234;
  // Exact conjugate Gibbs for the overall spline coefficients; switching
  // it off falls back to random-walk Metropolis (sampler-equivalence
  // checks).
  bool conjugate_overall = true;
  // Latent missing partial counts are sampled by default; the switch
  // isolates the update so a marginalized variant can replace it.
  bool sample_missing_z = true;
  long cov_adapt_start = 2000;  // iterations before the empirical covariance kicks in
  int n_threads = 1;
  double init_jitter = 1.0;
  // Optional line-delimited progress sink (one JSON object per line).
  std::function<void(const std::string&)> progress;
  long progress_every = 20000;

  void validate() const;
  long n_retained() const { return (n_iterations - burn_in) / thin; }
};

struct BlockStats {
  std::string name;
  long proposals = 0;
  long accepts = 0;
  double final_step = 0.0;
  // (iteration, step size) checkpoints; constant after burn-in.
  std::vector<std::pair<long, double>> step_trace;
  double acceptance_rate() const {
    return proposals > 0 ? static_cast<double>(accepts) / proposals : 0.0;
  }
};

struct ChainDiagnostics {
  std::uint64_t seed = 0;
  std::vector<BlockStats> blocks;
};

struct PosteriorSamples {
  std::string family;  // gdm | marginal_nb | rw_direct | window_nb
  std::string spec_json;
  int T = 0, S = 0, d_max = 0, t0 = 0;
  Date time_origin{};
  std::vector<std::string> region_labels;
  std::uint64_t master_seed = 0;
  long n_iterations = 0, burn_in = 0;
  int thin = 1;

  std::vector<std::string> param_names;
  std::vector<Eigen::MatrixXd> chains;    // per chain: n_retained x P
  std::vector<Eigen::MatrixXd> lambda;    // per chain: n_retained x (T*S), t-major
  std::vector<Eigen::MatrixXd> latent_y;  // per chain: n_retained x n_latent_rows
  std::vector<std::pair<int, int>> latent_rows;
  std::vector<ChainDiagnostics> diagnostics;

  int n_chains() const { return static_cast<int>(chains.size()); }
  long n_retained() const { return chains.empty() ? 0 : chains[0].rows(); }
  int param_index(const std::string& name) const;
  // Pooled draws of one parameter across chains.
  Eigen::VectorXd pooled(int param_index) const;
  Eigen::VectorXd pooled_lambda(int t, int s) const;
};

// ---- engine interfaces ------------------------------------------------------

class Sweeper {
 public:
  virtual ~Sweeper() = default;
  virtual void init(ParameterState& st, Rng& rng) = 0;
  virtual void sweep(ParameterState& st, Rng& rng, long iter, bool adapting) = 0;
  // Current log lambda values, length T*S (t-major); called on retained
  // iterations.
  virtual Eigen::VectorXd log_lambda() const = 0;
  virtual std::vector<BlockStats> block_stats() const = 0;
};

class SamplableModel {
 public:
  virtual ~SamplableModel() = default;
  virtual int T() const = 0;
  virtual int S() const = 0;
  virtual const ParamLayout& layout() const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  virtual ParameterState init_state(Rng& rng, double jitter) const = 0;
  virtual double log_posterior(const ParameterState& st) const = 0;
  virtual std::unique_ptr<Sweeper> make_sweeper(const McmcConfig& cfg) const = 0;
  virtual std::vector<std::pair<int, int>> latent_rows() const = 0;
};

// Runs independent chains of `model` (chain c is seeded master_seed + c)
// and merges the retained draws. `warm_start` optionally supplies one
// initial state per chain; states whose dimensions do not match are
// ignored.
PosteriorSamples run_sampler(const SamplableModel& model, const McmcConfig& cfg,
                             const std::vector<ParameterState>* warm_start = nullptr);

// The GDM fit: builds the model graph for `spec` over `data` and samples
// it. The ReportingTriangle behind `data` must outlive the call.
PosteriorSamples run_chains(const ModelSpec& spec, const CensoredTriangle& data,
                            const McmcConfig& cfg,
                            const std::vector<ParameterState>* warm_start = nullptr);

// ---- latent-total full conditional -------------------------------------------

struct LatentTotalDist {
  long floor = 0;
  std::vector<double> probs;  // probs[i] is P(y = floor + i)
};

// Enumerates the exact discrete full conditional of the total for a
// not-fully-observed row (t,s) under the current state.
LatentTotalDist latent_total_distribution(const GdmModel& model, const ParameterState& st,
                                          int t, int s);
long sample_latent_total(const GdmModel& model, const ParameterState& st, int t, int s,
                         Rng& rng);

// ---- diagnostics ---------------------------------------------------------------

// Split-chain Gelman-Rubin potential scale reduction factor. Each chain is
// split in half; returns 1 with *degenerate = true when every split has
// zero variance.
double psrf(const std::vector<Eigen::VectorXd>& chains, bool* degenerate = nullptr);

struct ConvergenceEntry {
  std::string name;
  double value = 1.0;
  bool degenerate = false;
};

struct ConvergenceReport {
  std::vector<ConvergenceEntry> lambdas;  // one per (t,s)
  std::vector<ConvergenceEntry> thetas;   // one per region
  double frac_lambda_ok = 1.0;
  bool theta_ok = true;
  bool pass = false;  // all theta < 1.05 and >= 93% of lambda < 1.05

  void write_csv(std::ostream& out) const;
};

ConvergenceReport convergence_report(const PosteriorSamples& samples);

// Monte-Carlo standard error of the mean of a draw sequence, by batch
// means.
double mcse_batch_means(const Eigen::VectorXd& draws);

}  // namespace nowcast
