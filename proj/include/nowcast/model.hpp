#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/distributions.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/splines.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

enum class LinkVariant { survivor_probit, hazard_logit };

struct SplineTermSpec {
  bool enabled = false;
  int K = 10;
  double period = 0.0;  // cyclic kinds only
};

struct PriorSpec {
  double theta_shape = 2.0, theta_rate = 0.02;
  double phi_shape = 2.0, phi_rate = 0.02;
  double sigma_halfnormal_sd = 1.0;
  double intercept_sd = 10.0;
  double psi_rw_sd = 10.0;
};

// Binomial thinning of the true count (disabled by default). Requires an
// informative prior on the logit reporting-probability intercept;
// otherwise the likelihood cannot separate a high incidence rate from a
// low reporting rate.
struct UnderReportingSpec {
  bool enabled = false;
  double prior_mean = 0.0;
  double prior_sd = 0.5;
};

// Declarative model description: which smooth components enter the mean
// model f(t,s) and the delay model g(t,s,d), the link for the delay
// distribution, priors, and the D' truncation level.
struct ModelSpec {
  int d_max = 14;
  int d_prime = 6;
  LinkVariant link = LinkVariant::survivor_probit;

  SplineTermSpec f_temporal{true, 10, 0.0};
  SplineTermSpec f_seasonal{false, 8, 365.25};
  SplineTermSpec g_temporal{true, 10, 0.0};
  SplineTermSpec g_weekly{true, 7, 7.0};

  PriorSpec priors;
  UnderReportingSpec underreporting;
  std::optional<double> fixed_theta;  // diagnostic knob: pins theta_s

  void validate() const;
  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
};

// Flat sampling-scale state. Positive parameters are stored as logs and
// the delay baseline as (psi_1, log increments) under the survivor link,
// so every real coordinate is unconstrained; the priors include the
// corresponding Jacobians.
struct ParameterState {
  Eigen::VectorXd params;
  std::vector<long> latent_y;  // one per not-fully-observed row
  std::vector<long> latent_z;  // one per imputed missing cell
  std::vector<long> latent_x;  // true counts, under-reporting layer only
};

struct ParamBlock {
  std::string name;
  int offset = 0;
  int size = 0;
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;
  int total = 0;

  int add(const std::string& name, int size);
  const ParamBlock& block(const std::string& name) const;
  bool has(const std::string& name) const;
};

// Runtime form of one nested spline term: a shared (overall) coefficient
// vector acting as the prior mean of per-region coefficient vectors, each
// penalized by the basis penalty scaled from its own standard-deviation
// parameter.
struct NestedTerm {
  std::string name;
  SplineTermSpec term_spec;
  BasisWithPenalty basis;
  Eigen::MatrixXd Xt;  // T x K design at the data time points
  Eigen::MatrixXd B;   // M + eps*I
  Eigen::LLT<Eigen::MatrixXd> cholB;
  double logdetB = 0.0;
  int off_overall = 0, off_region = 0, off_lsig_overall = 0, off_lsig_region = 0;
  int K = 0;
};

// Stick-breaking transform of a survivor curve (S_0 := 0):
// nu_d = (S_d - S_{d-1}) / (1 - S_{d-1}). Input must be strictly
// increasing inside (0,1); output has length S.size().
Eigen::VectorXd survivor_to_relative_means(const Eigen::VectorXd& S);

// The assembled joint model for one censored triangle. Evaluation methods
// are reference implementations (recompute from scratch); the MCMC
// sweeper keeps its own incremental caches and is tested against these.
class GdmModel {
 public:
  // The underlying ReportingTriangle must outlive the model.
  GdmModel(const ModelSpec& spec, const CensoredTriangle& data);

  const ModelSpec& spec() const { return spec_; }
  const CensoredTriangle& data() const { return data_; }
  const ParamLayout& layout() const { return layout_; }
  const std::vector<NestedTerm>& f_terms() const { return f_terms_; }
  const std::vector<NestedTerm>& g_terms() const { return g_terms_; }
  int T() const { return data_.T(); }
  int S() const { return data_.S(); }
  // Number of explicitly modelled delay splits: min(D', D_max - 1).
  int n_model_delays() const { return n_model_delays_; }

  // Natural-scale accessors.
  double iota(const ParameterState& st, int s) const;
  double theta(const ParameterState& st, int s) const;
  double phi(const ParameterState& st, int s, int d) const;
  // psi matrix row s, entries d = 1..D_max (strictly increasing under the
  // survivor link).
  Eigen::VectorXd psi(const ParameterState& st, int s) const;

  double eval_f(const ParameterState& st, int t, int s) const;  // log lambda
  // gamma + xi: the delay-model offset shared by all delays of (t,s).
  double delay_offset(const ParameterState& st, int t, int s) const;
  // Survivor link only: S_d = Phi(psi[s,d] + offset), length D_max.
  Eigen::VectorXd eval_survivor_curve(const ParameterState& st, int t, int s) const;
  // Relative means nu, length D_max - 1; dispatches on the link variant.
  Eigen::VectorXd relative_means(const ParameterState& st, int t, int s) const;

  double log_likelihood(const ParameterState& st) const;
  double log_prior(const ParameterState& st) const;
  double log_posterior(const ParameterState& st) const;

  // (log lambda for the true count x, logit reporting probability).
  std::pair<double, double> underreporting_terms(const ParameterState& st, int t,
                                                 int s) const;

  // Deterministic moment-based initialization plus per-chain jitter.
  ParameterState init_state(Rng& rng, double jitter = 1.0) const;

  // Latent bookkeeping.
  const std::vector<std::pair<int, int>>& latent_rows() const { return latent_rows_; }
  const std::vector<std::tuple<int, int, int>>& missing_cells() const {
    return missing_cells_;
  }
  bool row_fully_observed(int t, int s) const;  // no latent y needed
  int latent_row_id(int t, int s) const;        // -1 when fully observed
  int missing_cell_id(int t, int s, int d) const;
  // y entering the likelihood: observed total or current latent value.
  long effective_y(const ParameterState& st, int t, int s) const;
  long effective_z(const ParameterState& st, int t, int s, int d) const;
  // Lower bound for latent y: observed cells plus currently imputed ones.
  long latent_floor(const ParameterState& st, int t, int s) const;
  // Number of Beta-Binomial terms contributed by row (t,s).
  int n_delay_terms(int t, int s) const;

  std::vector<std::string> param_names() const;

 private:
  void build_layout();
  void build_terms();
  double nested_term_logprior(const ParameterState& st, const NestedTerm& term) const;

  ModelSpec spec_;
  CensoredTriangle data_;
  ParamLayout layout_;
  std::vector<NestedTerm> f_terms_;  // order: temporal, seasonal (as enabled)
  std::vector<NestedTerm> g_terms_;  // order: temporal, weekly (as enabled)
  int n_model_delays_ = 0;
  int off_iota_ = 0, off_psi_ = 0, off_log_theta_ = -1, off_log_phi_ = 0,
      off_ur_ = -1;
  std::vector<std::pair<int, int>> latent_rows_;
  std::vector<int> latent_row_id_;  // (t,s) -> id or -1
  std::vector<std::tuple<int, int, int>> missing_cells_;
  std::vector<int> missing_cell_id_;  // (t,s,d) -> id or -1
  friend class GdmSweeper;
};

}  // namespace nowcast
