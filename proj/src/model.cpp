#include "nowcast/model.hpp"

#include <cmath>
#include <json.hpp>
#include <limits>
#include <stdexcept>

namespace nowcast {

using nlohmann::json;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPenaltyRidge = 1e-6;  // M + eps*I for a proper MVN prior

double clamp_prob(double p) { return std::min(std::max(p, 1e-12), 1.0 - 1e-12); }
}  // namespace

// ---- ModelSpec --------------------------------------------------------------

void ModelSpec::validate() const {
  if (d_max < 1) throw std::invalid_argument("ModelSpec: d_max must be >= 1");
  if (d_prime < 1 || d_prime > d_max)
    throw std::invalid_argument("ModelSpec: require 1 <= D' <= D_max");
  if (f_temporal.enabled && f_temporal.K < 4)
    throw std::invalid_argument("ModelSpec: temporal spline needs K >= 4");
  if (g_temporal.enabled && g_temporal.K < 4)
    throw std::invalid_argument("ModelSpec: temporal spline needs K >= 4");
  if (f_seasonal.enabled && (f_seasonal.K < 3 || f_seasonal.period <= 0.0))
    throw std::invalid_argument("ModelSpec: seasonal spline needs K >= 3 and period > 0");
  if (g_weekly.enabled && (g_weekly.K < 3 || g_weekly.period <= 0.0))
    throw std::invalid_argument("ModelSpec: weekly spline needs K >= 3 and period > 0");
  if (priors.theta_shape <= 0 || priors.theta_rate <= 0 || priors.phi_shape <= 0 ||
      priors.phi_rate <= 0 || priors.sigma_halfnormal_sd <= 0 ||
      priors.intercept_sd <= 0 || priors.psi_rw_sd <= 0)
    throw std::invalid_argument("ModelSpec: prior hyperparameters must be positive");
  if (underreporting.enabled) {
    if (!(underreporting.prior_sd > 0.0) || underreporting.prior_sd > 2.5)
      throw std::invalid_argument(
          "ModelSpec: the under-reporting layer is non-identifiable without an "
          "informative prior; require 0 < prior_sd <= 2.5 on the reporting logit");
  }
  if (fixed_theta && !(*fixed_theta > 0.0))
    throw std::invalid_argument("ModelSpec: fixed_theta must be positive");
}

namespace {
json term_to_json(const SplineTermSpec& t, bool cyclic) {
  if (!t.enabled) return nullptr;
  json j{{"k", t.K}};
  if (cyclic) j["period"] = t.period;
  return j;
}

SplineTermSpec term_from_json(const json& j, SplineTermSpec defaults) {
  if (j.is_null()) {
    defaults.enabled = false;
    return defaults;
  }
  SplineTermSpec t = defaults;
  t.enabled = true;
  if (j.contains("k")) t.K = j.at("k").get<int>();
  if (j.contains("period")) t.period = j.at("period").get<double>();
  return t;
}
}  // namespace

std::string ModelSpec::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["d_max"] = d_max;
  j["d_prime"] = d_prime;
  j["link"] = link == LinkVariant::survivor_probit ? "survivor_probit" : "hazard_logit";
  j["mean_model"] = {{"temporal", term_to_json(f_temporal, false)},
                     {"seasonal", term_to_json(f_seasonal, true)}};
  j["delay_model"] = {{"temporal", term_to_json(g_temporal, false)},
                      {"weekly", term_to_json(g_weekly, true)}};
  j["priors"] = {{"theta_shape", priors.theta_shape}, {"theta_rate", priors.theta_rate},
                 {"phi_shape", priors.phi_shape},     {"phi_rate", priors.phi_rate},
                 {"sigma_sd", priors.sigma_halfnormal_sd},
                 {"intercept_sd", priors.intercept_sd},
                 {"psi_rw_sd", priors.psi_rw_sd}};
  if (underreporting.enabled)
    j["underreporting"] = {{"prior_mean", underreporting.prior_mean},
                           {"prior_sd", underreporting.prior_sd}};
  else
    j["underreporting"] = nullptr;
  if (fixed_theta)
    j["fixed_theta"] = *fixed_theta;
  else
    j["fixed_theta"] = nullptr;
  return j.dump(2);
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("ModelSpec: malformed JSON: ") + e.what());
  }
  ModelSpec spec;
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != 1)
    throw std::invalid_argument("ModelSpec: unsupported schema_version");
  if (j.contains("d_max")) spec.d_max = j.at("d_max").get<int>();
  if (j.contains("d_prime")) spec.d_prime = j.at("d_prime").get<int>();
  if (j.contains("link")) {
    std::string link = j.at("link").get<std::string>();
    if (link == "survivor_probit")
      spec.link = LinkVariant::survivor_probit;
    else if (link == "hazard_logit")
      spec.link = LinkVariant::hazard_logit;
    else
      throw std::invalid_argument("ModelSpec: unknown link '" + link + "'");
  }
  if (j.contains("mean_model")) {
    const auto& m = j.at("mean_model");
    if (m.contains("temporal"))
      spec.f_temporal = term_from_json(m.at("temporal"), spec.f_temporal);
    if (m.contains("seasonal"))
      spec.f_seasonal = term_from_json(m.at("seasonal"), SplineTermSpec{false, 8, 365.25});
  }
  if (j.contains("delay_model")) {
    const auto& m = j.at("delay_model");
    if (m.contains("temporal"))
      spec.g_temporal = term_from_json(m.at("temporal"), spec.g_temporal);
    if (m.contains("weekly"))
      spec.g_weekly = term_from_json(m.at("weekly"), SplineTermSpec{false, 7, 7.0});
  }
  if (j.contains("priors")) {
    const auto& p = j.at("priors");
    auto get = [&](const char* k, double& into) {
      if (p.contains(k)) into = p.at(k).get<double>();
    };
    get("theta_shape", spec.priors.theta_shape);
    get("theta_rate", spec.priors.theta_rate);
    get("phi_shape", spec.priors.phi_shape);
    get("phi_rate", spec.priors.phi_rate);
    get("sigma_sd", spec.priors.sigma_halfnormal_sd);
    get("intercept_sd", spec.priors.intercept_sd);
    get("psi_rw_sd", spec.priors.psi_rw_sd);
  }
  if (j.contains("underreporting") && !j.at("underreporting").is_null()) {
    spec.underreporting.enabled = true;
    spec.underreporting.prior_mean = j.at("underreporting").at("prior_mean").get<double>();
    spec.underreporting.prior_sd = j.at("underreporting").at("prior_sd").get<double>();
  }
  if (j.contains("fixed_theta") && !j.at("fixed_theta").is_null())
    spec.fixed_theta = j.at("fixed_theta").get<double>();
  spec.validate();
  return spec;
}

// ---- ParamLayout -------------------------------------------------------------

int ParamLayout::add(const std::string& name, int size) {
  blocks.push_back({name, total, size});
  total += size;
  return blocks.back().offset;
}

const ParamBlock& ParamLayout::block(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw std::invalid_argument("unknown parameter block '" + name + "'");
}

bool ParamLayout::has(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return true;
  return false;
}

// ---- survivor transform --------------------------------------------------------

Eigen::VectorXd survivor_to_relative_means(const Eigen::VectorXd& S) {
  Eigen::VectorXd nu(S.size());
  double prev = 0.0;
  for (Eigen::Index d = 0; d < S.size(); ++d) {
    if (!(S(d) > prev) || !(S(d) < 1.0))
      throw std::invalid_argument("survivor_to_relative_means: S must be strictly "
                                  "increasing inside (0,1)");
    nu(d) = (S(d) - prev) / (1.0 - prev);
    prev = S(d);
  }
  return nu;
}

// ---- GdmModel -------------------------------------------------------------------

GdmModel::GdmModel(const ModelSpec& spec, const CensoredTriangle& data)
    : spec_(spec), data_(data) {
  spec_.validate();
  if (spec_.d_max != data.d_max())
    throw std::invalid_argument("GdmModel: spec d_max does not match the data");
  n_model_delays_ = std::min(spec_.d_prime, spec_.d_max - 1);
  build_terms();
  build_layout();

  const int T = data_.T(), S = data_.S();
  latent_row_id_.assign(static_cast<std::size_t>(T) * S, -1);
  missing_cell_id_.assign(static_cast<std::size_t>(T) * S * spec_.d_max, -1);
  for (int t = 1; t <= T; ++t) {
    int k = data_.observed_delays(t);
    for (int s = 1; s <= S; ++s) {
      bool any_missing = false;
      for (int d = 1; d <= k; ++d)
        if (data_.triangle().missing(t, s, d)) any_missing = true;
      bool full = (k == spec_.d_max) && !any_missing;
      if (!full) {
        latent_row_id_[(t - 1) * S + (s - 1)] = static_cast<int>(latent_rows_.size());
        latent_rows_.emplace_back(t, s);
      }
      int m = std::min(k, n_model_delays_);
      for (int d = 1; d <= m; ++d) {
        if (data_.triangle().missing(t, s, d)) {
          missing_cell_id_[((t - 1) * S + (s - 1)) * spec_.d_max + (d - 1)] =
              static_cast<int>(missing_cells_.size());
          missing_cells_.emplace_back(t, s, d);
        }
      }
    }
  }
}

void GdmModel::build_terms() {
  const int T = data_.T();
  auto make_term = [&](const std::string& name, const SplineTermSpec& ts,
                       BasisKind kind) -> NestedTerm {
    NestedTerm term;
    term.name = name;
    term.term_spec = ts;
    term.K = ts.K;
    Eigen::VectorXd pts(T);
    if (kind == BasisKind::temporal) {
      for (int t = 1; t <= T; ++t) pts(t - 1) = t;
      term.basis = cubic_basis(pts, ts.K);
    } else if (kind == BasisKind::weekly_cyclic) {
      for (int t = 1; t <= T; ++t)
        pts(t - 1) = day_of_week(data_.triangle().date_of(t));
      term.basis = cyclic_basis(pts, ts.period, ts.K, kind);
    } else {
      for (int t = 1; t <= T; ++t) pts(t - 1) = std::fmod(t - 1.0, ts.period);
      term.basis = cyclic_basis(pts, ts.period, ts.K, kind);
    }
    term.Xt = term.basis.X;
    term.B = term.basis.M + kPenaltyRidge * Eigen::MatrixXd::Identity(ts.K, ts.K);
    term.cholB.compute(term.B);
    term.logdetB = 0.0;
    for (int i = 0; i < ts.K; ++i)
      term.logdetB += 2.0 * std::log(term.cholB.matrixL()(i, i));
    return term;
  };

  if (spec_.f_temporal.enabled)
    f_terms_.push_back(make_term("f_temporal", spec_.f_temporal, BasisKind::temporal));
  if (spec_.f_seasonal.enabled)
    f_terms_.push_back(make_term("f_seasonal", spec_.f_seasonal, BasisKind::seasonal_cyclic));
  if (spec_.g_temporal.enabled)
    g_terms_.push_back(make_term("g_temporal", spec_.g_temporal, BasisKind::temporal));
  if (spec_.g_weekly.enabled)
    g_terms_.push_back(make_term("g_weekly", spec_.g_weekly, BasisKind::weekly_cyclic));
}

void GdmModel::build_layout() {
  const int S = data_.S();
  off_iota_ = layout_.add("iota", S);
  for (auto* terms : {&f_terms_, &g_terms_}) {
    for (auto& term : *terms) {
      term.off_overall = layout_.add(term.name + ".overall", term.K);
      term.off_region = layout_.add(term.name + ".region", S * term.K);
      term.off_lsig_overall = layout_.add(term.name + ".log_sigma_overall", 1);
      term.off_lsig_region = layout_.add(term.name + ".log_sigma_region", S);
    }
  }
  off_psi_ = layout_.add("psi_raw", S * spec_.d_max);
  if (!spec_.fixed_theta) off_log_theta_ = layout_.add("log_theta", S);
  if (n_model_delays_ > 0) off_log_phi_ = layout_.add("log_phi", S * n_model_delays_);
  if (spec_.underreporting.enabled) off_ur_ = layout_.add("ur_intercept", 1);
}

double GdmModel::iota(const ParameterState& st, int s) const {
  return st.params(off_iota_ + s - 1);
}

double GdmModel::theta(const ParameterState& st, int s) const {
  if (spec_.fixed_theta) return *spec_.fixed_theta;
  return std::exp(st.params(off_log_theta_ + s - 1));
}

double GdmModel::phi(const ParameterState& st, int s, int d) const {
  if (d < 1 || d > n_model_delays_) throw std::out_of_range("phi: d out of range");
  return std::exp(st.params(off_log_phi_ + (s - 1) * n_model_delays_ + (d - 1)));
}

Eigen::VectorXd GdmModel::psi(const ParameterState& st, int s) const {
  const int D = spec_.d_max;
  Eigen::VectorXd out(D);
  const double* raw = st.params.data() + off_psi_ + (s - 1) * D;
  if (spec_.link == LinkVariant::survivor_probit) {
    out(0) = raw[0];
    for (int d = 1; d < D; ++d) out(d) = out(d - 1) + std::exp(raw[d]);
  } else {
    for (int d = 0; d < D; ++d) out(d) = raw[d];
  }
  return out;
}

double GdmModel::eval_f(const ParameterState& st, int t, int s) const {
  double f = iota(st, s);
  for (const auto& term : f_terms_) {
    const double* k = st.params.data() + term.off_region + (s - 1) * term.K;
    f += term.Xt.row(t - 1).dot(Eigen::Map<const Eigen::VectorXd>(k, term.K));
  }
  return f;
}

double GdmModel::delay_offset(const ParameterState& st, int t, int s) const {
  double g = 0.0;
  for (const auto& term : g_terms_) {
    const double* k = st.params.data() + term.off_region + (s - 1) * term.K;
    g += term.Xt.row(t - 1).dot(Eigen::Map<const Eigen::VectorXd>(k, term.K));
  }
  return g;
}

Eigen::VectorXd GdmModel::eval_survivor_curve(const ParameterState& st, int t,
                                              int s) const {
  if (spec_.link != LinkVariant::survivor_probit)
    throw std::logic_error("eval_survivor_curve requires the survivor_probit link");
  double off = delay_offset(st, t, s);
  Eigen::VectorXd ps = psi(st, s);
  Eigen::VectorXd S(spec_.d_max);
  for (int d = 0; d < spec_.d_max; ++d) S(d) = clamp_prob(norm_cdf(ps(d) + off));
  return S;
}

Eigen::VectorXd GdmModel::relative_means(const ParameterState& st, int t, int s) const {
  const int D = spec_.d_max;
  Eigen::VectorXd nu(D - 1);
  if (spec_.link == LinkVariant::survivor_probit) {
    Eigen::VectorXd S = eval_survivor_curve(st, t, s);
    double prev = 0.0;
    for (int d = 0; d < D - 1; ++d) {
      nu(d) = clamp_prob((S(d) - prev) / (1.0 - prev));
      prev = S(d);
    }
  } else {
    double off = delay_offset(st, t, s);
    Eigen::VectorXd ps = psi(st, s);
    for (int d = 0; d < D - 1; ++d) nu(d) = clamp_prob(logistic(ps(d) + off));
  }
  return nu;
}

bool GdmModel::row_fully_observed(int t, int s) const {
  return latent_row_id_[(t - 1) * data_.S() + (s - 1)] < 0;
}

int GdmModel::latent_row_id(int t, int s) const {
  return latent_row_id_[(t - 1) * data_.S() + (s - 1)];
}

int GdmModel::missing_cell_id(int t, int s, int d) const {
  return missing_cell_id_[((t - 1) * data_.S() + (s - 1)) * spec_.d_max + (d - 1)];
}

long GdmModel::effective_y(const ParameterState& st, int t, int s) const {
  int id = latent_row_id(t, s);
  if (id < 0) return data_.triangle().y(t, s);
  return st.latent_y[id];
}

long GdmModel::effective_z(const ParameterState& st, int t, int s, int d) const {
  int id = missing_cell_id(t, s, d);
  if (id >= 0) return st.latent_z[id];
  return data_.z(t, s, d);
}

long GdmModel::latent_floor(const ParameterState& st, int t, int s) const {
  long floor = data_.observed_partial_sum(t, s);
  int m = n_delay_terms(t, s);
  for (int d = 1; d <= m; ++d) {
    int id = missing_cell_id(t, s, d);
    if (id >= 0) floor += st.latent_z[id];
  }
  return floor;
}

int GdmModel::n_delay_terms(int t, int s) const {
  (void)s;
  return std::min(data_.observed_delays(t), n_model_delays_);
}

std::pair<double, double> GdmModel::underreporting_terms(const ParameterState& st, int t,
                                                         int s) const {
  if (!spec_.underreporting.enabled)
    throw std::logic_error("under-reporting layer is not enabled in this spec");
  return {eval_f(st, t, s), st.params(off_ur_)};
}

double GdmModel::log_likelihood(const ParameterState& st) const {
  const int T = data_.T(), S = data_.S();
  double total = 0.0;
  for (int t = 1; t <= T; ++t) {
    for (int s = 1; s <= S; ++s) {
      long y = effective_y(st, t, s);
      if (y < latent_floor(st, t, s)) return kNegInf;
      double lambda = std::exp(std::min(eval_f(st, t, s), 50.0));
      double th = theta(st, s);
      if (spec_.underreporting.enabled) {
        long x = st.latent_x[(t - 1) * S + (s - 1)];
        if (x < y) return kNegInf;
        double pi = logistic(st.params(off_ur_));
        total += negbin_logpmf(x, NegBinParams{lambda, th});
        total += binomial_logpmf(y, x, pi);
      } else {
        total += negbin_logpmf(y, NegBinParams{lambda, th});
      }

      int m = n_delay_terms(t, s);
      if (m > 0) {
        Eigen::VectorXd nu = relative_means(st, t, s);
        long remaining = y;
        for (int d = 1; d <= m; ++d) {
          long z = effective_z(st, t, s, d);
          if (z < 0 || z > remaining) return kNegInf;
          total += betabin_logpmf(z, BetaBinParams{nu(d - 1), phi(st, s, d), remaining});
          remaining -= z;
        }
      }
    }
  }
  return total;
}

double GdmModel::nested_term_logprior(const ParameterState& st,
                                      const NestedTerm& term) const {
  const int S = data_.S(), K = term.K;
  const double log2pi = std::log(2.0 * M_PI);
  double sig_o = std::exp(st.params(term.off_lsig_overall));
  Eigen::Map<const Eigen::VectorXd> ko(st.params.data() + term.off_overall, K);

  // Overall coefficients: MVN(0, precision B / sigma^2).
  double quad = ko.dot(term.B * ko);
  double lp = 0.5 * (term.logdetB - 2.0 * K * std::log(sig_o)) - 0.5 * K * log2pi -
              0.5 * quad / (sig_o * sig_o);

  // Regional coefficients centred on the overall ones.
  for (int s = 0; s < S; ++s) {
    double sig_s = std::exp(st.params(term.off_lsig_region + s));
    Eigen::Map<const Eigen::VectorXd> ks(st.params.data() + term.off_region + s * K, K);
    Eigen::VectorXd diff = ks - ko;
    lp += 0.5 * (term.logdetB - 2.0 * K * std::log(sig_s)) - 0.5 * K * log2pi -
          0.5 * diff.dot(term.B * diff) / (sig_s * sig_s);
  }

  // Half-Normal(0, sd) on each sigma, plus the log-scale Jacobian.
  auto halfnormal = [&](double log_sigma) {
    double sigma = std::exp(log_sigma);
    return std::log(2.0) + norm_logpdf(sigma, 0.0, spec_.priors.sigma_halfnormal_sd) +
           log_sigma;
  };
  lp += halfnormal(st.params(term.off_lsig_overall));
  for (int s = 0; s < S; ++s) lp += halfnormal(st.params(term.off_lsig_region + s));
  return lp;
}

double GdmModel::log_prior(const ParameterState& st) const {
  const int S = data_.S(), D = spec_.d_max;
  double lp = 0.0;

  for (int s = 1; s <= S; ++s)
    lp += norm_logpdf(iota(st, s), 0.0, spec_.priors.intercept_sd);

  for (const auto& term : f_terms_) lp += nested_term_logprior(st, term);
  for (const auto& term : g_terms_) lp += nested_term_logprior(st, term);

  // Delay baseline: RW1, truncated to be increasing under the survivor
  // link. Each truncation point equals the RW mean, so the normalizing
  // constant is log 2 per step; the log-increment Jacobian is included.
  auto gamma_logpdf = [](double x, double shape, double rate) {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
           rate * x;
  };
  const double psi_sd = spec_.priors.psi_rw_sd;
  for (int s = 1; s <= S; ++s) {
    Eigen::VectorXd ps = psi(st, s);
    lp += norm_logpdf(ps(0), 0.0, psi_sd);
    for (int d = 1; d < D; ++d) {
      lp += norm_logpdf(ps(d), ps(d - 1), psi_sd);
      if (spec_.link == LinkVariant::survivor_probit) {
        lp += std::log(2.0);                          // truncation constant
        lp += st.params(off_psi_ + (s - 1) * D + d);  // Jacobian: log increment
      }
    }
  }

  if (!spec_.fixed_theta) {
    for (int s = 0; s < S; ++s) {
      double lt = st.params(off_log_theta_ + s);
      lp += gamma_logpdf(std::exp(lt), spec_.priors.theta_shape, spec_.priors.theta_rate) +
            lt;
    }
  }
  for (int s = 1; s <= S; ++s)
    for (int d = 1; d <= n_model_delays_; ++d) {
      double lph = st.params(off_log_phi_ + (s - 1) * n_model_delays_ + (d - 1));
      lp += gamma_logpdf(std::exp(lph), spec_.priors.phi_shape, spec_.priors.phi_rate) +
            lph;
    }

  if (spec_.underreporting.enabled)
    lp += norm_logpdf(st.params(off_ur_), spec_.underreporting.prior_mean,
                      spec_.underreporting.prior_sd);
  return lp;
}

double GdmModel::log_posterior(const ParameterState& st) const {
  double lp = log_prior(st);
  if (!std::isfinite(lp)) return kNegInf;
  return lp + log_likelihood(st);
}

ParameterState GdmModel::init_state(Rng& rng, double jitter) const {
  const int T = data_.T(), S = data_.S(), D = spec_.d_max;
  ParameterState st;
  st.params = Eigen::VectorXd::Zero(layout_.total);

  // Empirical cumulative reporting fractions from fully observed rows,
  // pooled across regions as a fallback for regions with none.
  std::vector<double> pool_cum(D, 0.0);
  double pool_tot = 0.0;
  std::vector<std::vector<double>> cum(S + 1, std::vector<double>(D, 0.0));
  std::vector<double> tot(S + 1, 0.0);
  std::vector<double> mean_y(S + 1, 0.0);
  std::vector<int> n_full(S + 1, 0);
  for (int t = 1; t <= T; ++t)
    for (int s = 1; s <= S; ++s) {
      if (!row_fully_observed(t, s)) continue;
      long y = data_.triangle().y(t, s);
      mean_y[s] += y;
      ++n_full[s];
      long run = 0;
      for (int d = 1; d <= D; ++d) {
        run += data_.z(t, s, d);
        cum[s][d - 1] += run;
        pool_cum[d - 1] += run;
      }
      tot[s] += y;
      pool_tot += y;
    }

  auto frac = [&](int s, int d) {
    double f;
    if (tot[s] >= 20.0)
      f = cum[s][d - 1] / tot[s];
    else if (pool_tot >= 1.0)
      f = pool_cum[d - 1] / pool_tot;
    else
      f = 0.05 + 0.9 * d / static_cast<double>(D);
    return std::min(std::max(f, 0.02), 0.98);
  };

  for (int s = 1; s <= S; ++s) {
    double base;
    if (n_full[s] > 0) {
      base = std::max(mean_y[s] / n_full[s], 0.3);
    } else {
      // Inflate partial sums by the pooled reporting fraction.
      double acc = 0.0;
      int n = 0;
      for (int t = 1; t <= T; ++t) {
        int k = data_.observed_delays(t);
        if (k < 1) continue;
        acc += data_.observed_partial_sum(t, s) / frac(s, k);
        ++n;
      }
      base = std::max(n > 0 ? acc / n : 1.0, 0.3);
    }
    st.params(off_iota_ + s - 1) = std::log(base) + jitter * rng.normal(0.0, 0.4);
  }

  for (auto* terms : {&f_terms_, &g_terms_}) {
    for (const auto& term : *terms) {
      for (int i = 0; i < term.K; ++i)
        st.params(term.off_overall + i) = jitter * rng.normal(0.0, 0.05);
      for (int i = 0; i < S * term.K; ++i)
        st.params(term.off_region + i) = jitter * rng.normal(0.0, 0.05);
      st.params(term.off_lsig_overall) = -1.0 + jitter * rng.normal(0.0, 0.3);
      for (int s = 0; s < S; ++s)
        st.params(term.off_lsig_region + s) = -1.0 + jitter * rng.normal(0.0, 0.3);
    }
  }

  for (int s = 1; s <= S; ++s) {
    std::vector<double> target(D);
    double prev = -2.5;
    for (int d = 1; d <= D; ++d) {
      double p = spec_.link == LinkVariant::survivor_probit ? frac(s, d)
                                                            : 1.0 / (D - d + 1.0);
      double v = spec_.link == LinkVariant::survivor_probit ? probit(p) : logit(p);
      if (spec_.link == LinkVariant::survivor_probit && v <= prev + 1e-3) v = prev + 1e-3;
      target[d - 1] = v;
      prev = v;
    }
    double* raw = st.params.data() + off_psi_ + (s - 1) * D;
    if (spec_.link == LinkVariant::survivor_probit) {
      raw[0] = target[0] + jitter * rng.normal(0.0, 0.2);
      for (int d = 1; d < D; ++d)
        raw[d] = std::log(target[d] - target[d - 1]) + jitter * rng.normal(0.0, 0.2);
    } else {
      for (int d = 0; d < D; ++d) raw[d] = target[d] + jitter * rng.normal(0.0, 0.2);
    }
  }

  if (!spec_.fixed_theta)
    for (int s = 0; s < S; ++s)
      st.params(off_log_theta_ + s) = std::log(50.0) + jitter * rng.normal(0.0, 0.5);
  for (int i = 0; i < S * n_model_delays_; ++i)
    st.params(off_log_phi_ + i) = std::log(50.0) + jitter * rng.normal(0.0, 0.5);
  if (spec_.underreporting.enabled)
    st.params(off_ur_) = spec_.underreporting.prior_mean + jitter * rng.normal(0.0, 0.1);

  // Latents: missing cells start at zero, latent totals at the observed
  // floor plus the expected unreported remainder.
  st.latent_z.assign(missing_cells_.size(), 0);
  st.latent_y.assign(latent_rows_.size(), 0);
  for (std::size_t i = 0; i < latent_rows_.size(); ++i) {
    auto [t, s] = latent_rows_[i];
    long floor = data_.observed_partial_sum(t, s);
    int k = data_.observed_delays(t);
    double lam = std::exp(st.params(off_iota_ + s - 1));
    double expand = k >= 1 ? (1.0 - frac(s, k)) : 1.0;
    st.latent_y[i] = floor + static_cast<long>(std::lround(lam * expand));
  }
  if (spec_.underreporting.enabled) {
    double pi = logistic(st.params(off_ur_));
    st.latent_x.assign(static_cast<std::size_t>(T) * S, 0);
    for (int t = 1; t <= T; ++t)
      for (int s = 1; s <= S; ++s) {
        long y = effective_y(st, t, s);
        st.latent_x[(t - 1) * S + (s - 1)] =
            std::max<long>(y, static_cast<long>(std::lround(y / std::max(pi, 0.05))));
      }
  }
  return st;
}

std::vector<std::string> GdmModel::param_names() const {
  std::vector<std::string> names;
  names.reserve(layout_.total);
  const int S = data_.S();
  for (const auto& b : layout_.blocks) {
    if (b.name == "iota" || b.name == "log_theta") {
      for (int s = 1; s <= S; ++s) names.push_back(b.name + "[" + std::to_string(s) + "]");
    } else if (b.name == "psi_raw" || b.name == "log_phi") {
      int per = b.size / S;
      for (int s = 1; s <= S; ++s)
        for (int d = 1; d <= per; ++d)
          names.push_back(b.name + "[" + std::to_string(s) + "," + std::to_string(d) + "]");
    } else if (b.name.find(".region") != std::string::npos) {
      int per = b.size / S;
      for (int s = 1; s <= S; ++s)
        for (int k = 1; k <= per; ++k)
          names.push_back(b.name + "[" + std::to_string(s) + "," + std::to_string(k) + "]");
    } else {
      for (int i = 1; i <= b.size; ++i)
        names.push_back(b.size == 1 ? b.name : b.name + "[" + std::to_string(i) + "]");
    }
  }
  return names;
}

}  // namespace nowcast
