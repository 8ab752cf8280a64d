#include "nowcast/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "nowcast/kernels.hpp"

namespace nowcast {

using nlohmann::json;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kRidge = 1e-6;

double clamp_prob(double p) { return std::min(std::max(p, 1e-12), 1.0 - 1e-12); }

inline double nb_cell(long z, double logmean, double theta, double lgtheta,
                      double logtheta) {
  double mean = std::exp(std::min(logmean, 50.0));
  double denom = std::log(theta + mean);
  double v = theta * (logtheta - denom) + z * (std::min(logmean, 50.0) - denom);
  if (z > 0) v += std::lgamma(z + theta) - lgtheta - lgamma_int(z + 1);
  return v;
}

double halfnormal_lp(double log_sigma, double sd) {
  double sig = std::exp(log_sigma);
  return std::log(2.0) + norm_logpdf(sig, 0.0, sd) + log_sigma;
}

double gamma_lp(double log_x, double shape, double rate) {
  double x = std::exp(log_x);
  return (shape - 1.0) * std::log(x) - rate * x + log_x;
}

// One observed NB cell of a per-region baseline model; d = 0 marks the
// remainder cell of the marginal NB family.
struct Cell {
  int t = 0;
  int d = 0;
  long z = 0;
};

// Collects the observed cells of one region under censoring, reading
// through the audited accessor.
std::vector<Cell> collect_cells(const CensoredTriangle& data, int s, int max_delay,
                                int t_from, bool with_remainder, int d_prime) {
  std::vector<Cell> cells;
  for (int t = std::max(t_from, 1); t <= data.t0(); ++t) {
    int k = std::min(data.observed_delays(t), max_delay);
    for (int d = 1; d <= k; ++d)
      if (data.observed(t, s, d)) cells.push_back({t, d, data.z(t, s, d)});
    if (with_remainder && data.fully_observed(t)) {
      bool any_missing = false;
      for (int d = 1; d <= data.d_max(); ++d)
        if (data.triangle().missing(t, s, d)) any_missing = true;
      if (!any_missing) {
        long r = data.triangle().y(t, s);
        for (int d = 1; d <= d_prime; ++d) r -= data.z(t, s, d);
        cells.push_back({t, 0, r});
      }
    }
  }
  return cells;
}

// ---- per-region samplable models -----------------------------------------------

// ---------------- marginal NB ----------------------------------------------------

class MarginalNbRegion : public SamplableModel {
 public:
  MarginalNbRegion(const CensoredTriangle& data, const ModelSpec& spec, int s)
      : data_(data), spec_(spec), s_(s) {
    if (spec_.link != LinkVariant::survivor_probit)
      throw std::invalid_argument("marginal NB requires the survivor_probit link");
    d_prime_ = std::min(spec_.d_prime, data.d_max());
    n_psi_ = std::min(spec_.d_prime, data.d_max());
    with_remainder_ = spec_.d_prime < data.d_max();
    cells_ = collect_cells(data, s, d_prime_, 1, with_remainder_, d_prime_);

    auto make_term = [&](const std::string& name, const SplineTermSpec& ts,
                         BasisKind kind) {
      Term term;
      term.name = name;
      term.K = ts.K;
      Eigen::VectorXd pts(data.T());
      if (kind == BasisKind::temporal) {
        for (int t = 1; t <= data.T(); ++t) pts(t - 1) = t;
        term.basis = cubic_basis(pts, ts.K);
      } else {
        for (int t = 1; t <= data.T(); ++t)
          pts(t - 1) = kind == BasisKind::weekly_cyclic
                           ? day_of_week(data.triangle().date_of(t))
                           : std::fmod(t - 1.0, ts.period);
        term.basis = cyclic_basis(pts, ts.period, ts.K, kind);
      }
      term.B = term.basis.M + kRidge * Eigen::MatrixXd::Identity(ts.K, ts.K);
      return term;
    };

    if (spec_.f_temporal.enabled)
      f_terms_.push_back(make_term("f_temporal", spec_.f_temporal, BasisKind::temporal));
    if (spec_.f_seasonal.enabled)
      f_terms_.push_back(
          make_term("f_seasonal", spec_.f_seasonal, BasisKind::seasonal_cyclic));
    if (spec_.g_temporal.enabled)
      g_terms_.push_back(make_term("g_temporal", spec_.g_temporal, BasisKind::temporal));
    if (spec_.g_weekly.enabled)
      g_terms_.push_back(make_term("g_weekly", spec_.g_weekly, BasisKind::weekly_cyclic));

    off_iota_ = layout_.add("iota", 1);
    for (auto* terms : {&f_terms_, &g_terms_})
      for (auto& term : *terms) {
        term.off_kappa = layout_.add(term.name + ".kappa", term.K);
        term.off_lsig = layout_.add(term.name + ".log_sigma", 1);
      }
    off_psi_ = layout_.add("psi_raw", n_psi_);
    off_log_theta_ = layout_.add("log_theta", 1);
  }

  struct Term {
    std::string name;
    int K = 0;
    BasisWithPenalty basis;
    Eigen::MatrixXd B;
    int off_kappa = 0, off_lsig = 0;
  };

  int T() const override { return data_.T(); }
  int S() const override { return 1; }
  const ParamLayout& layout() const override { return layout_; }
  std::vector<std::pair<int, int>> latent_rows() const override { return {}; }

  std::vector<std::string> param_names() const override {
    std::vector<std::string> names;
    for (const auto& b : layout_.blocks)
      for (int i = 1; i <= b.size; ++i)
        names.push_back(b.size == 1 ? b.name : b.name + "[" + std::to_string(i) + "]");
    return names;
  }

  Eigen::VectorXd psi(const ParameterState& st) const {
    Eigen::VectorXd out(n_psi_);
    out(0) = st.params(off_psi_);
    for (int d = 1; d < n_psi_; ++d)
      out(d) = out(d - 1) + std::exp(st.params(off_psi_ + d));
    return out;
  }

  double f_log(const ParameterState& st, int t) const {
    double f = st.params(off_iota_);
    for (const auto& term : f_terms_) {
      Eigen::Map<const Eigen::VectorXd> k(st.params.data() + term.off_kappa, term.K);
      f += term.basis.X.row(t - 1).dot(k);
    }
    return f;
  }

  double g_off(const ParameterState& st, int t) const {
    double g = 0.0;
    for (const auto& term : g_terms_) {
      Eigen::Map<const Eigen::VectorXd> k(st.params.data() + term.off_kappa, term.K);
      g += term.basis.X.row(t - 1).dot(k);
    }
    return g;
  }

  // Survivor curve over the modelled delays.
  Eigen::VectorXd survivor(const ParameterState& st, int t) const {
    Eigen::VectorXd ps = psi(st);
    Eigen::VectorXd S(n_psi_);
    double off = g_off(st, t);
    for (int d = 0; d < n_psi_; ++d) S(d) = clamp_prob(norm_cdf(ps(d) + off));
    return S;
  }

  double cell_logmean(const ParameterState& st, const Cell& c) const {
    Eigen::VectorXd S = survivor(st, c.t);
    double mu;
    if (c.d == 0) {
      mu = 1.0 - S(n_psi_ - 1);
    } else {
      double prev = c.d >= 2 ? S(c.d - 2) : 0.0;
      mu = S(c.d - 1) - prev;
    }
    return f_log(st, c.t) + std::log(std::max(mu, 1e-12));
  }

  double log_prior(const ParameterState& st) const {
    double lp = norm_logpdf(st.params(off_iota_), 0.0, spec_.priors.intercept_sd);
    for (const auto* terms : {&f_terms_, &g_terms_})
      for (const auto& term : *terms) {
        double sig = std::exp(st.params(term.off_lsig));
        Eigen::Map<const Eigen::VectorXd> k(st.params.data() + term.off_kappa, term.K);
        lp += -term.K * st.params(term.off_lsig) -
              0.5 * k.dot(term.B * k) / (sig * sig);
        lp += halfnormal_lp(st.params(term.off_lsig), spec_.priors.sigma_halfnormal_sd);
      }
    Eigen::VectorXd ps = psi(st);
    lp += norm_logpdf(ps(0), 0.0, spec_.priors.psi_rw_sd);
    for (int d = 1; d < n_psi_; ++d)
      lp += norm_logpdf(ps(d), ps(d - 1), spec_.priors.psi_rw_sd) + std::log(2.0) +
            st.params(off_psi_ + d);
    lp += gamma_lp(st.params(off_log_theta_), spec_.priors.theta_shape,
                   spec_.priors.theta_rate);
    return lp;
  }

  double log_posterior(const ParameterState& st) const override {
    double lp = log_prior(st);
    if (!std::isfinite(lp)) return kNegInf;
    double theta = std::exp(st.params(off_log_theta_));
    double lg = std::lgamma(theta), lt = std::log(theta);
    for (const auto& c : cells_) lp += nb_cell(c.z, cell_logmean(st, c), theta, lg, lt);
    return lp;
  }

  ParameterState init_state(Rng& rng, double jitter) const override {
    ParameterState st;
    st.params = Eigen::VectorXd::Zero(layout_.total);
    // Empirical scale and cumulative fractions, as in the GDM fit.
    double tot = 0.0;
    std::vector<double> cum(data_.d_max(), 0.0);
    int n_full = 0;
    double ymean = 0.0;
    for (int t = 1; t <= data_.T(); ++t) {
      if (!data_.fully_observed(t)) continue;
      long run = 0;
      for (int d = 1; d <= data_.d_max(); ++d) {
        run += data_.triangle().z(t, s_, d);
        cum[d - 1] += run;
      }
      tot += data_.triangle().y(t, s_);
      ymean += data_.triangle().y(t, s_);
      ++n_full;
    }
    double base = n_full > 0 ? std::max(ymean / n_full, 0.3) : 1.0;
    st.params(off_iota_) = std::log(base) + jitter * rng.normal(0.0, 0.4);
    for (const auto* terms : {&f_terms_, &g_terms_})
      for (const auto& term : *terms) {
        for (int i = 0; i < term.K; ++i)
          st.params(term.off_kappa + i) = jitter * rng.normal(0.0, 0.05);
        st.params(term.off_lsig) = -1.0 + jitter * rng.normal(0.0, 0.3);
      }
    double prev = -2.0;
    for (int d = 1; d <= n_psi_; ++d) {
      double f = tot >= 20.0 ? std::min(std::max(cum[d - 1] / tot, 0.02), 0.98)
                             : 0.05 + 0.9 * d / (data_.d_max() + 1.0);
      double v = probit(f);
      if (v <= prev + 1e-3) v = prev + 1e-3;
      if (d == 1)
        st.params(off_psi_) = v + jitter * rng.normal(0.0, 0.2);
      else
        st.params(off_psi_ + d - 1) =
            std::log(v - prev) + jitter * rng.normal(0.0, 0.2);
      prev = v;
    }
    st.params(off_log_theta_) = std::log(50.0) + jitter * rng.normal(0.0, 0.5);
    return st;
  }

  std::unique_ptr<Sweeper> make_sweeper(const McmcConfig& cfg) const override;

  const CensoredTriangle& data_;
  ModelSpec spec_;
  int s_;
  int d_prime_ = 0, n_psi_ = 0;
  bool with_remainder_ = false;
  std::vector<Cell> cells_;
  ParamLayout layout_;
  std::vector<Term> f_terms_, g_terms_;
  int off_iota_ = 0, off_psi_ = 0, off_log_theta_ = 0;
};

// Generic cell-model sweeper: block definitions supplied as parameter
// index sets plus the affected cell lists; log means recomputed directly.
struct GenericBlock {
  std::string name;
  std::vector<int> params;      // parameter indices moved together
  std::vector<int> cells;       // affected cell indices; empty + all=false: prior only
  bool all_cells = false;
  bool multivariate = false;
};

class CellSweeper : public Sweeper {
 public:
  using LogMeanFn = std::function<double(const ParameterState&, const Cell&)>;
  using PriorFn = std::function<double(const ParameterState&)>;
  using LambdaFn = std::function<double(const ParameterState&, int)>;

  CellSweeper(std::vector<Cell> cells, std::vector<GenericBlock> blocks, LogMeanFn logmean,
              PriorFn prior, LambdaFn lambda_log, int T, int off_log_theta,
              const McmcConfig& cfg)
      : cells_(std::move(cells)),
        blocks_(std::move(blocks)),
        logmean_(std::move(logmean)),
        prior_(std::move(prior)),
        lambda_log_(std::move(lambda_log)),
        T_(T),
        off_log_theta_(off_log_theta),
        cfg_(cfg) {
    for (auto& b : blocks_) {
      if (b.multivariate)
        mv_.emplace_back(b.name, static_cast<int>(b.params.size()), cfg.target_accept_mv,
                         cfg.cov_adapt_start);
      else
        sc_.emplace_back(b.name, cfg.target_accept_scalar);
    }
  }

  void init(ParameterState& st, Rng& rng) override {
    (void)rng;
    theta_ = std::exp(st.params(off_log_theta_));
    lg_ = std::lgamma(theta_);
    lt_ = std::log(theta_);
    cellterm_.resize(cells_.size());
    for (std::size_t i = 0; i < cells_.size(); ++i)
      cellterm_[i] = nb_cell(cells_[i].z, logmean_(st, cells_[i]), theta_, lg_, lt_);
    cur_prior_ = prior_(st);
    st_ptr_ = &st;
  }

  void sweep(ParameterState& st, Rng& rng, long iter, bool adapting) override {
    int mv_i = 0, sc_i = 0;
    for (auto& b : blocks_) {
      bool theta_block = b.params.size() == 1 && b.params[0] == off_log_theta_;
      if (b.multivariate) {
        auto& k = mv_[mv_i++];
        Eigen::VectorXd cur(b.params.size());
        for (std::size_t i = 0; i < b.params.size(); ++i) cur(i) = st.params(b.params[i]);
        Eigen::VectorXd prop = k.propose(cur, rng);
        double d = eval_delta(st, b, cur, prop, theta_block);
        double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
        bool accept = std::isfinite(d) && rng.uniform() < alpha;
        if (accept)
          commit(st, b, prop, theta_block);
        else
          for (std::size_t i = 0; i < b.params.size(); ++i)
            st.params(b.params[i]) = cur(i);
        Eigen::VectorXd now(b.params.size());
        for (std::size_t i = 0; i < b.params.size(); ++i) now(i) = st.params(b.params[i]);
        k.record(alpha, accept, adapting, iter, now);
      } else {
        auto& k = sc_[sc_i++];
        double cur = st.params(b.params[0]);
        Eigen::VectorXd curv(1), propv(1);
        curv(0) = cur;
        propv(0) = cur + k.step() * rng.normal();
        double d = eval_delta(st, b, curv, propv, theta_block);
        double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
        if (std::isfinite(d) && rng.uniform() < alpha) {
          commit(st, b, propv, theta_block);
          k.mark_accept();
        } else {
          st.params(b.params[0]) = cur;
        }
        k.record(alpha, adapting, iter);
      }
    }
  }

  Eigen::VectorXd log_lambda() const override {
    Eigen::VectorXd out(T_);
    for (int t = 1; t <= T_; ++t) out(t - 1) = lambda_log_(*st_ptr_, t);
    return out;
  }

  std::vector<BlockStats> block_stats() const override {
    std::vector<BlockStats> out;
    for (const auto& k : sc_) out.push_back(k.stats_);
    for (const auto& k : mv_) out.push_back(k.stats_);
    return out;
  }

 private:
  double eval_delta(ParameterState& st, const GenericBlock& b, const Eigen::VectorXd& cur,
                    const Eigen::VectorXd& prop, bool theta_block) {
    double before = cur_prior_;
    // Apply the proposal in place, remembering the prior both ways.
    for (std::size_t i = 0; i < b.params.size(); ++i) st.params(b.params[i]) = prop(i);
    double after = prior_(st);
    double d = after - before;
    if (!std::isfinite(d)) return kNegInf;

    scratch_idx_.clear();
    scratch_val_.clear();
    double th = theta_, lg = lg_, lt = lt_;
    if (theta_block) {
      th = std::exp(prop(0));
      lg = std::lgamma(th);
      lt = std::log(th);
    }
    auto add_cell = [&](int ci) {
      double v = nb_cell(cells_[ci].z, logmean_(st, cells_[ci]), th, lg, lt);
      scratch_idx_.push_back(ci);
      scratch_val_.push_back(v);
      return v - cellterm_[ci];
    };
    if (b.all_cells || theta_block) {
      for (std::size_t ci = 0; ci < cells_.size(); ++ci) d += add_cell(static_cast<int>(ci));
    } else {
      for (int ci : b.cells) d += add_cell(ci);
    }
    pending_prior_ = after;
    pending_theta_ = th;
    pending_lg_ = lg;
    pending_lt_ = lt;
    return d;
  }

  void commit(ParameterState& st, const GenericBlock& b, const Eigen::VectorXd& prop,
              bool theta_block) {
    for (std::size_t i = 0; i < b.params.size(); ++i) st.params(b.params[i]) = prop(i);
    for (std::size_t i = 0; i < scratch_idx_.size(); ++i)
      cellterm_[scratch_idx_[i]] = scratch_val_[i];
    cur_prior_ = pending_prior_;
    if (theta_block) {
      theta_ = pending_theta_;
      lg_ = pending_lg_;
      lt_ = pending_lt_;
    }
  }

  std::vector<Cell> cells_;
  std::vector<GenericBlock> blocks_;
  LogMeanFn logmean_;
  PriorFn prior_;
  LambdaFn lambda_log_;
  int T_;
  int off_log_theta_;
  McmcConfig cfg_;

  std::vector<ScalarKernel> sc_;
  std::vector<MvKernel> mv_;
  std::vector<double> cellterm_;
  double theta_ = 1.0, lg_ = 0.0, lt_ = 0.0;
  double cur_prior_ = 0.0;
  double pending_prior_ = 0.0, pending_theta_ = 1.0, pending_lg_ = 0.0, pending_lt_ = 0.0;
  std::vector<int> scratch_idx_;
  std::vector<double> scratch_val_;
  const ParameterState* st_ptr_ = nullptr;
};

std::unique_ptr<Sweeper> MarginalNbRegion::make_sweeper(const McmcConfig& cfg) const {
  std::vector<GenericBlock> blocks;
  auto cells_of_t = [&](auto pred) {
    std::vector<int> out;
    for (std::size_t i = 0; i < cells_.size(); ++i)
      if (pred(cells_[i])) out.push_back(static_cast<int>(i));
    return out;
  };
  // iota and theta touch every cell through lambda.
  blocks.push_back({"iota", {off_iota_}, {}, true, false});
  for (const auto* terms : {&f_terms_, &g_terms_})
    for (const auto& term : *terms) {
      std::vector<int> idx(term.K);
      for (int i = 0; i < term.K; ++i) idx[i] = term.off_kappa + i;
      blocks.push_back({term.name + ".kappa", idx, {}, true, true});
      blocks.push_back({term.name + ".log_sigma", {term.off_lsig}, {}, false, false});
    }
  for (int j = 0; j < n_psi_; ++j) {
    // Increment j moves psi_(j+1).. upward: affected cells d >= j+1 plus
    // the remainder; psi_1 moves everything.
    auto pred = [this, j](const Cell& c) {
      if (j == 0) return true;
      return c.d == 0 || c.d >= j + 1;
    };
    blocks.push_back({"psi[" + std::to_string(j + 1) + "]", {off_psi_ + j},
                      cells_of_t(pred), false, false});
  }
  blocks.push_back({"log_theta", {off_log_theta_}, {}, true, false});

  return std::make_unique<CellSweeper>(
      cells_, std::move(blocks),
      [this](const ParameterState& st, const Cell& c) { return cell_logmean(st, c); },
      [this](const ParameterState& st) { return log_prior(st); },
      [this](const ParameterState& st, int t) { return f_log(st, t); }, data_.T(),
      off_log_theta_, cfg);
}

// ---------------- RW-direct (INLA-structured) -------------------------------------

class RwDirectRegion : public SamplableModel {
 public:
  RwDirectRegion(const CensoredTriangle& data, const PriorSpec& priors, int s)
      : data_(data), priors_(priors), s_(s) {
    D_ = data.d_max();
    Tn_ = data.T();
    cells_ = collect_cells(data, s, D_, 1, false, 0);

    Eigen::VectorXd pts(Tn_);
    for (int t = 1; t <= Tn_; ++t) pts(t - 1) = day_of_week(data.triangle().date_of(t));
    xi_basis_ = cyclic_basis(pts, 7.0, 7, BasisKind::weekly_cyclic);
    xi_B_ = xi_basis_.M + kRidge * Eigen::MatrixXd::Identity(7, 7);

    off_iota_ = layout_.add("iota", 1);
    off_delta_ = layout_.add("delta", Tn_ - 1);          // delta_1 = 0
    off_beta_ = layout_.add("beta", D_ - 1);             // beta_1 = 0
    off_gamma_ = layout_.add("gamma", (Tn_ - 1) * D_);   // gamma_{1,d} = 0
    off_xi_ = layout_.add("xi.kappa", 7);
    off_lsig_delta_ = layout_.add("log_sigma_delta", 1);
    off_lsig_beta_ = layout_.add("log_sigma_beta", 1);
    off_lsig_gamma_ = layout_.add("log_sigma_gamma", 1);
    off_lsig_xi_ = layout_.add("log_sigma_xi", 1);
    off_log_theta_ = layout_.add("log_theta", 1);
  }

  int T() const override { return Tn_; }
  int S() const override { return 1; }
  const ParamLayout& layout() const override { return layout_; }
  std::vector<std::pair<int, int>> latent_rows() const override { return {}; }
  std::vector<std::string> param_names() const override {
    std::vector<std::string> names;
    for (const auto& b : layout_.blocks)
      for (int i = 1; i <= b.size; ++i)
        names.push_back(b.size == 1 ? b.name : b.name + "[" + std::to_string(i) + "]");
    return names;
  }

  double delta(const ParameterState& st, int t) const {
    return t <= 1 ? 0.0 : st.params(off_delta_ + t - 2);
  }
  double beta(const ParameterState& st, int d) const {
    return d <= 1 ? 0.0 : st.params(off_beta_ + d - 2);
  }
  double gamma(const ParameterState& st, int t, int d) const {
    return t <= 1 ? 0.0 : st.params(off_gamma_ + (t - 2) * D_ + (d - 1));
  }
  double xi(const ParameterState& st, int t) const {
    Eigen::Map<const Eigen::VectorXd> k(st.params.data() + off_xi_, 7);
    return xi_basis_.X.row(t - 1).dot(k);
  }

  double cell_logmean(const ParameterState& st, const Cell& c) const {
    return st.params(off_iota_) + delta(st, c.t) + beta(st, c.d) + gamma(st, c.t, c.d) +
           xi(st, c.t);
  }

  double lambda_log(const ParameterState& st, int t) const {
    // Implied mean of y: sum of the cell means over all delays.
    double total = 0.0;
    for (int d = 1; d <= D_; ++d)
      total += std::exp(std::min(st.params(off_iota_) + delta(st, t) + beta(st, d) +
                                     gamma(st, t, d) + xi(st, t),
                                 50.0));
    return std::log(std::max(total, 1e-12));
  }

  double log_prior(const ParameterState& st) const {
    double lp = norm_logpdf(st.params(off_iota_), 0.0, priors_.intercept_sd);
    auto rw1 = [&](auto value, int n, double log_sigma) {
      double sig = std::exp(log_sigma);
      double acc = 0.0;
      for (int i = 2; i <= n; ++i) acc += norm_logpdf(value(i), value(i - 1), sig);
      return acc;
    };
    lp += rw1([&](int t) { return delta(st, t); }, Tn_, st.params(off_lsig_delta_));
    lp += rw1([&](int d) { return beta(st, d); }, D_, st.params(off_lsig_beta_));
    for (int d = 1; d <= D_; ++d)
      lp += rw1([&](int t) { return gamma(st, t, d); }, Tn_, st.params(off_lsig_gamma_));
    double sig_xi = std::exp(st.params(off_lsig_xi_));
    Eigen::Map<const Eigen::VectorXd> kxi(st.params.data() + off_xi_, 7);
    lp += -7.0 * st.params(off_lsig_xi_) - 0.5 * kxi.dot(xi_B_ * kxi) / (sig_xi * sig_xi);
    lp += halfnormal_lp(st.params(off_lsig_delta_), priors_.sigma_halfnormal_sd);
    lp += halfnormal_lp(st.params(off_lsig_beta_), priors_.sigma_halfnormal_sd);
    lp += halfnormal_lp(st.params(off_lsig_gamma_), priors_.sigma_halfnormal_sd);
    lp += halfnormal_lp(st.params(off_lsig_xi_), priors_.sigma_halfnormal_sd);
    lp += gamma_lp(st.params(off_log_theta_), priors_.theta_shape, priors_.theta_rate);
    return lp;
  }

  double log_posterior(const ParameterState& st) const override {
    double lp = log_prior(st);
    if (!std::isfinite(lp)) return kNegInf;
    double theta = std::exp(st.params(off_log_theta_));
    double lg = std::lgamma(theta), lt = std::log(theta);
    for (const auto& c : cells_) lp += nb_cell(c.z, cell_logmean(st, c), theta, lg, lt);
    return lp;
  }

  ParameterState init_state(Rng& rng, double jitter) const override {
    ParameterState st;
    st.params = Eigen::VectorXd::Zero(layout_.total);
    double mean_cell = 0.1;
    if (!cells_.empty()) {
      double acc = 0.0;
      for (const auto& c : cells_) acc += c.z;
      mean_cell = std::max(acc / cells_.size(), 0.1);
    }
    st.params(off_iota_) = std::log(mean_cell) + jitter * rng.normal(0.0, 0.4);
    st.params(off_lsig_delta_) = -1.5 + jitter * rng.normal(0.0, 0.3);
    st.params(off_lsig_beta_) = -0.5 + jitter * rng.normal(0.0, 0.3);
    st.params(off_lsig_gamma_) = -2.5 + jitter * rng.normal(0.0, 0.3);
    st.params(off_lsig_xi_) = -1.5 + jitter * rng.normal(0.0, 0.3);
    st.params(off_log_theta_) = std::log(50.0) + jitter * rng.normal(0.0, 0.5);
    return st;
  }

  std::unique_ptr<Sweeper> make_sweeper(const McmcConfig& cfg) const override {
    std::vector<GenericBlock> blocks;
    auto cells_where = [&](auto pred) {
      std::vector<int> out;
      for (std::size_t i = 0; i < cells_.size(); ++i)
        if (pred(cells_[i])) out.push_back(static_cast<int>(i));
      return out;
    };
    blocks.push_back({"iota", {off_iota_}, {}, true, false});
    for (int t = 2; t <= Tn_; ++t)
      blocks.push_back({"delta[" + std::to_string(t) + "]", {off_delta_ + t - 2},
                        cells_where([t](const Cell& c) { return c.t == t; }), false,
                        false});
    for (int d = 2; d <= D_; ++d)
      blocks.push_back({"beta[" + std::to_string(d) + "]", {off_beta_ + d - 2},
                        cells_where([d](const Cell& c) { return c.d == d; }), false,
                        false});
    for (int t = 2; t <= Tn_; ++t)
      for (int d = 1; d <= D_; ++d) {
        auto touched = cells_where([t, d](const Cell& c) { return c.t == t && c.d == d; });
        blocks.push_back({"gamma[" + std::to_string(t) + "," + std::to_string(d) + "]",
                          {off_gamma_ + (t - 2) * D_ + (d - 1)}, std::move(touched), false,
                          false});
      }
    std::vector<int> xi_idx(7);
    for (int i = 0; i < 7; ++i) xi_idx[i] = off_xi_ + i;
    blocks.push_back({"xi.kappa", xi_idx, {}, true, true});
    blocks.push_back({"log_sigma_delta", {off_lsig_delta_}, {}, false, false});
    blocks.push_back({"log_sigma_beta", {off_lsig_beta_}, {}, false, false});
    blocks.push_back({"log_sigma_gamma", {off_lsig_gamma_}, {}, false, false});
    blocks.push_back({"log_sigma_xi", {off_lsig_xi_}, {}, false, false});
    blocks.push_back({"log_theta", {off_log_theta_}, {}, true, false});

    return std::make_unique<CellSweeper>(
        cells_, std::move(blocks),
        [this](const ParameterState& st, const Cell& c) { return cell_logmean(st, c); },
        [this](const ParameterState& st) { return log_prior(st); },
        [this](const ParameterState& st, int t) { return lambda_log(st, t); }, Tn_,
        off_log_theta_, cfg);
  }

  const CensoredTriangle& data_;
  PriorSpec priors_;
  int s_, D_ = 0, Tn_ = 0;
  std::vector<Cell> cells_;
  ParamLayout layout_;
  BasisWithPenalty xi_basis_;
  Eigen::MatrixXd xi_B_;
  int off_iota_ = 0, off_delta_ = 0, off_beta_ = 0, off_gamma_ = 0, off_xi_ = 0;
  int off_lsig_delta_ = 0, off_lsig_beta_ = 0, off_lsig_gamma_ = 0, off_lsig_xi_ = 0;
  int off_log_theta_ = 0;
};

// ---------------- window NB (NobBS-structured) -------------------------------------

class WindowNbRegion : public SamplableModel {
 public:
  WindowNbRegion(const CensoredTriangle& data, const PriorSpec& priors, int s, int window)
      : data_(data), priors_(priors), s_(s), W_(window) {
    D_ = data.d_max();
    w_start_ = std::max(1, data.t0() - W_ + 1);
    n_alpha_ = data.t0() - w_start_ + 1;
    cells_ = collect_cells(data, s, D_, w_start_, false, 0);

    off_alpha_ = layout_.add("alpha", n_alpha_);
    off_b_ = layout_.add("b_logits", D_ - 1);  // softmax with beta_1 as reference
    off_lsig_alpha_ = layout_.add("log_sigma_alpha", 1);
    off_log_theta_ = layout_.add("log_theta", 1);
  }

  int T() const override { return data_.T(); }
  int S() const override { return 1; }
  const ParamLayout& layout() const override { return layout_; }
  std::vector<std::pair<int, int>> latent_rows() const override { return {}; }
  std::vector<std::string> param_names() const override {
    std::vector<std::string> names;
    for (const auto& b : layout_.blocks)
      for (int i = 1; i <= b.size; ++i)
        names.push_back(b.size == 1 ? b.name : b.name + "[" + std::to_string(i) + "]");
    return names;
  }

  int w_start() const { return w_start_; }

  Eigen::VectorXd beta(const ParameterState& st) const {
    Eigen::VectorXd e(D_);
    e(0) = 1.0;
    double total = 1.0;
    for (int d = 2; d <= D_; ++d) {
      e(d - 1) = std::exp(std::min(st.params(off_b_ + d - 2), 50.0));
      total += e(d - 1);
    }
    return e / total;
  }

  double alpha(const ParameterState& st, int t) const {
    int i = std::clamp(t, w_start_, data_.t0()) - w_start_;
    return st.params(off_alpha_ + i);
  }

  double cell_logmean(const ParameterState& st, const Cell& c) const {
    Eigen::VectorXd b = beta(st);
    return alpha(st, c.t) + std::log(std::max(b(c.d - 1), 1e-300));
  }

  double lambda_log(const ParameterState& st, int t) const {
    return alpha(st, t);  // sum over delays of alpha + log beta_d is exp(alpha)
  }

  double log_prior(const ParameterState& st) const {
    double lp = norm_logpdf(st.params(off_alpha_), 0.0, priors_.intercept_sd);
    double sig = std::exp(st.params(off_lsig_alpha_));
    for (int i = 1; i < n_alpha_; ++i)
      lp += norm_logpdf(st.params(off_alpha_ + i), st.params(off_alpha_ + i - 1), sig);
    lp += halfnormal_lp(st.params(off_lsig_alpha_), priors_.sigma_halfnormal_sd);
    // Dirichlet(1,...,1) on the simplex, expressed through the softmax
    // parametrization (the Jacobian contributes sum(log beta)).
    Eigen::VectorXd b = beta(st);
    for (int d = 0; d < D_; ++d) lp += std::log(std::max(b(d), 1e-300));
    lp += gamma_lp(st.params(off_log_theta_), priors_.theta_shape, priors_.theta_rate);
    return lp;
  }

  double log_posterior(const ParameterState& st) const override {
    double lp = log_prior(st);
    if (!std::isfinite(lp)) return kNegInf;
    double theta = std::exp(st.params(off_log_theta_));
    double lg = std::lgamma(theta), lt = std::log(theta);
    for (const auto& c : cells_) lp += nb_cell(c.z, cell_logmean(st, c), theta, lg, lt);
    return lp;
  }

  ParameterState init_state(Rng& rng, double jitter) const override {
    ParameterState st;
    st.params = Eigen::VectorXd::Zero(layout_.total);
    double mean_row = 0.5;
    if (!cells_.empty()) {
      double acc = 0.0;
      for (const auto& c : cells_) acc += c.z;
      mean_row = std::max(acc / n_alpha_, 0.5);
    }
    for (int i = 0; i < n_alpha_; ++i)
      st.params(off_alpha_ + i) = std::log(mean_row) + jitter * rng.normal(0.0, 0.3);
    for (int d = 0; d < D_ - 1; ++d)
      st.params(off_b_ + d) = jitter * rng.normal(0.0, 0.2);
    st.params(off_lsig_alpha_) = -1.0 + jitter * rng.normal(0.0, 0.3);
    st.params(off_log_theta_) = std::log(50.0) + jitter * rng.normal(0.0, 0.5);
    return st;
  }

  std::unique_ptr<Sweeper> make_sweeper(const McmcConfig& cfg) const override {
    std::vector<GenericBlock> blocks;
    auto cells_where = [&](auto pred) {
      std::vector<int> out;
      for (std::size_t i = 0; i < cells_.size(); ++i)
        if (pred(cells_[i])) out.push_back(static_cast<int>(i));
      return out;
    };
    for (int i = 0; i < n_alpha_; ++i) {
      int t = w_start_ + i;
      blocks.push_back({"alpha[" + std::to_string(t) + "]", {off_alpha_ + i},
                        cells_where([t](const Cell& c) { return c.t == t; }), false,
                        false});
    }
    std::vector<int> b_idx(D_ - 1);
    for (int i = 0; i < D_ - 1; ++i) b_idx[i] = off_b_ + i;
    blocks.push_back({"b_logits", b_idx, {}, true, true});
    blocks.push_back({"log_sigma_alpha", {off_lsig_alpha_}, {}, false, false});
    blocks.push_back({"log_theta", {off_log_theta_}, {}, true, false});

    return std::make_unique<CellSweeper>(
        cells_, std::move(blocks),
        [this](const ParameterState& st, const Cell& c) { return cell_logmean(st, c); },
        [this](const ParameterState& st) { return log_prior(st); },
        [this](const ParameterState& st, int t) { return lambda_log(st, t); }, data_.T(),
        off_log_theta_, cfg);
  }

  const CensoredTriangle& data_;
  PriorSpec priors_;
  int s_, W_, D_ = 0, w_start_ = 1, n_alpha_ = 0;
  std::vector<Cell> cells_;
  ParamLayout layout_;
  int off_alpha_ = 0, off_b_ = 0, off_lsig_alpha_ = 0, off_log_theta_ = 0;
};

// ---- per-region fitting + combination --------------------------------------------

PosteriorSamples combine_regions(std::vector<PosteriorSamples> per_region,
                                 const CensoredTriangle& data, const std::string& family,
                                 const std::string& spec_json, std::uint64_t master_seed) {
  const int S = data.S();
  PosteriorSamples out;
  out.family = family;
  out.spec_json = spec_json;
  out.T = data.T();
  out.S = S;
  out.d_max = data.d_max();
  out.t0 = data.t0();
  out.time_origin = data.triangle().time_origin();
  out.region_labels = data.triangle().regions();
  out.master_seed = master_seed;
  out.n_iterations = per_region[0].n_iterations;
  out.burn_in = per_region[0].burn_in;
  out.thin = per_region[0].thin;

  const int n_chains = per_region[0].n_chains();
  const long n_keep = per_region[0].n_retained();
  int P_total = 0;
  for (const auto& r : per_region) P_total += static_cast<int>(r.param_names.size());

  for (int s = 1; s <= S; ++s) {
    for (const auto& name : per_region[s - 1].param_names) {
      if (name == "log_theta")
        out.param_names.push_back("log_theta[" + std::to_string(s) + "]");
      else
        out.param_names.push_back("r" + std::to_string(s) + "." + name);
    }
  }

  out.chains.assign(n_chains, Eigen::MatrixXd(n_keep, P_total));
  out.lambda.assign(n_chains, Eigen::MatrixXd(n_keep, data.T() * S));
  out.latent_y.assign(n_chains, Eigen::MatrixXd(n_keep, 0));
  out.diagnostics.assign(n_chains, {});
  for (int c = 0; c < n_chains; ++c) {
    int col = 0;
    for (int s = 1; s <= S; ++s) {
      const auto& r = per_region[s - 1];
      out.chains[c].middleCols(col, r.chains[c].cols()) = r.chains[c];
      col += static_cast<int>(r.chains[c].cols());
      for (int t = 1; t <= data.T(); ++t)
        out.lambda[c].col((t - 1) * S + (s - 1)) = r.lambda[c].col(t - 1);
      for (const auto& b : r.diagnostics[c].blocks) {
        BlockStats bs = b;
        bs.name = "r" + std::to_string(s) + "." + bs.name;
        out.diagnostics[c].blocks.push_back(std::move(bs));
      }
    }
    out.diagnostics[c].seed = per_region[0].diagnostics[c].seed;
  }
  return out;
}

template <typename MakeModel>
PosteriorSamples fit_per_region(const CensoredTriangle& data, const McmcConfig& cfg,
                                const std::string& family, const std::string& spec_json,
                                MakeModel make_model) {
  std::vector<PosteriorSamples> per_region;
  for (int s = 1; s <= data.S(); ++s) {
    auto model = make_model(s);
    McmcConfig c = cfg;
    c.master_seed = cfg.master_seed + 7919ULL * static_cast<std::uint64_t>(s - 1);
    per_region.push_back(run_sampler(*model, c));
  }
  return combine_regions(std::move(per_region), data, family, spec_json, cfg.master_seed);
}

}  // namespace

// ---- public surface -----------------------------------------------------------------

std::string baseline_family_name(BaselineFamily f) {
  switch (f) {
    case BaselineFamily::marginal_nb: return "marginal_nb";
    case BaselineFamily::rw_direct: return "rw_direct";
    default: return "window_nb";
  }
}

BaselineFamily baseline_family_from_name(const std::string& name) {
  if (name == "marginal_nb" || name == "nb") return BaselineFamily::marginal_nb;
  if (name == "rw_direct" || name == "rw") return BaselineFamily::rw_direct;
  if (name == "window_nb" || name == "window") return BaselineFamily::window_nb;
  throw std::invalid_argument("unknown baseline family '" + name + "'");
}

void BaselineSpec::validate(int data_d_max, int t0) const {
  structure.validate();
  if (structure.d_max != data_d_max)
    throw std::invalid_argument("BaselineSpec: d_max does not match the data");
  if (family == BaselineFamily::window_nb && window) {
    if (*window < data_d_max)
      throw std::invalid_argument("BaselineSpec: window must be >= D_max");
    if (*window > t0) {
      // Window longer than the data simply saturates; not an error.
    }
  }
  if (family != BaselineFamily::window_nb && window)
    throw std::invalid_argument("BaselineSpec: window applies to the window family only");
}

std::string BaselineSpec::to_json() const {
  json j;
  j["family"] = baseline_family_name(family);
  if (window)
    j["window"] = *window;
  else
    j["window"] = nullptr;
  j["structure"] = json::parse(structure.to_json());
  return j.dump(2);
}

BaselineSpec BaselineSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  BaselineSpec spec;
  spec.family = baseline_family_from_name(j.at("family").get<std::string>());
  if (j.contains("window") && !j.at("window").is_null())
    spec.window = j.at("window").get<int>();
  spec.structure = ModelSpec::from_json(j.at("structure").dump());
  return spec;
}

PosteriorSamples fit_marginal_nb(const CensoredTriangle& data, const ModelSpec& structure,
                                 const McmcConfig& cfg) {
  BaselineSpec spec;
  spec.family = BaselineFamily::marginal_nb;
  spec.structure = structure;
  spec.validate(data.d_max(), data.t0());
  return fit_per_region(data, cfg, "marginal_nb", spec.to_json(), [&](int s) {
    return std::make_unique<MarginalNbRegion>(data, structure, s);
  });
}

PosteriorSamples fit_rw_direct(const CensoredTriangle& data, const McmcConfig& cfg) {
  BaselineSpec spec;
  spec.family = BaselineFamily::rw_direct;
  spec.structure.d_max = data.d_max();
  spec.structure.d_prime = data.d_max();
  return fit_per_region(data, cfg, "rw_direct", spec.to_json(), [&](int s) {
    return std::make_unique<RwDirectRegion>(data, spec.structure.priors, s);
  });
}

PosteriorSamples fit_window_nb(const CensoredTriangle& data, const McmcConfig& cfg,
                               std::optional<int> window) {
  BaselineSpec spec;
  spec.family = BaselineFamily::window_nb;
  spec.window = window;
  spec.structure.d_max = data.d_max();
  spec.structure.d_prime = data.d_max();
  spec.validate(data.d_max(), data.t0());
  int W = window ? *window : data.t0();
  return fit_per_region(data, cfg, "window_nb", spec.to_json(), [&](int s) {
    return std::make_unique<WindowNbRegion>(data, spec.structure.priors, s, W);
  });
}

PosteriorSamples fit_baseline(const CensoredTriangle& data, const BaselineSpec& spec,
                              const McmcConfig& cfg) {
  switch (spec.family) {
    case BaselineFamily::marginal_nb: return fit_marginal_nb(data, spec.structure, cfg);
    case BaselineFamily::rw_direct: return fit_rw_direct(data, cfg);
    default: return fit_window_nb(data, cfg, spec.window);
  }
}

// ---- prediction --------------------------------------------------------------------

namespace {

long negbin_sample_truncated(const NegBinParams& p, long floor, Rng& rng) {
  if (floor <= 0) return negbin_sample(p, rng);
  // Inverse-CDF walk conditioned on y >= floor.
  double pmf = std::exp(p.theta * std::log(p.theta / (p.theta + p.lambda)));
  double cdf = pmf;
  const double ratio = p.lambda / (p.lambda + p.theta);
  long y = 0;
  while (y < floor) {
    pmf *= (y + p.theta) / (y + 1.0) * ratio;
    cdf += pmf;
    ++y;
  }
  double f_below = cdf - pmf;  // CDF at floor-1
  if (f_below >= 1.0 - 1e-14) return floor;
  double u = f_below + rng.uniform() * (1.0 - f_below);
  while (cdf < u && pmf > 0.0) {
    pmf *= (y + p.theta) / (y + 1.0) * ratio;
    cdf += pmf;
    ++y;
  }
  return y;
}

}  // namespace

NowcastResult predict_baseline(const PosteriorSamples& samples,
                               const CensoredTriangle& data, int horizon) {
  if (horizon < 0) throw std::invalid_argument("predict_baseline: horizon must be >= 0");
  if (data.t0() != samples.t0 || data.T() != samples.T || data.S() != samples.S)
    throw std::invalid_argument("predict_baseline: data does not match the samples");
  BaselineSpec spec = BaselineSpec::from_json(samples.spec_json);
  const int S = data.S(), D = data.d_max(), t0 = data.t0();
  const int n_chains = samples.n_chains();
  const long n_keep = samples.n_retained();
  const long n_draws = n_chains * n_keep;

  // Rebuild one per-region model for layout offsets (identical across
  // regions).
  std::unique_ptr<SamplableModel> proto;
  const MarginalNbRegion* mnb = nullptr;
  const RwDirectRegion* rwd = nullptr;
  const WindowNbRegion* wnb = nullptr;
  switch (spec.family) {
    case BaselineFamily::marginal_nb: {
      auto m = std::make_unique<MarginalNbRegion>(data, spec.structure, 1);
      mnb = m.get();
      proto = std::move(m);
      break;
    }
    case BaselineFamily::rw_direct: {
      auto m = std::make_unique<RwDirectRegion>(data, spec.structure.priors, 1);
      rwd = m.get();
      proto = std::move(m);
      break;
    }
    default: {
      int W = spec.window ? *spec.window : data.t0();
      auto m = std::make_unique<WindowNbRegion>(data, spec.structure.priors, 1, W);
      wnb = m.get();
      proto = std::move(m);
      break;
    }
  }
  const int P_region = proto->layout().total;

  int t_lo = 1;
  if (spec.family == BaselineFamily::window_nb) t_lo = wnb->w_start();

  Rng rng(samples.master_seed ^ 0x51a29b6f3d84c0e1ULL);
  NowcastResult result;

  for (int s = 1; s <= S; ++s) {
    const int base = (s - 1) * P_region;
    // Per-(t,s) predictive draws.
    for (int t = 1; t <= t0 + horizon; ++t) {
      bool strictly_full = false;
      if (t <= t0 && data.fully_observed(t)) {
        strictly_full = true;
        for (int d = 1; d <= D; ++d)
          if (data.triangle().missing(t, s, d)) strictly_full = false;
      }
      NowcastRow row;
      row.t = t;
      row.s = s;
      row.region = data.triangle().regions()[s - 1];
      row.date = data.triangle().date_of(std::min(t, data.T())).days == 0
                     ? data.triangle().time_origin() + (t - 1)
                     : data.triangle().time_origin() + (t - 1);
      row.kind = t < t0 ? RowKind::backfill : (t == t0 ? RowKind::nowcast : RowKind::forecast);
      row.observed_partial = t <= t0 ? data.observed_partial_sum(t, s) : 0;

      if (strictly_full) {
        row.draws = Eigen::VectorXd::Constant(n_draws,
                                              static_cast<double>(data.triangle().y(t, s)));
        row.quantiles = quantile_set(row.draws);
        result.rows.push_back(std::move(row));
        continue;
      }
      if (t <= t0 && t < t_lo) continue;  // outside the window model's reach

      row.draws.resize(n_draws);
      long di = 0;
      for (int c = 0; c < n_chains; ++c) {
        for (long r = 0; r < n_keep; ++r, ++di) {
          auto param = [&](int off) { return samples.chains[c](r, base + off); };
          double theta = std::exp(param(proto->layout().block("log_theta").offset));
          long total = 0;
          int k = t <= t0 ? data.observed_delays(t) : 0;

          if (spec.family == BaselineFamily::marginal_nb) {
            ParameterState st;
            st.params = samples.chains[c].row(r).segment(base, P_region).transpose();
            Eigen::VectorXd Scur;
            double flog;
            if (t <= data.T()) {
              Scur = mnb->survivor(st, t);
              flog = mnb->f_log(st, t);
            } else {
              // Forecast coordinates through basis extrapolation.
              double f = st.params(mnb->off_iota_);
              for (const auto& term : mnb->f_terms_) {
                Eigen::VectorXd pt(1);
                pt(0) = term.basis.kind == BasisKind::temporal
                            ? t
                            : (term.basis.kind == BasisKind::weekly_cyclic
                                   ? day_of_week(data.triangle().time_origin() + (t - 1))
                                   : std::fmod(t - 1.0, term.basis.period));
                Eigen::Map<const Eigen::VectorXd> kv(st.params.data() + term.off_kappa,
                                                     term.K);
                f += evaluate_basis(term.basis, pt).row(0).dot(kv);
              }
              flog = f;
              double goffv = 0.0;
              for (const auto& term : mnb->g_terms_) {
                Eigen::VectorXd pt(1);
                pt(0) = term.basis.kind == BasisKind::temporal
                            ? t
                            : (term.basis.kind == BasisKind::weekly_cyclic
                                   ? day_of_week(data.triangle().time_origin() + (t - 1))
                                   : std::fmod(t - 1.0, term.basis.period));
                Eigen::Map<const Eigen::VectorXd> kv(st.params.data() + term.off_kappa,
                                                     term.K);
                goffv += evaluate_basis(term.basis, pt).row(0).dot(kv);
              }
              Eigen::VectorXd ps = mnb->psi(st);
              Scur.resize(mnb->n_psi_);
              for (int d = 0; d < mnb->n_psi_; ++d)
                Scur(d) = clamp_prob(norm_cdf(ps(d) + goffv));
            }
            double lam = std::exp(std::min(flog, 50.0));
            int dp = mnb->d_prime_;
            long tail_obs = 0;
            for (int d = 1; d <= dp; ++d) {
              if (t <= t0 && d <= k && data.observed(t, s, d)) {
                total += data.z(t, s, d);
              } else {
                double prev = d >= 2 ? Scur(d - 2) : 0.0;
                double mu = std::max(Scur(d - 1) - prev, 1e-12);
                total += negbin_sample(NegBinParams{mu * lam, theta}, rng);
              }
            }
            if (mnb->with_remainder_) {
              for (int d = dp + 1; d <= std::min(k, D); ++d)
                if (t <= t0 && data.observed(t, s, d)) tail_obs += data.z(t, s, d);
              double mu_r = std::max(1.0 - Scur(mnb->n_psi_ - 1), 1e-12);
              total += negbin_sample_truncated(NegBinParams{mu_r * lam, theta}, tail_obs,
                                               rng);
            }
          } else if (spec.family == BaselineFamily::rw_direct) {
            double sig_delta = std::exp(param(rwd->off_lsig_delta_));
            double sig_gamma = std::exp(param(rwd->off_lsig_gamma_));
            double iota = param(rwd->off_iota_);
            for (int d = 1; d <= D; ++d) {
              if (t <= t0 && d <= k && data.observed(t, s, d)) {
                total += data.z(t, s, d);
                continue;
              }
              double delta, gamma;
              int tt = std::min(t, data.T());
              delta = tt <= 1 ? 0.0 : param(rwd->off_delta_ + tt - 2);
              gamma = tt <= 1 ? 0.0 : param(rwd->off_gamma_ + (tt - 2) * D + (d - 1));
              if (t > data.T()) {
                // Extend both RW1 effects by h steps of fresh noise.
                int h = t - data.T();
                delta += sig_delta * std::sqrt(static_cast<double>(h)) * rng.normal();
                gamma += sig_gamma * std::sqrt(static_cast<double>(h)) * rng.normal();
              }
              double beta = d <= 1 ? 0.0 : param(rwd->off_beta_ + d - 2);
              Eigen::Map<const Eigen::VectorXd> kxi(
                  samples.chains[c].row(r).data() + base + rwd->off_xi_, 7);
              Eigen::VectorXd pt(1);
              pt(0) = day_of_week(data.triangle().time_origin() + (t - 1));
              double xi = evaluate_basis(rwd->xi_basis_, pt).row(0).dot(kxi);
              double logmean = iota + delta + beta + gamma + xi;
              total += negbin_sample(
                  NegBinParams{std::exp(std::min(logmean, 50.0)), theta}, rng);
            }
          } else {  // window_nb
            ParameterState st;
            st.params = samples.chains[c].row(r).segment(base, P_region).transpose();
            Eigen::VectorXd b = wnb->beta(st);
            double alpha;
            if (t <= t0) {
              alpha = param(wnb->off_alpha_ + (t - wnb->w_start()));
            } else {
              double sig_alpha = std::exp(param(wnb->off_lsig_alpha_));
              alpha = param(wnb->off_alpha_ + (t0 - wnb->w_start())) +
                      sig_alpha * std::sqrt(static_cast<double>(t - t0)) * rng.normal();
            }
            for (int d = 1; d <= D; ++d) {
              if (t <= t0 && d <= k && data.observed(t, s, d)) {
                total += data.z(t, s, d);
                continue;
              }
              double logmean = alpha + std::log(std::max(b(d - 1), 1e-300));
              total += negbin_sample(
                  NegBinParams{std::exp(std::min(logmean, 50.0)), theta}, rng);
            }
          }
          row.draws(di) = static_cast<double>(total);
        }
      }
      row.quantiles = quantile_set(row.draws);
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

}  // namespace nowcast
