#include "nowcast/mcmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nowcast/kernels.hpp"

namespace nowcast {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fast NB log pmf with the region-constant pieces precomputed.
inline double nb_term(long y, double loglam, double lam, double theta, double lgtheta,
                      double logtheta) {
  double denom = std::log(theta + lam);
  double v = theta * (logtheta - denom) + y * (loglam - denom);
  if (y > 0) v += std::lgamma(y + theta) - lgtheta - lgamma_int(y + 1);
  return v;
}

// Beta-Binomial log pmf with lgamma(phi) precomputed; caller guarantees
// 0 <= z <= n.
inline double bb_term(long z, double nu, double phi, long n, double lgphi) {
  if (n == 0) return 0.0;
  double a = nu * phi, b = (1.0 - nu) * phi;
  return lgamma_int(n + 1) - lgamma_int(z + 1) - lgamma_int(n - z + 1) +
         std::lgamma(z + a) + std::lgamma(n - z + b) - std::lgamma(n + phi) -
         std::lgamma(a) - std::lgamma(b) + lgphi;
}

inline double clamp_prob(double p) { return std::min(std::max(p, 1e-12), 1.0 - 1e-12); }

}  // namespace

// ---- config / samples ---------------------------------------------------------

void McmcConfig::validate() const {
  if (n_chains < 1) throw std::invalid_argument("McmcConfig: n_chains must be >= 1");
  if (burn_in < 0 || burn_in >= n_iterations)
    throw std::invalid_argument("McmcConfig: require 0 <= burn_in < n_iterations");
  if (thin < 1) throw std::invalid_argument("McmcConfig: thin must be >= 1");
}

int PosteriorSamples::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == name) return static_cast<int>(i);
  return -1;
}

Eigen::VectorXd PosteriorSamples::pooled(int param_index) const {
  long n = n_retained();
  Eigen::VectorXd out(n * n_chains());
  for (int c = 0; c < n_chains(); ++c) out.segment(c * n, n) = chains[c].col(param_index);
  return out;
}

Eigen::VectorXd PosteriorSamples::pooled_lambda(int t, int s) const {
  long n = n_retained();
  int col = (t - 1) * S + (s - 1);
  Eigen::VectorXd out(n * n_chains());
  for (int c = 0; c < n_chains(); ++c) out.segment(c * n, n) = lambda[c].col(col);
  return out;
}

// ---- latent total enumeration ---------------------------------------------------

namespace {

struct LatentRowCtx {
  double loglam = 0.0, lam = 1.0, theta = 1.0, lgtheta = 0.0, logtheta = 0.0;
  std::vector<long> z;  // modeled cells in delay order
  std::vector<double> nu, phi;
  long floor = 0;
  double expected_missing = 1.0;  // lambda * (1 - observed mass fraction)
  // Under-reporting variant: the y-update conditions on x through a
  // Binomial term instead of the NB.
  bool binom_mode = false;
  long x_cap = 0;
  double log_pi = 0.0, log_1mpi = 0.0;
};

LatentTotalDist enumerate_latent_total_core(const LatentRowCtx& ctx) {
  LatentTotalDist out;
  out.floor = ctx.floor;
  const std::size_t m = ctx.z.size();

  long cap;
  if (ctx.binom_mode) {
    cap = ctx.x_cap;
    if (cap < ctx.floor) {  // degenerate support: return the floor
      out.probs = {1.0};
      return out;
    }
  } else {
    NegBinParams rem{std::max(ctx.expected_missing, 1e-6), ctx.theta};
    cap = ctx.floor + negbin_quantile(rem, 1.0 - 1e-8) + 10;
  }

  const double log_ratio_nb = std::log(ctx.lam) - std::log(ctx.lam + ctx.theta);
  std::vector<double> logw;
  logw.reserve(static_cast<std::size_t>(std::max<long>(cap - ctx.floor + 1, 1)));
  logw.push_back(0.0);
  double logw_max = 0.0;

  // Running n_d values at the current y.
  std::vector<long> n(m);
  {
    long rem = ctx.floor;
    for (std::size_t j = 0; j < m; ++j) {
      n[j] = rem;
      rem -= ctx.z[j];
    }
  }

  long y = ctx.floor;
  const long hard_cap = ctx.floor + 2000000;
  while (true) {
    if (ctx.binom_mode && y >= ctx.x_cap) break;
    if (y >= cap) {
      if (ctx.binom_mode) break;  // bounded support, no extension
      if (logw.back() - logw_max < std::log(1e-10) || y >= hard_cap) break;
    }
    double lr;
    if (ctx.binom_mode) {
      lr = std::log(static_cast<double>(ctx.x_cap - y)) -
           std::log(static_cast<double>(y + 1)) + ctx.log_pi - ctx.log_1mpi;
    } else {
      lr = log_ratio_nb + std::log(y + ctx.theta) - std::log(static_cast<double>(y + 1));
    }
    for (std::size_t j = 0; j < m; ++j) {
      double b = (1.0 - ctx.nu[j]) * ctx.phi[j];
      lr += std::log(static_cast<double>(n[j] + 1)) -
            std::log(static_cast<double>(n[j] + 1 - ctx.z[j])) +
            std::log(n[j] - ctx.z[j] + b) - std::log(n[j] + ctx.phi[j]);
      ++n[j];
    }
    logw.push_back(logw.back() + lr);
    logw_max = std::max(logw_max, logw.back());
    ++y;
  }

  out.probs.resize(logw.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    out.probs[i] = std::exp(logw[i] - logw_max);
    total += out.probs[i];
  }
  for (double& p : out.probs) p /= total;
  return out;
}

long sample_from_dist(const LatentTotalDist& dist, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    acc += dist.probs[i];
    if (u <= acc) return dist.floor + static_cast<long>(i);
  }
  return dist.floor + static_cast<long>(dist.probs.size()) - 1;
}

LatentRowCtx build_row_ctx(const GdmModel& model, const ParameterState& st, int t, int s) {
  const auto& data = model.data();
  LatentRowCtx ctx;
  ctx.loglam = model.eval_f(st, t, s);
  ctx.lam = std::exp(std::min(ctx.loglam, 50.0));
  ctx.theta = model.theta(st, s);
  ctx.lgtheta = std::lgamma(ctx.theta);
  ctx.logtheta = std::log(ctx.theta);
  ctx.floor = model.latent_floor(st, t, s);

  int m = model.n_delay_terms(t, s);
  Eigen::VectorXd nu;
  if (m > 0) nu = model.relative_means(st, t, s);
  for (int d = 1; d <= m; ++d) {
    ctx.z.push_back(model.effective_z(st, t, s, d));
    ctx.nu.push_back(nu(d - 1));
    ctx.phi.push_back(model.phi(st, s, d));
  }

  int k = data.observed_delays(t);
  double obs_frac = 0.0;
  if (k >= 1 && model.spec().link == LinkVariant::survivor_probit) {
    Eigen::VectorXd S = model.eval_survivor_curve(st, t, s);
    obs_frac = S(std::min(k, model.spec().d_max - 1) - 1);
  } else if (k >= 1) {
    obs_frac = static_cast<double>(k) / model.spec().d_max;
  }
  ctx.expected_missing = ctx.lam * (1.0 - obs_frac);

  if (model.spec().underreporting.enabled) {
    ctx.binom_mode = true;
    ctx.x_cap = st.latent_x[(t - 1) * data.S() + (s - 1)];
    double logit_pi = st.params(model.layout().block("ur_intercept").offset);
    double pi = clamp_prob(logistic(logit_pi));
    ctx.log_pi = std::log(pi);
    ctx.log_1mpi = std::log1p(-pi);
  }
  return ctx;
}

}  // namespace

LatentTotalDist latent_total_distribution(const GdmModel& model, const ParameterState& st,
                                          int t, int s) {
  if (model.row_fully_observed(t, s))
    throw std::invalid_argument("latent_total_distribution: row is fully observed");
  return enumerate_latent_total_core(build_row_ctx(model, st, t, s));
}

long sample_latent_total(const GdmModel& model, const ParameterState& st, int t, int s,
                         Rng& rng) {
  if (model.row_fully_observed(t, s)) return model.data().triangle().y(t, s);
  return sample_from_dist(latent_total_distribution(model, st, t, s), rng);
}

// ---- the GDM sweeper -------------------------------------------------------------

namespace {

class GdmSweeper : public Sweeper {
 public:
  GdmSweeper(const GdmModel& model, const McmcConfig& cfg) : m_(model), cfg_(cfg) {
    T_ = m_.T();
    S_ = m_.S();
    D_ = m_.spec().d_max;
    Dm_ = m_.n_model_delays();
    survivor_ = m_.spec().link == LinkVariant::survivor_probit;
    ur_ = m_.spec().underreporting.enabled;

    auto add_mv = [&](const NestedTerm& term, bool is_f) {
      for (int s = 1; s <= S_; ++s)
        mv_blocks_.push_back({MvKernel(term.name + ".region[" + std::to_string(s) + "]",
                                       term.K, cfg_.target_accept_mv,
                                       cfg_.cov_adapt_start),
                              &term, s, is_f});
      if (!cfg_.conjugate_overall)
        ov_blocks_.push_back({MvKernel(term.name + ".overall", term.K,
                                       cfg_.target_accept_mv, cfg_.cov_adapt_start),
                              &term, is_f});
    };
    for (const auto& term : m_.f_terms()) add_mv(term, true);
    for (const auto& term : m_.g_terms()) add_mv(term, false);

    auto add_scalar = [&](const std::string& name) {
      scalar_kernels_.emplace_back(name, cfg_.target_accept_scalar);
    };
    for (const auto* terms : {&m_.f_terms(), &m_.g_terms()})
      for (const auto& term : *terms) {
        add_scalar(term.name + ".sigma_o");
        for (int s = 1; s <= S_; ++s)
          add_scalar(term.name + ".sigma_r[" + std::to_string(s) + "]");
      }
    for (int s = 1; s <= S_; ++s) add_scalar("iota[" + std::to_string(s) + "]");
    if (!m_.spec().fixed_theta)
      for (int s = 1; s <= S_; ++s) add_scalar("theta[" + std::to_string(s) + "]");
    for (int s = 1; s <= S_; ++s)
      for (int j = 0; j < D_; ++j)
        add_scalar("psi[" + std::to_string(s) + "," + std::to_string(j + 1) + "]");
    for (int s = 1; s <= S_; ++s)
      for (int d = 1; d <= Dm_; ++d)
        add_scalar("phi[" + std::to_string(s) + "," + std::to_string(d) + "]");
    if (ur_) add_scalar("ur_intercept");
  }

  void init(ParameterState& st, Rng& rng) override {
    (void)rng;
    fterm_val_.assign(m_.f_terms().size(), Eigen::MatrixXd::Zero(T_, S_));
    gterm_val_.assign(m_.g_terms().size(), Eigen::MatrixXd::Zero(T_, S_));
    fval_.setZero(T_, S_);
    goff_.setZero(T_, S_);
    nbterm_.setZero(T_, S_);
    urterm_.setZero(T_, S_);
    nu_.assign(static_cast<std::size_t>(T_) * S_ * std::max(Dm_, 1), 0.0);
    cell_.assign(nu_.size(), 0.0);
    psi_nat_.assign(S_ + 1, Eigen::VectorXd());
    theta_.assign(S_ + 1, 1.0);
    lgtheta_.assign(S_ + 1, 0.0);
    logtheta_.assign(S_ + 1, 0.0);
    phi_.assign(static_cast<std::size_t>(S_ + 1) * std::max(Dm_, 1), 1.0);
    lgphi_.assign(phi_.size(), 0.0);
    refresh_all(st);
  }

  void sweep(ParameterState& st, Rng& rng, long iter, bool adapting) override {
    int mv_idx = 0, sc_idx = 0, ov_idx = 0;

    for (std::size_t i = 0; i < m_.f_terms().size(); ++i) {
      const auto& term = m_.f_terms()[i];
      for (int s = 1; s <= S_; ++s)
        update_region_f(st, rng, mv_blocks_[mv_idx++], static_cast<int>(i), iter,
                        adapting);
      update_overall(st, rng, term, ov_idx, iter, adapting);
      sc_idx = update_sigmas(st, rng, term, sc_idx, iter, adapting);
    }

    for (int s = 1; s <= S_; ++s)
      update_iota(st, rng, scalar_kernels_[sc_idx++], s, iter, adapting);
    if (!m_.spec().fixed_theta)
      for (int s = 1; s <= S_; ++s)
        update_theta(st, rng, scalar_kernels_[sc_idx++], s, iter, adapting);

    for (std::size_t i = 0; i < m_.g_terms().size(); ++i) {
      const auto& term = m_.g_terms()[i];
      for (int s = 1; s <= S_; ++s)
        update_region_g(st, rng, mv_blocks_[mv_idx++], static_cast<int>(i), iter,
                        adapting);
      update_overall(st, rng, term, ov_idx, iter, adapting);
      sc_idx = update_sigmas(st, rng, term, sc_idx, iter, adapting);
    }

    for (int s = 1; s <= S_; ++s)
      for (int j = 0; j < D_; ++j)
        update_psi(st, rng, scalar_kernels_[sc_idx++], s, j, iter, adapting);
    for (int s = 1; s <= S_; ++s)
      for (int d = 1; d <= Dm_; ++d)
        update_phi(st, rng, scalar_kernels_[sc_idx++], s, d, iter, adapting);
    if (ur_) update_ur(st, rng, scalar_kernels_[sc_idx++], iter, adapting);

    for (std::size_t i = 0; i < m_.latent_rows().size(); ++i)
      update_latent_y(st, rng, static_cast<int>(i));
    if (cfg_.sample_missing_z)
      for (std::size_t i = 0; i < m_.missing_cells().size(); ++i)
        update_latent_z(st, rng, static_cast<int>(i));
    if (ur_)
      for (int t = 1; t <= T_; ++t)
        for (int s = 1; s <= S_; ++s) update_latent_x(st, rng, t, s);

    // Kill accumulated floating drift in the running total.
    if (iter % 2048 == 0) refresh_all(st);
  }

  Eigen::VectorXd log_lambda() const override {
    Eigen::VectorXd out(T_ * S_);
    for (int t = 0; t < T_; ++t)
      for (int s = 0; s < S_; ++s) out(t * S_ + s) = fval_(t, s);
    return out;
  }

  std::vector<BlockStats> block_stats() const override {
    std::vector<BlockStats> out;
    for (const auto& b : mv_blocks_) out.push_back(b.k.stats_);
    for (const auto& b : ov_blocks_) out.push_back(b.k.stats_);
    for (const auto& k : scalar_kernels_) out.push_back(k.stats_);
    return out;
  }

 private:
  struct MvBlock {
    MvKernel k;
    const NestedTerm* term;
    int s;
    bool is_f;
  };
  struct OvBlock {
    MvKernel k;
    const NestedTerm* term;
    bool is_f;
  };

  std::size_t cell_index(int t, int s, int d) const {
    return (static_cast<std::size_t>(t - 1) * S_ + (s - 1)) * Dm_ + (d - 1);
  }

  long eff_y(const ParameterState& st, int t, int s) const {
    return m_.effective_y(st, t, s);
  }

  double nb_at(const ParameterState& st, int t, int s, double loglam) const {
    long count = ur_ ? st.latent_x[(t - 1) * S_ + (s - 1)] : eff_y(st, t, s);
    return nb_term(count, loglam, std::exp(std::min(loglam, 50.0)), theta_[s],
                   lgtheta_[s], logtheta_[s]);
  }

  double ur_at(const ParameterState& st, int t, int s, double logit_pi) const {
    long x = st.latent_x[(t - 1) * S_ + (s - 1)];
    long y = eff_y(st, t, s);
    double pi = clamp_prob(logistic(logit_pi));
    return log_choose(x, y) + y * std::log(pi) + (x - y) * std::log1p(-pi);
  }

  // Recompute the delay cells of row (t,s) from delay d_from upward given
  // candidate offset/psi values; writes into the nu/cell output slices
  // (indexed d-1) and returns the sum over recomputed cells.
  double row_cells(const ParameterState& st, int t, int s, double goff_val,
                   const Eigen::VectorXd& psi_s, int d_from, double* nu_out,
                   double* cell_out) const {
    int mterms = m_.n_delay_terms(t, s);
    double sum = 0.0;
    long remaining = eff_y(st, t, s);
    double prev_S = 0.0;
    if (survivor_ && d_from > 1)
      prev_S = clamp_prob(norm_cdf(psi_s(d_from - 2) + goff_val));
    for (int d = 1; d <= mterms; ++d) {
      long z = m_.effective_z(st, t, s, d);
      if (d >= d_from) {
        double nu;
        if (survivor_) {
          double S_d = clamp_prob(norm_cdf(psi_s(d - 1) + goff_val));
          nu = clamp_prob((S_d - prev_S) / (1.0 - prev_S));
          prev_S = S_d;
        } else {
          nu = clamp_prob(logistic(psi_s(d - 1) + goff_val));
        }
        nu_out[d - 1] = nu;
        cell_out[d - 1] =
            bb_term(z, nu, phi_[s * Dm_ + (d - 1)], remaining, lgphi_[s * Dm_ + (d - 1)]);
        sum += cell_out[d - 1];
      }
      remaining -= z;
    }
    return sum;
  }

  void refresh_all(const ParameterState& st) {
    for (int s = 1; s <= S_; ++s) {
      psi_nat_[s] = m_.psi(st, s);
      theta_[s] = m_.theta(st, s);
      lgtheta_[s] = std::lgamma(theta_[s]);
      logtheta_[s] = std::log(theta_[s]);
      for (int d = 1; d <= Dm_; ++d) {
        phi_[s * Dm_ + (d - 1)] = m_.phi(st, s, d);
        lgphi_[s * Dm_ + (d - 1)] = std::lgamma(phi_[s * Dm_ + (d - 1)]);
      }
    }
    const auto& fs = m_.f_terms();
    const auto& gs = m_.g_terms();
    for (int s = 1; s <= S_; ++s) {
      for (std::size_t i = 0; i < fs.size(); ++i) {
        Eigen::Map<const Eigen::VectorXd> kap(
            st.params.data() + fs[i].off_region + (s - 1) * fs[i].K, fs[i].K);
        fterm_val_[i].col(s - 1) = fs[i].Xt * kap;
      }
      for (std::size_t i = 0; i < gs.size(); ++i) {
        Eigen::Map<const Eigen::VectorXd> kap(
            st.params.data() + gs[i].off_region + (s - 1) * gs[i].K, gs[i].K);
        gterm_val_[i].col(s - 1) = gs[i].Xt * kap;
      }
    }
    double ur_logit = ur_ ? st.params(m_.layout().block("ur_intercept").offset) : 0.0;
    loglik_ = 0.0;
    for (int t = 1; t <= T_; ++t)
      for (int s = 1; s <= S_; ++s) {
        double f = m_.iota(st, s);
        for (std::size_t i = 0; i < fs.size(); ++i) f += fterm_val_[i](t - 1, s - 1);
        fval_(t - 1, s - 1) = f;
        double g = 0.0;
        for (std::size_t i = 0; i < gs.size(); ++i) g += gterm_val_[i](t - 1, s - 1);
        goff_(t - 1, s - 1) = g;
        nbterm_(t - 1, s - 1) = nb_at(st, t, s, f);
        loglik_ += nbterm_(t - 1, s - 1);
        if (ur_) {
          urterm_(t - 1, s - 1) = ur_at(st, t, s, ur_logit);
          loglik_ += urterm_(t - 1, s - 1);
        }
        if (Dm_ > 0 && m_.n_delay_terms(t, s) > 0)
          loglik_ += row_cells(st, t, s, g, psi_nat_[s], 1, &nu_[cell_index(t, s, 1)],
                               &cell_[cell_index(t, s, 1)]);
      }
  }

  // -- block updates ---------------------------------------------------------

  void update_region_f(ParameterState& st, Rng& rng, MvBlock& blk, int term_i, long iter,
                       bool adapting) {
    const NestedTerm& term = *blk.term;
    const int s = blk.s, K = term.K;
    Eigen::Map<Eigen::VectorXd> cur(st.params.data() + term.off_region + (s - 1) * K, K);
    Eigen::VectorXd prop = blk.k.propose(cur, rng);

    Eigen::Map<const Eigen::VectorXd> ko(st.params.data() + term.off_overall, K);
    double sig = std::exp(st.params(term.off_lsig_region + (s - 1)));
    Eigen::VectorXd dn = prop - ko;
    Eigen::VectorXd dc = cur - ko;
    double dprior = -0.5 * (dn.dot(term.B * dn) - dc.dot(term.B * dc)) / (sig * sig);

    Eigen::VectorXd delta_col = term.Xt * (prop - cur);
    double dlik = 0.0;
    scratch_col_.resize(T_);
    for (int t = 1; t <= T_; ++t) {
      scratch_col_(t - 1) = nb_at(st, t, s, fval_(t - 1, s - 1) + delta_col(t - 1));
      dlik += scratch_col_(t - 1) - nbterm_(t - 1, s - 1);
    }

    double d = dprior + dlik;
    double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
    bool accept = std::isfinite(d) && rng.uniform() < alpha;
    if (accept) {
      cur = prop;
      fterm_val_[term_i].col(s - 1) += delta_col;
      fval_.col(s - 1) += delta_col;
      nbterm_.col(s - 1) = scratch_col_;
      loglik_ += dlik;
    }
    blk.k.record(alpha, accept, adapting, iter, cur);
  }

  void update_region_g(ParameterState& st, Rng& rng, MvBlock& blk, int term_i, long iter,
                       bool adapting) {
    const NestedTerm& term = *blk.term;
    const int s = blk.s, K = term.K;
    Eigen::Map<Eigen::VectorXd> cur(st.params.data() + term.off_region + (s - 1) * K, K);
    Eigen::VectorXd prop = blk.k.propose(cur, rng);

    Eigen::Map<const Eigen::VectorXd> ko(st.params.data() + term.off_overall, K);
    double sig = std::exp(st.params(term.off_lsig_region + (s - 1)));
    Eigen::VectorXd dn = prop - ko;
    Eigen::VectorXd dc = cur - ko;
    double dprior = -0.5 * (dn.dot(term.B * dn) - dc.dot(term.B * dc)) / (sig * sig);

    Eigen::VectorXd delta_col = term.Xt * (prop - cur);
    double dlik = 0.0;
    ensure_scratch();
    for (int t = 1; t <= T_; ++t) {
      int mterms = m_.n_delay_terms(t, s);
      if (mterms == 0) continue;
      double g_new = goff_(t - 1, s - 1) + delta_col(t - 1);
      dlik += row_cells(st, t, s, g_new, psi_nat_[s], 1, &scratch_nu_[(t - 1) * Dm_],
                        &scratch_cell_[(t - 1) * Dm_]);
      for (int d = 1; d <= mterms; ++d) dlik -= cell_[cell_index(t, s, d)];
    }

    double d = dprior + dlik;
    double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
    bool accept = std::isfinite(d) && rng.uniform() < alpha;
    if (accept) {
      cur = prop;
      gterm_val_[term_i].col(s - 1) += delta_col;
      goff_.col(s - 1) += delta_col;
      for (int t = 1; t <= T_; ++t)
        for (int dd = 1; dd <= m_.n_delay_terms(t, s); ++dd) {
          nu_[cell_index(t, s, dd)] = scratch_nu_[(t - 1) * Dm_ + (dd - 1)];
          cell_[cell_index(t, s, dd)] = scratch_cell_[(t - 1) * Dm_ + (dd - 1)];
        }
      loglik_ += dlik;
    }
    blk.k.record(alpha, accept, adapting, iter, cur);
  }

  void update_overall(ParameterState& st, Rng& rng, const NestedTerm& term, int& ov_idx,
                      long iter, bool adapting) {
    const int K = term.K;
    Eigen::Map<Eigen::VectorXd> ko(st.params.data() + term.off_overall, K);
    if (cfg_.conjugate_overall) {
      // Exact MVN Gibbs draw: all precisions are multiples of the same B,
      // so the full-conditional precision is c*B and the mean a weighted
      // average of the regional coefficients.
      double sig_o = std::exp(st.params(term.off_lsig_overall));
      double c = 1.0 / (sig_o * sig_o);
      Eigen::VectorXd weighted = Eigen::VectorXd::Zero(K);
      for (int s = 0; s < S_; ++s) {
        double sig_s = std::exp(st.params(term.off_lsig_region + s));
        double w = 1.0 / (sig_s * sig_s);
        Eigen::Map<const Eigen::VectorXd> ks(st.params.data() + term.off_region + s * K,
                                             K);
        weighted += w * ks;
        c += w;
      }
      Eigen::VectorXd mean = weighted / c;
      Eigen::VectorXd z(K);
      for (int i = 0; i < K; ++i) z(i) = rng.normal();
      // B = L L'; draw = mean + L^{-T} z / sqrt(c).
      Eigen::VectorXd noise = term.cholB.matrixU().solve(z) / std::sqrt(c);
      ko = mean + noise;
      return;
    }

    auto& blk = ov_blocks_[ov_idx++];
    Eigen::VectorXd prop = blk.k.propose(ko, rng);
    double sig_o = std::exp(st.params(term.off_lsig_overall));
    double dprior =
        -0.5 * (prop.dot(term.B * prop) - ko.dot(term.B * ko)) / (sig_o * sig_o);
    for (int s = 0; s < S_; ++s) {
      double sig_s = std::exp(st.params(term.off_lsig_region + s));
      Eigen::Map<const Eigen::VectorXd> ks(st.params.data() + term.off_region + s * K, K);
      Eigen::VectorXd dn = ks - prop, dc = ks - ko;
      dprior += -0.5 * (dn.dot(term.B * dn) - dc.dot(term.B * dc)) / (sig_s * sig_s);
    }
    double alpha = std::isfinite(dprior) ? std::exp(std::min(dprior, 0.0)) : 0.0;
    bool accept = std::isfinite(dprior) && rng.uniform() < alpha;
    if (accept) ko = prop;
    blk.k.record(alpha, accept, adapting, iter, ko);
  }

  int update_sigmas(ParameterState& st, Rng& rng, const NestedTerm& term, int sc_idx,
                    long iter, bool adapting) {
    const int K = term.K;
    auto halfnormal = [&](double ls) {
      double sig = std::exp(ls);
      return std::log(2.0) + norm_logpdf(sig, 0.0, m_.spec().priors.sigma_halfnormal_sd) +
             ls;
    };
    {  // overall sigma
      auto& k = scalar_kernels_[sc_idx++];
      double cur = st.params(term.off_lsig_overall);
      double prop = cur + k.step() * rng.normal();
      Eigen::Map<const Eigen::VectorXd> ko(st.params.data() + term.off_overall, K);
      double quad = ko.dot(term.B * ko);
      auto lp = [&](double ls) {
        return -K * ls - 0.5 * quad / std::exp(2.0 * ls) + halfnormal(ls);
      };
      double d = lp(prop) - lp(cur);
      double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
      if (std::isfinite(d) && rng.uniform() < alpha) {
        st.params(term.off_lsig_overall) = prop;
        k.mark_accept();
      }
      k.record(alpha, adapting, iter);
    }
    for (int s = 0; s < S_; ++s) {
      auto& k = scalar_kernels_[sc_idx++];
      double cur = st.params(term.off_lsig_region + s);
      double prop = cur + k.step() * rng.normal();
      Eigen::Map<const Eigen::VectorXd> ko(st.params.data() + term.off_overall, K);
      Eigen::Map<const Eigen::VectorXd> ks(st.params.data() + term.off_region + s * K, K);
      Eigen::VectorXd diff = ks - ko;
      double quad = diff.dot(term.B * diff);
      auto lp = [&](double ls) {
        return -K * ls - 0.5 * quad / std::exp(2.0 * ls) + halfnormal(ls);
      };
      double d = lp(prop) - lp(cur);
      double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
      if (std::isfinite(d) && rng.uniform() < alpha) {
        st.params(term.off_lsig_region + s) = prop;
        k.mark_accept();
      }
      k.record(alpha, adapting, iter);
    }
    return sc_idx;
  }

  void update_iota(ParameterState& st, Rng& rng, ScalarKernel& k, int s, long iter,
                   bool adapting) {
    const int off = m_.layout().block("iota").offset + (s - 1);
    double cur = st.params(off);
    double prop = cur + k.step() * rng.normal();
    double dprior = norm_logpdf(prop, 0.0, m_.spec().priors.intercept_sd) -
                    norm_logpdf(cur, 0.0, m_.spec().priors.intercept_sd);
    double delta = prop - cur;
    double dlik = 0.0;
    scratch_col_.resize(T_);
    for (int t = 1; t <= T_; ++t) {
      scratch_col_(t - 1) = nb_at(st, t, s, fval_(t - 1, s - 1) + delta);
      dlik += scratch_col_(t - 1) - nbterm_(t - 1, s - 1);
    }
    double d = dprior + dlik;
    double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
    if (std::isfinite(d) && rng.uniform() < alpha) {
      st.params(off) = prop;
      fval_.col(s - 1).array() += delta;
      nbterm_.col(s - 1) = scratch_col_;
      loglik_ += dlik;
      k.mark_accept();
    }
    k.record(alpha, adapting, iter);
  }

  void update_theta(ParameterState& st, Rng& rng, ScalarKernel& k, int s, long iter,
                    bool adapting) {
    const int off = m_.layout().block("log_theta").offset + (s - 1);
    double cur = st.params(off);
    double prop = cur + k.step() * rng.normal();
    double th_new = std::exp(prop);
    auto gamma_lp = [&](double lt) {
      double x = std::exp(lt);
      return (m_.spec().priors.theta_shape - 1.0) * std::log(x) -
             m_.spec().priors.theta_rate * x + lt;
    };
    double dprior = gamma_lp(prop) - gamma_lp(cur);
    double lg_new = std::lgamma(th_new), lth_new = std::log(th_new);
    double dlik = 0.0;
    scratch_col_.resize(T_);
    for (int t = 1; t <= T_; ++t) {
      long count = ur_ ? st.latent_x[(t - 1) * S_ + (s - 1)] : eff_y(st, t, s);
      double loglam = fval_(t - 1, s - 1);
      scratch_col_(t - 1) = nb_term(count, loglam, std::exp(std::min(loglam, 50.0)),
                                    th_new, lg_new, lth_new);
      dlik += scratch_col_(t - 1) - nbterm_(t - 1, s - 1);
    }
    double d = dprior + dlik;
    double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
    if (std::isfinite(d) && rng.uniform() < alpha) {
      st.params(off) = prop;
      theta_[s] = th_new;
      lgtheta_[s] = lg_new;
      logtheta_[s] = lth_new;
      nbterm_.col(s - 1) = scratch_col_;
      loglik_ += dlik;
      k.mark_accept();
    }
    k.record(alpha, adapting, iter);
  }

  void update_psi(ParameterState& st, Rng& rng, ScalarKernel& k, int s, int j, long iter,
                  bool adapting) {
    const int off = m_.layout().block("psi_raw").offset + (s - 1) * D_ + j;
    double cur = st.params(off);
    double prop = cur + k.step() * rng.normal();

    st.params(off) = prop;
    Eigen::VectorXd psi_new = m_.psi(st, s);
    st.params(off) = cur;

    const double psd = m_.spec().priors.psi_rw_sd;
    auto psi_prior = [&](const Eigen::VectorXd& ps, double raw_j) {
      double lp = norm_logpdf(ps(0), 0.0, psd);
      for (int d = 1; d < D_; ++d) lp += norm_logpdf(ps(d), ps(d - 1), psd);
      if (survivor_ && j >= 1) lp += raw_j;  // Jacobian of the changed increment
      return lp;
    };
    double dprior = psi_prior(psi_new, prop) - psi_prior(psi_nat_[s], cur);

    // Delay cells affected: all under the hazard link or when psi_1
    // moves; from delay j upward when increment j changes.
    int d_from = (survivor_ && j >= 1) ? j + 1 : 1;
    double dlik = 0.0;
    ensure_scratch();
    if (d_from <= Dm_) {
      for (int t = 1; t <= T_; ++t) {
        int mterms = m_.n_delay_terms(t, s);
        if (mterms < d_from) continue;
        dlik += row_cells(st, t, s, goff_(t - 1, s - 1), psi_new, d_from,
                          &scratch_nu_[(t - 1) * Dm_], &scratch_cell_[(t - 1) * Dm_]);
        for (int d = d_from; d <= mterms; ++d) dlik -= cell_[cell_index(t, s, d)];
      }
    }

    double dtot = dprior + dlik;
    double alpha = std::isfinite(dtot) ? std::exp(std::min(dtot, 0.0)) : 0.0;
    if (std::isfinite(dtot) && rng.uniform() < alpha) {
      st.params(off) = prop;
      psi_nat_[s] = psi_new;
      if (d_from <= Dm_)
        for (int t = 1; t <= T_; ++t) {
          int mterms = m_.n_delay_terms(t, s);
          for (int d = d_from; d <= mterms; ++d) {
            nu_[cell_index(t, s, d)] = scratch_nu_[(t - 1) * Dm_ + (d - 1)];
            cell_[cell_index(t, s, d)] = scratch_cell_[(t - 1) * Dm_ + (d - 1)];
          }
        }
      loglik_ += dlik;
      k.mark_accept();
    }
    k.record(alpha, adapting, iter);
  }

  void update_phi(ParameterState& st, Rng& rng, ScalarKernel& k, int s, int d, long iter,
                  bool adapting) {
    const int off = m_.layout().block("log_phi").offset + (s - 1) * Dm_ + (d - 1);
    double cur = st.params(off);
    double prop = cur + k.step() * rng.normal();
    double phi_new = std::exp(prop);
    double lgphi_new = std::lgamma(phi_new);
    auto gamma_lp = [&](double lph) {
      double x = std::exp(lph);
      return (m_.spec().priors.phi_shape - 1.0) * std::log(x) -
             m_.spec().priors.phi_rate * x + lph;
    };
    double dprior = gamma_lp(prop) - gamma_lp(cur);

    double dlik = 0.0;
    scratch_col_.resize(T_);
    for (int t = 1; t <= T_; ++t) {
      if (m_.n_delay_terms(t, s) < d) {
        scratch_col_(t - 1) = 0.0;
        continue;
      }
      long remaining = eff_y(st, t, s);
      for (int dd = 1; dd < d; ++dd) remaining -= m_.effective_z(st, t, s, dd);
      long z = m_.effective_z(st, t, s, d);
      scratch_col_(t - 1) =
          bb_term(z, nu_[cell_index(t, s, d)], phi_new, remaining, lgphi_new);
      dlik += scratch_col_(t - 1) - cell_[cell_index(t, s, d)];
    }

    double dtot = dprior + dlik;
    double alpha = std::isfinite(dtot) ? std::exp(std::min(dtot, 0.0)) : 0.0;
    if (std::isfinite(dtot) && rng.uniform() < alpha) {
      st.params(off) = prop;
      phi_[s * Dm_ + (d - 1)] = phi_new;
      lgphi_[s * Dm_ + (d - 1)] = lgphi_new;
      for (int t = 1; t <= T_; ++t)
        if (m_.n_delay_terms(t, s) >= d) cell_[cell_index(t, s, d)] = scratch_col_(t - 1);
      loglik_ += dlik;
      k.mark_accept();
    }
    k.record(alpha, adapting, iter);
  }

  void update_ur(ParameterState& st, Rng& rng, ScalarKernel& k, long iter, bool adapting) {
    const int off = m_.layout().block("ur_intercept").offset;
    double cur = st.params(off);
    double prop = cur + k.step() * rng.normal();
    const auto& ur = m_.spec().underreporting;
    double dprior = norm_logpdf(prop, ur.prior_mean, ur.prior_sd) -
                    norm_logpdf(cur, ur.prior_mean, ur.prior_sd);
    double dlik = 0.0;
    scratch_mat_.resize(T_, S_);
    for (int t = 1; t <= T_; ++t)
      for (int s = 1; s <= S_; ++s) {
        scratch_mat_(t - 1, s - 1) = ur_at(st, t, s, prop);
        dlik += scratch_mat_(t - 1, s - 1) - urterm_(t - 1, s - 1);
      }
    double d = dprior + dlik;
    double alpha = std::isfinite(d) ? std::exp(std::min(d, 0.0)) : 0.0;
    if (std::isfinite(d) && rng.uniform() < alpha) {
      st.params(off) = prop;
      urterm_ = scratch_mat_;
      loglik_ += dlik;
      k.mark_accept();
    }
    k.record(alpha, adapting, iter);
  }

  void update_latent_y(ParameterState& st, Rng& rng, int row_id) {
    auto [t, s] = m_.latent_rows()[row_id];
    LatentRowCtx ctx;
    ctx.loglam = fval_(t - 1, s - 1);
    ctx.lam = std::exp(std::min(ctx.loglam, 50.0));
    ctx.theta = theta_[s];
    ctx.lgtheta = lgtheta_[s];
    ctx.logtheta = logtheta_[s];
    ctx.floor = m_.latent_floor(st, t, s);
    int mterms = m_.n_delay_terms(t, s);
    for (int d = 1; d <= mterms; ++d) {
      ctx.z.push_back(m_.effective_z(st, t, s, d));
      ctx.nu.push_back(nu_[cell_index(t, s, d)]);
      ctx.phi.push_back(phi_[s * Dm_ + (d - 1)]);
    }
    int k = m_.data().observed_delays(t);
    double obs_frac = 0.0;
    if (k >= 1 && survivor_) {
      int dd = std::min(k, D_ - 1);
      obs_frac = clamp_prob(norm_cdf(psi_nat_[s](dd - 1) + goff_(t - 1, s - 1)));
    } else if (k >= 1) {
      obs_frac = static_cast<double>(k) / D_;
    }
    ctx.expected_missing = ctx.lam * (1.0 - obs_frac);
    if (ur_) {
      ctx.binom_mode = true;
      ctx.x_cap = st.latent_x[(t - 1) * S_ + (s - 1)];
      double pi =
          clamp_prob(logistic(st.params(m_.layout().block("ur_intercept").offset)));
      ctx.log_pi = std::log(pi);
      ctx.log_1mpi = std::log1p(-pi);
    }

    long y_new = sample_from_dist(enumerate_latent_total_core(ctx), rng);
    if (y_new == st.latent_y[row_id]) return;
    st.latent_y[row_id] = y_new;
    apply_row_refresh(st, t, s);
  }

  void update_latent_z(ParameterState& st, Rng& rng, int cell_id) {
    auto [t, s, d0] = m_.missing_cells()[cell_id];
    int mterms = m_.n_delay_terms(t, s);
    long y = eff_y(st, t, s);
    long others = 0;
    int k = m_.data().observed_delays(t);
    for (int d = 1; d <= k; ++d) {
      if (d == d0) continue;
      int id = m_.missing_cell_id(t, s, d);
      if (id >= 0)
        others += st.latent_z[id];
      else if (m_.data().observed(t, s, d))
        others += m_.data().z(t, s, d);
    }
    long ub = std::max<long>(y - others, 0);

    std::vector<double> logw(ub + 1);
    long prefix = 0;
    for (int d = 1; d < d0; ++d) prefix += m_.effective_z(st, t, s, d);
    double wmax = kNegInf;
    long old_z = st.latent_z[cell_id];
    for (long zc = 0; zc <= ub; ++zc) {
      double lw = 0.0;
      long remaining = y - prefix;
      for (int d = d0; d <= mterms; ++d) {
        long zd = (d == d0) ? zc : m_.effective_z(st, t, s, d);
        if (zd > remaining) {
          lw = kNegInf;
          break;
        }
        lw += bb_term(zd, nu_[cell_index(t, s, d)], phi_[s * Dm_ + (d - 1)], remaining,
                      lgphi_[s * Dm_ + (d - 1)]);
        remaining -= zd;
      }
      logw[zc] = lw;
      wmax = std::max(wmax, lw);
    }
    double total = 0.0;
    for (auto& w : logw) {
      w = std::exp(w - wmax);
      total += w;
    }
    double u = rng.uniform() * total;
    long z_new = ub;
    double acc = 0.0;
    for (long zc = 0; zc <= ub; ++zc) {
      acc += logw[zc];
      if (u <= acc) {
        z_new = zc;
        break;
      }
    }
    if (z_new == old_z) return;
    st.latent_z[cell_id] = z_new;
    apply_row_refresh(st, t, s);
  }

  void update_latent_x(ParameterState& st, Rng& rng, int t, int s) {
    long y = eff_y(st, t, s);
    double pi = clamp_prob(logistic(st.params(m_.layout().block("ur_intercept").offset)));
    double loglam = fval_(t - 1, s - 1);
    double lam = std::exp(std::min(loglam, 50.0));
    // w(x) proportional to NB(x) * C(x,y) pi^y (1-pi)^(x-y), x >= y.
    NegBinParams rem{std::max(lam * (1.0 - pi), 1e-6), theta_[s]};
    long cap = y + negbin_quantile(rem, 1.0 - 1e-8) + 10;
    std::vector<double> logw;
    logw.push_back(0.0);
    double wmax = 0.0;
    const double lr_base = std::log(lam) - std::log(lam + theta_[s]) + std::log1p(-pi);
    long x = y;
    const long hard_cap = y + 2000000;
    while (true) {
      if (x >= cap && (logw.back() - wmax < std::log(1e-10) || x >= hard_cap)) break;
      double lr = lr_base + std::log(x + theta_[s]) -
                  std::log(static_cast<double>(x + 1 - y));
      logw.push_back(logw.back() + lr);
      wmax = std::max(wmax, logw.back());
      ++x;
    }
    double total = 0.0;
    for (auto& w : logw) {
      w = std::exp(w - wmax);
      total += w;
    }
    double u = rng.uniform() * total, acc = 0.0;
    long x_new = y + static_cast<long>(logw.size()) - 1;
    for (std::size_t i = 0; i < logw.size(); ++i) {
      acc += logw[i];
      if (u <= acc) {
        x_new = y + static_cast<long>(i);
        break;
      }
    }
    long x_old = st.latent_x[(t - 1) * S_ + (s - 1)];
    if (x_new == x_old) return;
    st.latent_x[(t - 1) * S_ + (s - 1)] = x_new;
    double ur_logit = st.params(m_.layout().block("ur_intercept").offset);
    double nb_new = nb_at(st, t, s, fval_(t - 1, s - 1));
    double ur_new = ur_at(st, t, s, ur_logit);
    loglik_ += nb_new - nbterm_(t - 1, s - 1) + ur_new - urterm_(t - 1, s - 1);
    nbterm_(t - 1, s - 1) = nb_new;
    urterm_(t - 1, s - 1) = ur_new;
  }

  // Recompute the NB term and all delay cells of one row after a latent
  // value changed.
  void apply_row_refresh(ParameterState& st, int t, int s) {
    double nb_new = nb_at(st, t, s, fval_(t - 1, s - 1));
    loglik_ += nb_new - nbterm_(t - 1, s - 1);
    nbterm_(t - 1, s - 1) = nb_new;
    if (ur_) {
      double ur_new =
          ur_at(st, t, s, st.params(m_.layout().block("ur_intercept").offset));
      loglik_ += ur_new - urterm_(t - 1, s - 1);
      urterm_(t - 1, s - 1) = ur_new;
    }
    int mterms = m_.n_delay_terms(t, s);
    if (mterms > 0) {
      ensure_scratch();
      row_cells(st, t, s, goff_(t - 1, s - 1), psi_nat_[s], 1, &scratch_nu_[0],
                &scratch_cell_[0]);
      for (int d = 1; d <= mterms; ++d) {
        loglik_ += scratch_cell_[d - 1] - cell_[cell_index(t, s, d)];
        nu_[cell_index(t, s, d)] = scratch_nu_[d - 1];
        cell_[cell_index(t, s, d)] = scratch_cell_[d - 1];
      }
    }
  }

  void ensure_scratch() {
    std::size_t need = static_cast<std::size_t>(T_) * std::max(Dm_, 1);
    if (scratch_nu_.size() < need) {
      scratch_nu_.resize(need);
      scratch_cell_.resize(need);
    }
  }

  const GdmModel& m_;
  McmcConfig cfg_;
  int T_ = 0, S_ = 0, D_ = 0, Dm_ = 0;
  bool survivor_ = true, ur_ = false;

  std::vector<Eigen::MatrixXd> fterm_val_, gterm_val_;
  Eigen::MatrixXd fval_, goff_, nbterm_, urterm_;
  std::vector<double> nu_, cell_;
  std::vector<Eigen::VectorXd> psi_nat_;
  std::vector<double> theta_, lgtheta_, logtheta_, phi_, lgphi_;
  double loglik_ = 0.0;

  std::vector<MvBlock> mv_blocks_;
  std::vector<OvBlock> ov_blocks_;
  std::vector<ScalarKernel> scalar_kernels_;

  Eigen::VectorXd scratch_col_;
  Eigen::MatrixXd scratch_mat_;
  std::vector<double> scratch_nu_, scratch_cell_;
};

// GdmModel adapter for the generic chain runner.
class GdmSamplable : public SamplableModel {
 public:
  GdmSamplable(const ModelSpec& spec, const CensoredTriangle& data) : model_(spec, data) {}

  int T() const override { return model_.T(); }
  int S() const override { return model_.S(); }
  const ParamLayout& layout() const override { return model_.layout(); }
  std::vector<std::string> param_names() const override { return model_.param_names(); }
  ParameterState init_state(Rng& rng, double jitter) const override {
    return model_.init_state(rng, jitter);
  }
  double log_posterior(const ParameterState& st) const override {
    return model_.log_posterior(st);
  }
  std::unique_ptr<Sweeper> make_sweeper(const McmcConfig& cfg) const override {
    return std::make_unique<GdmSweeper>(model_, cfg);
  }
  std::vector<std::pair<int, int>> latent_rows() const override {
    return model_.latent_rows();
  }

 private:
  GdmModel model_;
};

}  // namespace

// ---- chain orchestration ----------------------------------------------------------

PosteriorSamples run_sampler(const SamplableModel& model, const McmcConfig& cfg,
                             const std::vector<ParameterState>* warm_start) {
  cfg.validate();
  const long n_keep = cfg.n_retained();
  const int P = model.layout().total;
  auto latent_rows = model.latent_rows();

  PosteriorSamples out;
  out.T = model.T();
  out.S = model.S();
  out.master_seed = cfg.master_seed;
  out.n_iterations = cfg.n_iterations;
  out.burn_in = cfg.burn_in;
  out.thin = cfg.thin;
  out.param_names = model.param_names();
  out.latent_rows = latent_rows;
  out.chains.assign(cfg.n_chains, Eigen::MatrixXd(n_keep, P));
  out.lambda.assign(cfg.n_chains, Eigen::MatrixXd(n_keep, model.T() * model.S()));
  out.latent_y.assign(cfg.n_chains,
                      Eigen::MatrixXd(n_keep, static_cast<long>(latent_rows.size())));
  out.diagnostics.assign(cfg.n_chains, {});

  std::mutex progress_mutex;
  auto emit = [&](const std::string& line) {
    if (!cfg.progress) return;
    std::lock_guard<std::mutex> lock(progress_mutex);
    cfg.progress(line);
  };

  auto run_one = [&](int c) {
    Rng rng(cfg.master_seed + static_cast<std::uint64_t>(c));
    ParameterState st;
    bool ok = false;
    if (warm_start && c < static_cast<int>(warm_start->size())) {
      const ParameterState& w = (*warm_start)[c];
      if (w.params.size() == P) {
        st = model.init_state(rng, cfg.init_jitter);  // latents sized for this data
        st.params = w.params;
        ok = std::isfinite(model.log_posterior(st));
      }
    }
    for (int attempt = 0; !ok && attempt < 100; ++attempt) {
      st = model.init_state(rng, cfg.init_jitter);
      ok = std::isfinite(model.log_posterior(st));
    }
    if (!ok) {
      std::ostringstream oss;
      oss << "chain " << c << ": non-finite posterior after 100 initialization attempts;"
          << " first params:";
      for (int i = 0; i < std::min(P, 8); ++i) oss << " " << st.params(i);
      throw std::runtime_error(oss.str());
    }

    auto sweeper = model.make_sweeper(cfg);
    sweeper->init(st, rng);
    long kept = 0;
    for (long iter = 1; iter <= cfg.n_iterations; ++iter) {
      bool adapting = iter <= cfg.burn_in;
      sweeper->sweep(st, rng, iter, adapting);
      if (iter > cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0 && kept < n_keep) {
        out.chains[c].row(kept) = st.params.transpose();
        out.lambda[c].row(kept) = sweeper->log_lambda().array().exp().transpose();
        for (std::size_t i = 0; i < latent_rows.size(); ++i)
          out.latent_y[c](kept, static_cast<long>(i)) =
              static_cast<double>(st.latent_y[i]);
        ++kept;
      }
      if (cfg.progress && iter % cfg.progress_every == 0) {
        std::ostringstream oss;
        oss << "{\"event\":\"progress\",\"chain\":" << c << ",\"iteration\":" << iter
            << ",\"retained\":" << kept << "}";
        emit(oss.str());
      }
    }
    out.diagnostics[c].seed = cfg.master_seed + static_cast<std::uint64_t>(c);
    out.diagnostics[c].blocks = sweeper->block_stats();
    if (cfg.progress) {
      for (const auto& b : out.diagnostics[c].blocks) {
        std::ostringstream oss;
        oss << "{\"event\":\"block\",\"chain\":" << c << ",\"name\":\"" << b.name
            << "\",\"proposals\":" << b.proposals << ",\"accepts\":" << b.accepts
            << ",\"acceptance_rate\":" << b.acceptance_rate()
            << ",\"final_step\":" << b.final_step << "}";
        emit(oss.str());
      }
    }
  };

  if (cfg.n_threads > 1 && cfg.n_chains > 1) {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    int width = std::min(cfg.n_threads, cfg.n_chains);
    for (int w = 0; w < width; ++w)
      pool.emplace_back([&] {
        for (int c = next.fetch_add(1); c < cfg.n_chains; c = next.fetch_add(1))
          run_one(c);
      });
    for (auto& th : pool) th.join();
  } else {
    for (int c = 0; c < cfg.n_chains; ++c) run_one(c);
  }
  return out;
}

PosteriorSamples run_chains(const ModelSpec& spec, const CensoredTriangle& data,
                            const McmcConfig& cfg,
                            const std::vector<ParameterState>* warm_start) {
  GdmSamplable samplable(spec, data);
  PosteriorSamples out = run_sampler(samplable, cfg, warm_start);
  out.family = "gdm";
  out.spec_json = spec.to_json();
  out.d_max = data.d_max();
  out.t0 = data.t0();
  out.time_origin = data.triangle().time_origin();
  out.region_labels = data.triangle().regions();
  return out;
}

// ---- diagnostics -------------------------------------------------------------------

double psrf(const std::vector<Eigen::VectorXd>& chains, bool* degenerate) {
  if (degenerate) *degenerate = false;
  if (chains.size() < 2) throw std::invalid_argument("psrf: need at least 2 chains");
  for (const auto& c : chains)
    if (c.size() < 10) throw std::invalid_argument("psrf: need >= 10 draws per chain");

  std::vector<std::pair<double, double>> half_stats;  // (mean, variance) per half
  long n2 = chains[0].size() / 2;
  for (const auto& c : chains) {
    long h = c.size() / 2;
    n2 = std::min(n2, h);
  }
  for (const auto& c : chains) {
    for (int half = 0; half < 2; ++half) {
      Eigen::VectorXd seg = half == 0 ? c.head(n2) : c.tail(n2);
      double mean = seg.mean();
      double var = (seg.array() - mean).square().sum() / (n2 - 1);
      half_stats.emplace_back(mean, var);
    }
  }
  double W = 0.0;
  for (auto& [mu, v] : half_stats) W += v;
  W /= half_stats.size();

  double grand = 0.0;
  for (auto& [mu, v] : half_stats) grand += mu;
  grand /= half_stats.size();
  double B_over_n = 0.0;
  for (auto& [mu, v] : half_stats) B_over_n += (mu - grand) * (mu - grand);
  B_over_n /= (half_stats.size() - 1);

  if (W <= 0.0) {
    if (degenerate) *degenerate = true;
    return B_over_n <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  }
  double vhat = (n2 - 1.0) / n2 * W + B_over_n;
  return std::sqrt(vhat / W);
}

ConvergenceReport convergence_report(const PosteriorSamples& samples) {
  ConvergenceReport rep;
  const int n_chains = samples.n_chains();
  if (n_chains < 2 || samples.n_retained() < 10) {
    rep.pass = false;
    rep.theta_ok = false;
    rep.frac_lambda_ok = 0.0;
    return rep;
  }

  long ok = 0, total = 0;
  for (int t = 1; t <= samples.T; ++t)
    for (int s = 1; s <= samples.S; ++s) {
      std::vector<Eigen::VectorXd> per_chain;
      for (int c = 0; c < n_chains; ++c)
        per_chain.push_back(samples.lambda[c].col((t - 1) * samples.S + (s - 1)));
      ConvergenceEntry e;
      e.name = "lambda[" + std::to_string(t) + "," + std::to_string(s) + "]";
      e.value = psrf(per_chain, &e.degenerate);
      if (e.degenerate) e.value = 1.0;
      rep.lambdas.push_back(e);
      ++total;
      if (e.value < 1.05) ++ok;
    }
  rep.frac_lambda_ok = total > 0 ? static_cast<double>(ok) / total : 1.0;

  for (int s = 1; s <= samples.S; ++s) {
    int idx = samples.param_index("log_theta[" + std::to_string(s) + "]");
    if (idx < 0) continue;  // theta fixed by the spec
    std::vector<Eigen::VectorXd> per_chain;
    for (int c = 0; c < n_chains; ++c)
      per_chain.push_back(samples.chains[c].col(idx).array().exp().matrix());
    ConvergenceEntry e;
    e.name = "theta[" + std::to_string(s) + "]";
    e.value = psrf(per_chain, &e.degenerate);
    if (e.degenerate) e.value = 1.0;
    rep.thetas.push_back(e);
    if (e.value >= 1.05) rep.theta_ok = false;
  }
  rep.pass = rep.theta_ok && rep.frac_lambda_ok >= 0.93;
  return rep;
}

void ConvergenceReport::write_csv(std::ostream& out) const {
  out << "parameter,psrf,degenerate\n";
  for (const auto& e : thetas)
    out << e.name << "," << e.value << "," << (e.degenerate ? 1 : 0) << "\n";
  for (const auto& e : lambdas)
    out << e.name << "," << e.value << "," << (e.degenerate ? 1 : 0) << "\n";
  out << "frac_lambda_below_1.05," << frac_lambda_ok << ",\n";
  out << "pass," << (pass ? 1 : 0) << ",\n";
}

double mcse_batch_means(const Eigen::VectorXd& draws) {
  long n = draws.size();
  if (n < 4) throw std::invalid_argument("mcse_batch_means: too few draws");
  long nb = static_cast<long>(std::floor(std::sqrt(static_cast<double>(n))));
  long bs = n / nb;
  Eigen::VectorXd bm(nb);
  for (long b = 0; b < nb; ++b) bm(b) = draws.segment(b * bs, bs).mean();
  double mean = bm.mean();
  double var = (bm.array() - mean).square().sum() / (nb - 1);
  return std::sqrt(var / nb);
}

}  // namespace nowcast
