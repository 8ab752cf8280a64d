#include "nowcast/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include "nowcast/baselines.hpp"

namespace nowcast {

double quantile_type7(Eigen::VectorXd draws, double level) {
  if (draws.size() == 0) throw std::invalid_argument("quantile_type7: no draws");
  if (!(level > 0.0) || !(level < 1.0))
    throw std::invalid_argument("quantile_type7: level must be in (0,1)");
  std::sort(draws.data(), draws.data() + draws.size());
  double h = (draws.size() - 1) * level;
  long lo = static_cast<long>(std::floor(h));
  if (lo + 1 >= draws.size()) return draws(draws.size() - 1);
  return draws(lo) + (h - lo) * (draws(lo + 1) - draws(lo));
}

std::array<double, 9> quantile_set(const Eigen::VectorXd& draws) {
  Eigen::VectorXd sorted = draws;
  std::sort(sorted.data(), sorted.data() + sorted.size());
  std::array<double, 9> out{};
  for (std::size_t i = 0; i < kQuantileLevels.size(); ++i) {
    double h = (sorted.size() - 1) * kQuantileLevels[i];
    long lo = static_cast<long>(std::floor(h));
    out[i] = (lo + 1 >= sorted.size())
                 ? sorted(sorted.size() - 1)
                 : sorted(lo) + (h - lo) * (sorted(lo + 1) - sorted(lo));
  }
  return out;
}

const NowcastRow* NowcastResult::find(int t, int s) const {
  for (const auto& r : rows)
    if (r.t == t && r.s == s) return &r;
  return nullptr;
}

void NowcastResult::write_csv(std::ostream& out) const {
  out << "region,date,kind,q025,q100,q175,q250,q500,q750,q825,q900,q975,median,"
         "observed_partial_sum\n";
  for (const auto& r : rows) {
    out << r.region << "," << format_date(r.date) << "," << row_kind_name(r.kind);
    for (double q : r.quantiles) out << "," << q;
    out << "," << r.median() << "," << r.observed_partial << "\n";
  }
}

namespace {

RowKind kind_of(int t, int t0) {
  if (t < t0) return RowKind::backfill;
  if (t == t0) return RowKind::nowcast;
  return RowKind::forecast;
}

}  // namespace

NowcastResult predict_totals(const PosteriorSamples& samples, const CensoredTriangle& data,
                             int horizon) {
  if (samples.family != "gdm")
    throw std::invalid_argument("predict_totals expects gdm samples; use predict_any");
  if (horizon < 0) throw std::invalid_argument("predict_totals: horizon must be >= 0");
  if (data.t0() != samples.t0 || data.T() != samples.T || data.S() != samples.S)
    throw std::invalid_argument("predict_totals: data does not match the fitted samples");

  ModelSpec spec = ModelSpec::from_json(samples.spec_json);
  GdmModel model(spec, data);
  const int n_chains = samples.n_chains();
  const long n_keep = samples.n_retained();
  const long n_draws = n_chains * n_keep;
  const int t0 = samples.t0, S = samples.S;
  const bool ur = spec.underreporting.enabled;

  NowcastResult result;
  if (horizon > 0 && !spec.f_temporal.enabled)
    result.warnings.push_back(
        "forecasting without a temporal mean-model term: the trend is constant");

  // Map latent rows to their column in the stored latent draws.
  std::map<std::pair<int, int>, int> latent_col;
  for (std::size_t i = 0; i < samples.latent_rows.size(); ++i)
    latent_col[samples.latent_rows[i]] = static_cast<int>(i);

  for (int t = 1; t <= t0; ++t) {
    for (int s = 1; s <= S; ++s) {
      NowcastRow row;
      row.t = t;
      row.s = s;
      row.region = data.triangle().regions()[s - 1];
      row.date = data.triangle().date_of(t);
      row.kind = kind_of(t, t0);
      row.observed_partial = data.observed_partial_sum(t, s);
      auto it = latent_col.find({t, s});
      if (it == latent_col.end()) {
        row.draws = Eigen::VectorXd::Constant(n_draws,
                                              static_cast<double>(data.triangle().y(t, s)));
      } else {
        row.draws.resize(n_draws);
        for (int c = 0; c < n_chains; ++c)
          row.draws.segment(c * n_keep, n_keep) = samples.latent_y[c].col(it->second);
      }
      row.quantiles = quantile_set(row.draws);
      result.rows.push_back(std::move(row));
    }
  }

  if (horizon > 0) {
    Rng rng(samples.master_seed ^ 0x9e3779b97f4a7c15ULL);
    const int iota_off = model.layout().block("iota").offset;
    int theta_off = spec.fixed_theta ? -1 : model.layout().block("log_theta").offset;
    int ur_off = ur ? model.layout().block("ur_intercept").offset : -1;

    for (int h = 1; h <= horizon; ++h) {
      int t = t0 + h;
      Date date = data.triangle().time_origin() + (t - 1);
      // One design row per mean-model term at the forecast coordinate.
      std::vector<Eigen::RowVectorXd> xrows;
      for (const auto& term : model.f_terms()) {
        Eigen::VectorXd pt(1);
        if (term.basis.kind == BasisKind::temporal)
          pt(0) = t;
        else if (term.basis.kind == BasisKind::weekly_cyclic)
          pt(0) = day_of_week(date);
        else
          pt(0) = std::fmod(t - 1.0, term.basis.period);
        xrows.push_back(evaluate_basis(term.basis, pt).row(0));
      }

      for (int s = 1; s <= S; ++s) {
        NowcastRow row;
        row.t = t;
        row.s = s;
        row.region = data.triangle().regions()[s - 1];
        row.date = date;
        row.kind = RowKind::forecast;
        row.observed_partial = 0;
        row.draws.resize(n_draws);
        long i = 0;
        for (int c = 0; c < n_chains; ++c) {
          for (long r = 0; r < n_keep; ++r, ++i) {
            double f = samples.chains[c](r, iota_off + s - 1);
            for (std::size_t ti = 0; ti < model.f_terms().size(); ++ti) {
              const auto& term = model.f_terms()[ti];
              for (int kk = 0; kk < term.K; ++kk)
                f += xrows[ti](kk) *
                     samples.chains[c](r, term.off_region + (s - 1) * term.K + kk);
            }
            double lambda = std::exp(std::min(f, 50.0));
            double theta = spec.fixed_theta
                               ? *spec.fixed_theta
                               : std::exp(samples.chains[c](r, theta_off + s - 1));
            long y = negbin_sample(NegBinParams{lambda, theta}, rng);
            if (ur) {
              double pi = logistic(samples.chains[c](r, ur_off));
              y = rng.binomial(y, std::min(std::max(pi, 1e-12), 1.0 - 1e-12));
            }
            row.draws(i) = static_cast<double>(y);
          }
        }
        row.quantiles = quantile_set(row.draws);
        result.rows.push_back(std::move(row));
      }
    }
  }
  return result;
}

NowcastResult predict_any(const PosteriorSamples& samples, const CensoredTriangle& data,
                          int horizon) {
  if (samples.family == "gdm") return predict_totals(samples, data, horizon);
  return predict_baseline(samples, data, horizon);
}

NowcastResult aggregate(const NowcastResult& result, const std::vector<int>& regions,
                        const std::string& label) {
  if (regions.empty()) throw std::invalid_argument("aggregate: empty region subset");
  std::map<int, std::vector<const NowcastRow*>> by_t;
  for (const auto& row : result.rows)
    if (std::find(regions.begin(), regions.end(), row.s) != regions.end())
      by_t[row.t].push_back(&row);

  NowcastResult out;
  out.warnings = result.warnings;
  for (auto& [t, rows] : by_t) {
    if (rows.size() != regions.size())
      throw std::invalid_argument("aggregate: row set does not cover the region subset");
    NowcastRow agg;
    agg.t = t;
    agg.s = 0;
    agg.region = label;
    agg.date = rows.front()->date;
    agg.kind = rows.front()->kind;
    agg.draws = Eigen::VectorXd::Zero(rows.front()->draws.size());
    for (const auto* r : rows) {
      if (r->draws.size() != agg.draws.size())
        throw std::invalid_argument("aggregate: misaligned draw counts");
      agg.draws += r->draws;
      agg.observed_partial += r->observed_partial;
    }
    agg.quantiles = quantile_set(agg.draws);
    out.rows.push_back(std::move(agg));
  }
  return out;
}

PpcResult posterior_predictive_check(const PosteriorSamples& samples,
                                     const CensoredTriangle& data, PpcStatistic stat) {
  const int S = samples.S;
  // Days where every region is fully observed.
  std::vector<int> days;
  for (int t = 1; t <= samples.t0; ++t) {
    if (!data.fully_observed(t)) continue;
    bool any_missing = false;
    for (int s = 1; s <= S; ++s)
      for (int d = 1; d <= data.d_max(); ++d)
        if (data.triangle().missing(t, s, d)) any_missing = true;
    if (!any_missing) days.push_back(t);
  }
  if (days.empty())
    throw std::invalid_argument("posterior_predictive_check: no fully observed rows");
  if (stat == PpcStatistic::sample_variance && days.size() < 2)
    throw std::invalid_argument(
        "posterior_predictive_check: sample variance needs at least 2 days");

  auto statistic = [&](const std::vector<double>& sums) {
    double mean = 0.0;
    for (double v : sums) mean += v;
    mean /= sums.size();
    if (stat == PpcStatistic::sample_mean) return mean;
    double var = 0.0;
    for (double v : sums) var += (v - mean) * (v - mean);
    return var / (sums.size() - 1);
  };

  std::vector<double> observed_sums;
  for (int t : days) {
    double total = 0.0;
    for (int s = 1; s <= S; ++s) total += static_cast<double>(data.triangle().y(t, s));
    observed_sums.push_back(total);
  }

  bool ur = false;
  std::optional<double> fixed_theta;
  if (samples.family == "gdm") {
    ModelSpec spec = ModelSpec::from_json(samples.spec_json);
    ur = spec.underreporting.enabled;
    fixed_theta = spec.fixed_theta;
  }
  std::vector<int> theta_idx(S + 1, -1);
  for (int s = 1; s <= S; ++s)
    theta_idx[s] = samples.param_index("log_theta[" + std::to_string(s) + "]");
  int ur_idx = ur ? samples.param_index("ur_intercept") : -1;

  PpcResult out;
  out.n_rows = static_cast<int>(days.size());
  out.observed = statistic(observed_sums);
  Rng rng(samples.master_seed ^ 0xa24baed4963ee407ULL);

  const long n_keep = samples.n_retained();
  for (int c = 0; c < samples.n_chains(); ++c) {
    for (long r = 0; r < n_keep; ++r) {
      std::vector<double> sums;
      sums.reserve(days.size());
      for (int t : days) {
        double total = 0.0;
        for (int s = 1; s <= S; ++s) {
          double lambda = samples.lambda[c](r, (t - 1) * S + (s - 1));
          double theta = theta_idx[s] >= 0 ? std::exp(samples.chains[c](r, theta_idx[s]))
                                           : (fixed_theta ? *fixed_theta : 1e8);
          long y = negbin_sample(NegBinParams{std::max(lambda, 1e-8), theta}, rng);
          if (ur) {
            double pi = logistic(samples.chains[c](r, ur_idx));
            y = rng.binomial(y, std::min(std::max(pi, 1e-12), 1.0 - 1e-12));
          }
          total += static_cast<double>(y);
        }
        sums.push_back(total);
      }
      out.replicates.push_back(statistic(sums));
    }
  }

  double below = 0.0, above = 0.0;
  for (double rep : out.replicates) {
    if (rep <= out.observed) below += 1.0;
    if (rep >= out.observed) above += 1.0;
  }
  double n = static_cast<double>(out.replicates.size());
  out.tail_prob = std::min(below / n, above / n);
  return out;
}

}  // namespace nowcast
