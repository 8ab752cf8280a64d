#include "nowcast/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nowcast/baselines.hpp"

namespace nowcast {

// ---- simulator ------------------------------------------------------------------

void SimulationScenario::validate() const {
  if (T < 1 || S < 1 || d_max < 1)
    throw std::invalid_argument("SimulationScenario: T, S, d_max must be positive");
  if (theta <= 0 || phi <= 0)
    throw std::invalid_argument("SimulationScenario: theta and phi must be positive");
  if (!region_offsets.empty() && static_cast<int>(region_offsets.size()) != S)
    throw std::invalid_argument("SimulationScenario: region_offsets must have length S");
  if (!psi_true.empty()) {
    if (static_cast<int>(psi_true.size()) != d_max - 1)
      throw std::invalid_argument("SimulationScenario: psi_true must have length d_max-1");
    for (std::size_t d = 1; d < psi_true.size(); ++d)
      if (!(psi_true[d] > psi_true[d - 1]))
        throw std::invalid_argument("SimulationScenario: psi_true must be increasing");
  }
  if (trend_width_frac <= 0)
    throw std::invalid_argument("SimulationScenario: trend_width_frac must be positive");
}

std::vector<double> SimulationScenario::effective_psi() const {
  if (!psi_true.empty()) return psi_true;
  std::vector<double> out;
  for (int d = 1; d < d_max; ++d) out.push_back(probit(1.0 - std::pow(0.7, d)));
  return out;
}

std::pair<ReportingTriangle, SimulationTruth> simulate_dataset(
    const SimulationScenario& scn) {
  scn.validate();
  std::vector<std::string> regions;
  for (int s = 1; s <= scn.S; ++s) regions.push_back("R" + std::to_string(s));
  ReportingTriangle tri(scn.T, scn.S, scn.d_max, scn.origin, regions);

  SimulationTruth truth;
  truth.theta = scn.theta;
  truth.phi = scn.phi;
  truth.log_lambda.resize(scn.T, scn.S);
  truth.survivor.assign(scn.S, Eigen::MatrixXd::Zero(scn.T, std::max(scn.d_max - 1, 0)));

  const std::vector<double> psi = scn.effective_psi();
  const double peak = scn.trend_peak_frac * scn.T;
  const double width = scn.trend_width_frac * scn.T;
  Rng rng(scn.seed);

  for (int t = 1; t <= scn.T; ++t) {
    int dow = day_of_week(scn.origin + (t - 1));
    double weekly = scn.weekly_amplitude * std::cos(2.0 * M_PI * dow / 7.0);
    double drift = 0.0;
    if (scn.drift_delta != 0.0) {
      int s0 = scn.drift_start > 0 ? scn.drift_start : 1;
      int s1 = scn.drift_end > 0 ? scn.drift_end : scn.T;
      double frac = s1 > s0 ? (t - s0) / static_cast<double>(s1 - s0) : (t >= s0 ? 1.0 : 0.0);
      drift = scn.drift_delta * std::clamp(frac, 0.0, 1.0);
    }
    double bump = scn.trend_amplitude *
                  std::exp(-0.5 * std::pow((t - peak) / width, 2.0));
    double wiggle = scn.common_wiggle_amplitude *
                    std::sin(2.0 * M_PI * scn.common_wiggle_periods * t / scn.T);

    for (int s = 1; s <= scn.S; ++s) {
      double offset = scn.region_offsets.empty() ? 0.0 : scn.region_offsets[s - 1];
      double loglam = scn.base_log_mean + offset + bump + wiggle;
      truth.log_lambda(t - 1, s - 1) = loglam;
      long y = negbin_sample(NegBinParams{std::exp(loglam), scn.theta}, rng);

      if (scn.d_max == 1) {
        tri.set_z(t, s, 1, y);
        continue;
      }
      GDMParams gdm;
      gdm.y = y;
      for (int d = 1; d < scn.d_max; ++d) {
        double S_d = std::min(std::max(norm_cdf(psi[d - 1] + drift + weekly), 1e-12),
                              1.0 - 1e-12);
        truth.survivor[s - 1](t - 1, d - 1) = S_d;
      }
      Eigen::VectorXd Scurve = truth.survivor[s - 1].row(t - 1);
      Eigen::VectorXd nu = survivor_to_relative_means(Scurve);
      for (int d = 0; d < scn.d_max - 1; ++d) {
        gdm.nu.push_back(std::min(std::max(nu(d), 1e-12), 1.0 - 1e-12));
        gdm.phi.push_back(scn.phi);
      }
      std::vector<long> z = gdm_sample(gdm, rng);
      for (int d = 1; d <= scn.d_max; ++d) tri.set_z(t, s, d, z[d - 1]);
    }
  }
  return {std::move(tri), std::move(truth)};
}

// ---- metrics --------------------------------------------------------------------

const MetricsRow* MetricsTable::find(const std::string& model, const std::string& region,
                                     int lead) const {
  for (const auto& r : rows)
    if (r.model == model && r.region == region && r.lead == lead) return &r;
  return nullptr;
}

MetricsTable compute_metrics(const std::vector<PredictionRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("compute_metrics: no aligned predictions");
  struct Acc {
    double se = 0.0, bias = 0.0, piw = 0.0, cover = 0.0;
    long n = 0;
  };
  std::map<std::tuple<std::string, std::string, int>, Acc> groups;
  for (const auto& r : records) {
    auto add = [&](const std::string& region) {
      Acc& a = groups[{r.model, region, r.lead}];
      double err = r.median - static_cast<double>(r.truth);
      a.se += err * err;
      a.bias += err;
      a.piw += r.q975 - r.q025;
      if (static_cast<double>(r.truth) >= r.q025 && static_cast<double>(r.truth) <= r.q975)
        a.cover += 1.0;
      ++a.n;
    };
    add(r.region);
    add("overall");
  }
  MetricsTable table;
  for (const auto& [key, acc] : groups) {
    MetricsRow row;
    row.model = std::get<0>(key);
    row.region = std::get<1>(key);
    row.lead = std::get<2>(key);
    row.n = acc.n;
    row.rmse = std::sqrt(acc.se / acc.n);
    row.bias = acc.bias / acc.n;
    row.mean_piw = acc.piw / acc.n;
    row.coverage95 = acc.cover / acc.n;
    table.rows.push_back(std::move(row));
  }
  return table;
}

void MetricsTable::write_csv(std::ostream& out) const {
  out << "model,region,lead,rmse,bias,mean_piw,coverage95,n\n";
  for (const auto& r : rows)
    out << r.model << "," << r.region << "," << r.lead << "," << r.rmse << "," << r.bias
        << "," << r.mean_piw << "," << r.coverage95 << "," << r.n << "\n";
}

void MetricsTable::write_table(std::ostream& out, int lead) const {
  std::vector<std::string> models, regions;
  for (const auto& r : rows) {
    if (r.lead != lead) continue;
    if (std::find(models.begin(), models.end(), r.model) == models.end())
      models.push_back(r.model);
    if (r.region != "overall" &&
        std::find(regions.begin(), regions.end(), r.region) == regions.end())
      regions.push_back(r.region);
  }
  std::sort(regions.begin(), regions.end());

  struct Block {
    const char* title;
    double MetricsRow::*field;
    int precision;
  };
  const Block blocks[] = {{"RMSE", &MetricsRow::rmse, 0},
                          {"Bias", &MetricsRow::bias, 0},
                          {"Mean 95% PI Width", &MetricsRow::mean_piw, 0},
                          {"95% PI Coverage", &MetricsRow::coverage95, 2}};
  for (const auto& block : blocks) {
    out << block.title << " (lead " << lead << ")\n";
    out << std::left << std::setw(18) << "Region";
    for (const auto& m : models) out << std::setw(12) << m;
    out << "\n";
    auto emit = [&](const std::string& region, const char* label) {
      out << std::left << std::setw(18) << label;
      for (const auto& m : models) {
        const MetricsRow* r = find(m, region, lead);
        std::ostringstream v;
        if (r) v << std::fixed << std::setprecision(block.precision) << r->*(block.field);
        out << std::setw(12) << (r ? v.str() : "-");
      }
      out << "\n";
    };
    for (const auto& region : regions) emit(region, region.c_str());
    emit("overall", "Overall");
    out << "\n";
  }
}

// ---- rolling experiment -----------------------------------------------------------

void RollingConfig::validate(int T) const {
  if (t0_start < 1) throw std::invalid_argument("RollingConfig: t0_start must be >= 1");
  if (n_days < 1) throw std::invalid_argument("RollingConfig: n_days must be >= 1");
  if (t0_start + n_days - 1 > T)
    throw std::invalid_argument("RollingConfig: t0_start + n_days - 1 must be <= T");
  if (horizon < 0) throw std::invalid_argument("RollingConfig: horizon must be >= 0");
  if (models.empty()) throw std::invalid_argument("RollingConfig: no models selected");
  for (const auto& m : models)
    if (m != "gdm") baseline_family_from_name(m);  // validates the name
  mcmc.validate();
}

RollingResult run_rolling(const ReportingTriangle& data, const RollingConfig& cfg) {
  return run_rolling(data, cfg, ModelSpec{});
}

RollingResult run_rolling(const ReportingTriangle& data, const RollingConfig& cfg,
                          const ModelSpec& spec_in) {
  ModelSpec spec = spec_in;
  spec.d_max = data.d_max();
  spec.d_prime = std::min(spec.d_prime, spec.d_max);
  spec.validate();
  cfg.validate(data.T());

  RollingResult result;
  std::map<std::string, std::vector<ParameterState>> warm;

  for (int i = 0; i < cfg.n_days; ++i) {
    int t0 = cfg.t0_start + i;
    ReportingTriangle trunc = data.truncated(t0);
    CensoredTriangle ct = censor_at(trunc, t0);
    AccessAuditor audit;
    ct.attach_auditor(&audit);

    for (const auto& model_name : cfg.models) {
      PosteriorSamples samples;
      NowcastResult pred;
      try {
        if (model_name == "gdm") {
          auto it = warm.find(model_name);
          const std::vector<ParameterState>* ws =
              (cfg.warm_start && it != warm.end()) ? &it->second : nullptr;
          samples = run_chains(spec, ct, cfg.mcmc, ws);
        } else {
          BaselineFamily family = baseline_family_from_name(model_name);
          switch (family) {
            case BaselineFamily::marginal_nb:
              samples = fit_marginal_nb(ct, spec, cfg.mcmc);
              break;
            case BaselineFamily::rw_direct:
              samples = fit_rw_direct(ct, cfg.mcmc);
              break;
            default:
              samples = fit_window_nb(ct, cfg.mcmc, cfg.window);
              break;
          }
        }
        pred = predict_any(samples, ct, cfg.horizon);
      } catch (const std::exception&) {
        ++result.fit_failures;
        continue;
      }

      if (cfg.warm_start && model_name == "gdm") {
        std::vector<ParameterState> states;
        for (int c = 0; c < samples.n_chains(); ++c) {
          ParameterState st;
          st.params = samples.chains[c].row(samples.n_retained() - 1).transpose();
          states.push_back(std::move(st));
        }
        warm[model_name] = std::move(states);
      }

      for (const auto& row : pred.rows) {
        int lead = row.t - t0;
        if (lead < -(data.d_max() - 1)) continue;
        if (row.t > data.T()) continue;  // no final truth available yet
        PredictionRecord rec;
        rec.model = model_name;
        rec.t0 = t0;
        rec.t = row.t;
        rec.s = row.s;
        rec.lead = lead;
        rec.region = row.region;
        rec.date = row.date;
        rec.kind = row.kind;
        rec.median = row.median();
        rec.q025 = row.quantiles.front();
        rec.q975 = row.quantiles.back();
        rec.truth = data.y(row.t, row.s);
        rec.partial = row.observed_partial;
        result.archive.push_back(std::move(rec));
      }
    }
    result.auditor_violations += audit.violations;
  }

  result.metrics = compute_metrics(result.archive);
  return result;
}

}  // namespace nowcast
