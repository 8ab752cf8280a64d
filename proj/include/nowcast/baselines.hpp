#pragma once

#include <optional>
#include <string>

#include "nowcast/mcmc.hpp"
#include "nowcast/prediction.hpp"

namespace nowcast {

enum class BaselineFamily { marginal_nb, rw_direct, window_nb };

std::string baseline_family_name(BaselineFamily f);
BaselineFamily baseline_family_from_name(const std::string& name);

// The competing model families. All are fit as independent time-series
// models per region and predict the total as the sum of predicted cells.
struct BaselineSpec {
  BaselineFamily family = BaselineFamily::marginal_nb;
  std::optional<int> window;  // window_nb only; absent = all data
  // Shared smooth structure for the marginal NB approximation (survivor
  // link, D', spline sizes, priors). Other families use d_max and priors
  // only.
  ModelSpec structure;

  void validate(int data_d_max, int t0) const;
  std::string to_json() const;
  static BaselineSpec from_json(const std::string& text);
};

// NB approximation to the GDM's marginal model for the delayed counts:
// z_{t,s,d} ~ NB(mu_{t,s,d} * lambda_{t,s}, theta_s) with mu from the
// survivor-curve differences, plus an identical model for the remainder.
PosteriorSamples fit_marginal_nb(const CensoredTriangle& data, const ModelSpec& structure,
                                 const McmcConfig& cfg);

// Direct NB model per delay cell with RW1 temporal, delay and
// time-within-delay effects plus a cyclic weekly term.
PosteriorSamples fit_rw_direct(const CensoredTriangle& data, const McmcConfig& cfg);

// NB cell model with an RW1 epidemic curve and a time-constant simplex
// delay distribution, optionally fitted on a moving window.
PosteriorSamples fit_window_nb(const CensoredTriangle& data, const McmcConfig& cfg,
                               std::optional<int> window = std::nullopt);

PosteriorSamples fit_baseline(const CensoredTriangle& data, const BaselineSpec& spec,
                              const McmcConfig& cfg);

// Shared prediction interface: predicted y is the sum of observed cells
// and NB draws for unobserved ones.
NowcastResult predict_baseline(const PosteriorSamples& samples,
                               const CensoredTriangle& data, int horizon);

}  // namespace nowcast
