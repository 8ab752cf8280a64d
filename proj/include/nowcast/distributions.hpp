#pragma once

#include <vector>

#include "nowcast/rng.hpp"

namespace nowcast {

// Mean-dispersion Negative-Binomial: success count theta, success
// probability theta/(theta+lambda), so E = lambda and
// Var = lambda + lambda^2/theta. theta -> infinity recovers Poisson.
struct NegBinParams {
  double lambda = 1.0;
  double theta = 1.0;
};

// Beta-Binomial with mean-precision shapes a = nu*phi, b = (1-nu)*phi.
// Larger phi means less overdispersion relative to Binomial(n, nu).
struct BetaBinParams {
  double nu = 0.5;
  double phi = 1.0;
  long n = 0;
};

// Generalized-Dirichlet-Multinomial over D = nu.size()+1 categories,
// factorized as sequential Beta-Binomial conditionals; the last category
// is the deterministic remainder.
struct GDMParams {
  std::vector<double> nu;   // length D-1, each in (0,1)
  std::vector<double> phi;  // length D-1, positive
  long y = 0;
};

double negbin_logpmf(long y, const NegBinParams& p);
long negbin_sample(const NegBinParams& p, Rng& rng);
// Smallest y with CDF >= q; q must lie in (0,1).
long negbin_quantile(const NegBinParams& p, double q);

double betabin_logpmf(long z, const BetaBinParams& p);
long betabin_sample(const BetaBinParams& p, Rng& rng);

double gdm_logpmf(const std::vector<long>& z, const GDMParams& p);
std::vector<long> gdm_sample(const GDMParams& p, Rng& rng);

double binomial_logpmf(long k, long n, double prob);

// ---- scalar helpers -------------------------------------------------------

// lgamma(k) for integer k >= 1, table-backed.
double lgamma_int(long k);
double log_choose(long n, long k);

double norm_cdf(double x);
double norm_logpdf(double x, double mean, double sd);
// Inverse standard normal CDF.
double probit(double p);
double logistic(double x);
double logit(double p);

}  // namespace nowcast
