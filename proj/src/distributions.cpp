#include "nowcast/distributions.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nowcast {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_negbin(const NegBinParams& p) {
  if (!(p.lambda > 0.0) || !(p.theta > 0.0) || !std::isfinite(p.lambda) ||
      !std::isfinite(p.theta))
    throw std::invalid_argument("NegBin requires lambda > 0 and theta > 0");
}

void check_betabin(const BetaBinParams& p) {
  if (!(p.nu > 0.0) || !(p.nu < 1.0) || !(p.phi > 0.0))
    throw std::invalid_argument("BetaBin requires nu in (0,1) and phi > 0");
  if (p.n < 0) throw std::invalid_argument("BetaBin requires n >= 0");
}
}  // namespace

double lgamma_int(long k) {
  static constexpr long kTableSize = 65536;
  static const std::vector<double> table = [] {
    std::vector<double> t(kTableSize);
    t[0] = 0.0;  // unused
    for (long i = 1; i < kTableSize; ++i) t[i] = std::lgamma(static_cast<double>(i));
    return t;
  }();
  if (k >= 1 && k < kTableSize) return table[k];
  return std::lgamma(static_cast<double>(k));
}

double log_choose(long n, long k) {
  if (k < 0 || k > n) return kNegInf;
  return lgamma_int(n + 1) - lgamma_int(k + 1) - lgamma_int(n - k + 1);
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double norm_logpdf(double x, double mean, double sd) {
  double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
}

double probit(double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw std::invalid_argument("probit requires p in (0,1)");
  // Acklam's rational approximation, then one Newton step against erfc.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double e = norm_cdf(x) - p;
  x -= e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x;
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw std::invalid_argument("logit requires p in (0,1)");
  return std::log(p / (1.0 - p));
}

// ---- Negative-Binomial ------------------------------------------------------

double negbin_logpmf(long y, const NegBinParams& p) {
  check_negbin(p);
  if (y < 0) return kNegInf;
  double logp = p.theta * std::log(p.theta / (p.theta + p.lambda)) +
                y * std::log(p.lambda / (p.theta + p.lambda));
  if (y > 0) logp += std::lgamma(y + p.theta) - std::lgamma(p.theta) - lgamma_int(y + 1);
  return logp;
}

long negbin_sample(const NegBinParams& p, Rng& rng) {
  check_negbin(p);
  // Gamma-Poisson mixture.
  double g = rng.gamma(p.theta, p.lambda / p.theta);
  return rng.poisson(g);
}

long negbin_quantile(const NegBinParams& p, double q) {
  check_negbin(p);
  if (!(q > 0.0) || !(q < 1.0))
    throw std::invalid_argument("negbin_quantile requires q in (0,1)");
  double pmf = std::exp(p.theta * std::log(p.theta / (p.theta + p.lambda)));
  double cdf = pmf;
  const double ratio_base = p.lambda / (p.lambda + p.theta);
  long y = 0;
  // pmf(y+1) = pmf(y) * (y+theta)/(y+1) * lambda/(lambda+theta)
  while (cdf < q) {
    pmf *= (y + p.theta) / (y + 1.0) * ratio_base;
    cdf += pmf;
    ++y;
    if (pmf == 0.0 && cdf < q) {
      // Numerically exhausted tail; q is within rounding of 1.
      break;
    }
  }
  return y;
}

// ---- Beta-Binomial ----------------------------------------------------------

double betabin_logpmf(long z, const BetaBinParams& p) {
  check_betabin(p);
  if (z < 0 || z > p.n) return kNegInf;
  if (p.n == 0) return 0.0;
  double a = p.nu * p.phi, b = (1.0 - p.nu) * p.phi;
  return log_choose(p.n, z) + std::lgamma(z + a) + std::lgamma(p.n - z + b) -
         std::lgamma(p.n + p.phi) - std::lgamma(a) - std::lgamma(b) + std::lgamma(p.phi);
}

long betabin_sample(const BetaBinParams& p, Rng& rng) {
  check_betabin(p);
  if (p.n == 0) return 0;
  double prob = rng.beta(p.nu * p.phi, (1.0 - p.nu) * p.phi);
  return rng.binomial(p.n, prob);
}

// ---- GDM --------------------------------------------------------------------

namespace {
void check_gdm(const GDMParams& p) {
  if (p.nu.size() != p.phi.size())
    throw std::invalid_argument("GDM requires matching nu/phi lengths");
  if (p.y < 0) throw std::invalid_argument("GDM requires y >= 0");
  for (std::size_t i = 0; i < p.nu.size(); ++i) {
    if (!(p.nu[i] > 0.0) || !(p.nu[i] < 1.0) || !(p.phi[i] > 0.0))
      throw std::invalid_argument("GDM requires nu in (0,1) and phi > 0");
  }
}
}  // namespace

double gdm_logpmf(const std::vector<long>& z, const GDMParams& p) {
  check_gdm(p);
  const std::size_t D = p.nu.size() + 1;
  if (z.size() != D) throw std::invalid_argument("gdm_logpmf: z has wrong length");
  long sum = 0;
  for (long v : z) sum += v;
  if (sum != p.y) throw std::invalid_argument("gdm_logpmf: z does not sum to y");
  for (long v : z)
    if (v < 0) return kNegInf;

  double logp = 0.0;
  long remaining = p.y;
  for (std::size_t d = 0; d + 1 < D; ++d) {
    logp += betabin_logpmf(z[d], BetaBinParams{p.nu[d], p.phi[d], remaining});
    remaining -= z[d];
  }
  return logp;  // category D is the deterministic remainder
}

std::vector<long> gdm_sample(const GDMParams& p, Rng& rng) {
  check_gdm(p);
  const std::size_t D = p.nu.size() + 1;
  std::vector<long> z(D, 0);
  long remaining = p.y;
  for (std::size_t d = 0; d + 1 < D; ++d) {
    z[d] = betabin_sample(BetaBinParams{p.nu[d], p.phi[d], remaining}, rng);
    remaining -= z[d];
  }
  z[D - 1] = remaining;
  return z;
}

double binomial_logpmf(long k, long n, double prob) {
  if (n < 0) throw std::invalid_argument("binomial_logpmf requires n >= 0");
  if (k < 0 || k > n) return kNegInf;
  if (prob <= 0.0) return k == 0 ? 0.0 : kNegInf;
  if (prob >= 1.0) return k == n ? 0.0 : kNegInf;
  return log_choose(n, k) + k * std::log(prob) + (n - k) * std::log1p(-prob);
}

}  // namespace nowcast
