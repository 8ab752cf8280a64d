#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "nowcast/distributions.hpp"

using namespace nowcast;

namespace {
double poisson_logpmf(long y, double mean) {
  return y * std::log(mean) - mean - lgamma_int(y + 1);
}

// All compositions of y into D non-negative parts.
void compositions(long y, int D, std::vector<long>& cur,
                  std::vector<std::vector<long>>& out) {
  if (D == 1) {
    cur.push_back(y);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (long v = 0; v <= y; ++v) {
    cur.push_back(v);
    compositions(y - v, D - 1, cur, out);
    cur.pop_back();
  }
}

std::vector<std::vector<long>> all_compositions(long y, int D) {
  std::vector<std::vector<long>> out;
  std::vector<long> cur;
  compositions(y, D, cur, out);
  return out;
}
}  // namespace

TEST_CASE("negbin closed form at zero") {
  NegBinParams p{7.3, 2.4};
  CHECK(negbin_logpmf(0, p) ==
        doctest::Approx(p.theta * std::log(p.theta / (p.theta + p.lambda))).epsilon(1e-14));
}

TEST_CASE("negbin approaches Poisson as theta grows") {
  NegBinParams p{5.0, 1e6};
  for (long y = 0; y <= 30; ++y)
    CHECK(negbin_logpmf(y, p) == doctest::Approx(poisson_logpmf(y, 5.0)).epsilon(1e-4));
}

TEST_CASE("negbin pmf sums to one") {
  NegBinParams p{3.0, 2.0};
  double total = 0.0;
  for (long y = 0; y <= 2000; ++y) total += std::exp(negbin_logpmf(y, p));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("negbin rejects invalid parameters and is -inf off support") {
  CHECK_THROWS_AS(negbin_logpmf(1, NegBinParams{-1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(negbin_logpmf(1, NegBinParams{1.0, 0.0}), std::invalid_argument);
  CHECK(negbin_logpmf(-1, NegBinParams{1.0, 1.0}) == -INFINITY);
}

TEST_CASE("negbin quantile at the bottom of the support") {
  CHECK(negbin_quantile(NegBinParams{4.0, 5.0}, 1e-12) == 0);
  CHECK_THROWS_AS(negbin_quantile(NegBinParams{4.0, 5.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(negbin_quantile(NegBinParams{4.0, 5.0}, 1.0), std::invalid_argument);
}

TEST_CASE("negbin sampler moments") {
  NegBinParams p{4.0, 5.0};
  Rng rng(123);
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = static_cast<double>(negbin_sample(p, rng));
    sum += v;
    sumsq += v * v;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  const double true_var = 4.0 + 16.0 / 5.0;  // 7.2
  double se_mean = std::sqrt(true_var / n);
  CHECK(std::abs(mean - 4.0) < 3.0 * se_mean);
  CHECK(var == doctest::Approx(true_var).epsilon(0.10));
}

TEST_CASE("negbin quantile agrees with an exhaustive CDF scan") {
  NegBinParams p{6.0, 3.0};
  double cdf = 0.0;
  long median_oracle = -1;
  for (long y = 0; y <= 10000 && median_oracle < 0; ++y) {
    cdf += std::exp(negbin_logpmf(y, p));
    if (cdf >= 0.5) median_oracle = y;
  }
  CHECK(negbin_quantile(p, 0.5) == median_oracle);
}

TEST_CASE("betabin degenerate trials") {
  CHECK(betabin_logpmf(0, BetaBinParams{0.4, 3.0, 0}) == 0.0);
}

TEST_CASE("betabin approaches Binomial as phi grows") {
  BetaBinParams p{0.3, 1e7, 20};
  for (long z = 0; z <= 20; ++z)
    CHECK(betabin_logpmf(z, p) == doctest::Approx(binomial_logpmf(z, 20, 0.3)).epsilon(1e-4));
}

TEST_CASE("betabin pmf sums to one") {
  BetaBinParams p{0.5, 2.0, 5};
  double total = 0.0;
  for (long z = 0; z <= 5; ++z) total += std::exp(betabin_logpmf(z, p));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("betabin off-support and invalid parameters") {
  BetaBinParams p{0.5, 2.0, 5};
  CHECK(betabin_logpmf(-1, p) == -INFINITY);
  CHECK(betabin_logpmf(6, p) == -INFINITY);
  CHECK_THROWS_AS(betabin_logpmf(1, BetaBinParams{0.0, 1.0, 5}), std::invalid_argument);
  CHECK_THROWS_AS(betabin_logpmf(1, BetaBinParams{0.5, -1.0, 5}), std::invalid_argument);
}

TEST_CASE("betabin variance exceeds binomial variance at equal mean") {
  for (long n : {5L, 12L, 30L}) {
    for (double nu : {0.2, 0.5, 0.8}) {
      for (double phi : {0.5, 2.0, 10.0}) {
        BetaBinParams p{nu, phi, n};
        double m = 0.0, m2 = 0.0;
        for (long z = 0; z <= n; ++z) {
          double w = std::exp(betabin_logpmf(z, p));
          m += w * z;
          m2 += w * z * z;
        }
        double var = m2 - m * m;
        double binom_var = n * nu * (1.0 - nu);
        CHECK(m == doctest::Approx(n * nu).epsilon(1e-8));
        CHECK(var > binom_var);
      }
    }
  }
}

TEST_CASE("gdm degenerate single category") {
  GDMParams p;
  p.y = 9;
  CHECK(gdm_logpmf({9}, p) == 0.0);
}

TEST_CASE("gdm pmf sums to one over all compositions") {
  GDMParams p;
  p.nu = {0.37, 0.62};
  p.phi = {1.7, 4.2};
  p.y = 6;
  auto comps = all_compositions(6, 3);
  REQUIRE(comps.size() == 28);
  double total = 0.0;
  for (const auto& z : comps) total += std::exp(gdm_logpmf(z, p));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("gdm approaches Multinomial as phi grows") {
  GDMParams p;
  p.nu = {0.3, 0.6};
  p.phi = {1e7, 1e7};
  p.y = 6;
  // Stick-breaking probabilities implied by the relative means.
  double p1 = 0.3, p2 = (1.0 - 0.3) * 0.6, p3 = 1.0 - p1 - p2;
  for (const auto& z : all_compositions(6, 3)) {
    double mult = lgamma_int(7) - lgamma_int(z[0] + 1) - lgamma_int(z[1] + 1) -
                  lgamma_int(z[2] + 1) + z[0] * std::log(p1) + z[1] * std::log(p2) +
                  z[2] * std::log(p3);
    CHECK(gdm_logpmf(z, p) == doctest::Approx(mult).epsilon(1e-3));
  }
}

TEST_CASE("gdm rejects sum mismatch") {
  GDMParams p;
  p.nu = {0.5};
  p.phi = {2.0};
  p.y = 4;
  CHECK_THROWS_AS(gdm_logpmf({1, 1}, p), std::invalid_argument);
}

TEST_CASE("gdm_sample with no mass returns the zero vector") {
  GDMParams p;
  p.nu = {0.5, 0.5};
  p.phi = {2.0, 2.0};
  p.y = 0;
  Rng rng(1);
  CHECK(gdm_sample(p, rng) == std::vector<long>{0, 0, 0});
}

TEST_CASE("gdm_sample law of large numbers in the multinomial limit") {
  GDMParams p;
  p.nu = {0.5};
  p.phi = {1e7};
  p.y = 10000;
  Rng rng(77);
  auto z = gdm_sample(p, rng);
  CHECK(std::abs(z[0] / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("gdm_sample frequencies match the pmf") {
  GDMParams p;
  p.nu = {0.45, 0.3};
  p.phi = {2.5, 5.0};
  p.y = 6;
  Rng rng(2024);
  const int n = 100000;
  std::map<std::vector<long>, long> freq;
  for (int i = 0; i < n; ++i) {
    auto z = gdm_sample(p, rng);
    long total = 0;
    for (long v : z) total += v;
    REQUIRE(total == 6);  // sum constraint holds on every draw
    ++freq[z];
  }
  for (const auto& z : all_compositions(6, 3)) {
    double prob = std::exp(gdm_logpmf(z, p));
    double se = std::sqrt(prob * (1.0 - prob) / n);
    double observed = freq.count(z) ? freq[z] / static_cast<double>(n) : 0.0;
    CHECK(std::abs(observed - prob) < 4.0 * se + 1e-12);
  }
}

TEST_CASE("probit inverts the normal CDF") {
  for (double p : {0.001, 0.01, 0.3, 0.5, 0.8413447460685429, 0.99, 0.999}) {
    CHECK(norm_cdf(probit(p)) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(probit(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_THROWS_AS(probit(0.0), std::invalid_argument);
}

TEST_CASE("logistic/logit round trip") {
  for (double x : {-8.0, -1.0, 0.0, 0.4, 6.0})
    CHECK(logit(logistic(x)) == doctest::Approx(x).epsilon(1e-10));
}
