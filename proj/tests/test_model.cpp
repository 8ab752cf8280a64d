#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nowcast/model.hpp"

using namespace nowcast;
using Eigen::VectorXd;

namespace {

ReportingTriangle tiny_triangle(int T, int S, int D, unsigned seed, double scale = 20.0) {
  std::vector<std::string> regions;
  for (int s = 0; s < S; ++s) regions.push_back("R" + std::to_string(s));
  ReportingTriangle tri(T, S, D, parse_date("2020-04-01"), regions);
  Rng rng(seed);
  for (int t = 1; t <= T; ++t)
    for (int s = 1; s <= S; ++s) {
      long y = negbin_sample(NegBinParams{scale, 8.0}, rng);
      // Roughly geometric split over delays.
      long left = y;
      for (int d = 1; d < D && left > 0; ++d) {
        long z = rng.binomial(left, 0.5);
        tri.set_z(t, s, d, z);
        left -= z;
      }
      tri.set_z(t, s, D, left + tri.z(t, s, D));
    }
  return tri;
}

ModelSpec basic_spec(int d_max, int d_prime, bool f_spline = true, bool g_spline = true,
                     bool weekly = true) {
  ModelSpec spec;
  spec.d_max = d_max;
  spec.d_prime = d_prime;
  spec.f_temporal = {f_spline, 6, 0.0};
  spec.f_seasonal = {false, 8, 365.25};
  spec.g_temporal = {g_spline, 5, 0.0};
  spec.g_weekly = {weekly, 4, 7.0};
  return spec;
}

void set_block(const GdmModel& m, ParameterState& st, const std::string& name,
               const VectorXd& v) {
  const auto& b = m.layout().block(name);
  REQUIRE(b.size == v.size());
  st.params.segment(b.offset, b.size) = v;
}

ParameterState zero_state(const GdmModel& m) {
  ParameterState st;
  st.params = VectorXd::Zero(m.layout().total);
  st.latent_y.assign(m.latent_rows().size(), 0);
  st.latent_z.assign(m.missing_cells().size(), 0);
  for (std::size_t i = 0; i < m.latent_rows().size(); ++i) {
    auto [t, s] = m.latent_rows()[i];
    st.latent_y[i] = m.data().observed_partial_sum(t, s);
  }
  return st;
}

}  // namespace

TEST_CASE("eval_f identity and constant models") {
  auto tri = tiny_triangle(10, 2, 3, 1);
  auto ct = censor_at(tri, 10);
  GdmModel m(basic_spec(3, 2), ct);
  auto st = zero_state(m);
  CHECK(std::exp(m.eval_f(st, 3, 1)) == doctest::Approx(1.0));

  set_block(m, st, "iota", VectorXd::Constant(2, std::log(10.0)));
  for (int t = 1; t <= 10; ++t)
    CHECK(std::exp(m.eval_f(st, t, 2)) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("eval_f matches a dense matrix-multiply oracle") {
  auto tri = tiny_triangle(14, 2, 3, 2);
  auto ct = censor_at(tri, 14);
  GdmModel m(basic_spec(3, 2), ct);
  Rng rng(7);
  auto st = m.init_state(rng);

  const auto& term = m.f_terms()[0];
  for (int t = 1; t <= 14; ++t)
    for (int s = 1; s <= 2; ++s) {
      double oracle = st.params(m.layout().block("iota").offset + s - 1);
      VectorXd kappa = st.params.segment(term.off_region + (s - 1) * term.K, term.K);
      oracle += (term.Xt * kappa)(t - 1);
      CHECK(m.eval_f(st, t, s) == doctest::Approx(oracle).epsilon(1e-12));
    }
}

TEST_CASE("survivor curve at psi = (0,1,2) matches the standard normal CDF") {
  auto tri = tiny_triangle(6, 1, 3, 3);
  auto ct = censor_at(tri, 6);
  auto spec = basic_spec(3, 2, true, false, false);  // no delay-model splines
  GdmModel m(spec, ct);
  auto st = zero_state(m);
  // psi raw = (psi_1, log increments) = (0, 0, 0) -> psi = (0, 1, 2).
  set_block(m, st, "psi_raw", VectorXd::Zero(3));
  VectorXd S = m.eval_survivor_curve(st, 2, 1);
  CHECK(S(0) == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(S(1) == doctest::Approx(0.8413).epsilon(1e-4));
  CHECK(S(2) == doctest::Approx(0.9772).epsilon(1e-4));
}

TEST_CASE("a constant added to the delay offset shifts probit(S) exactly") {
  auto tri = tiny_triangle(6, 1, 3, 4);
  auto ct = censor_at(tri, 6);
  auto spec = basic_spec(3, 2, true, false, false);
  GdmModel m(spec, ct);
  auto st = zero_state(m);
  VectorXd psi_raw(3);
  psi_raw << -0.4, -0.7, 0.2;
  set_block(m, st, "psi_raw", psi_raw);
  VectorXd S0 = m.eval_survivor_curve(st, 1, 1);

  auto st2 = st;
  st2.params(m.layout().block("psi_raw").offset) += 0.5;  // shifts the whole curve
  VectorXd S1 = m.eval_survivor_curve(st2, 1, 1);
  for (int d = 0; d < 3; ++d)
    CHECK(probit(S1(d)) - probit(S0(d)) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("survivor curves are nondecreasing for random states") {
  auto tri = tiny_triangle(8, 2, 5, 5);
  auto ct = censor_at(tri, 8);
  GdmModel m(basic_spec(5, 4), ct);
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    auto st = m.init_state(rng, 2.0);
    for (int t = 1; t <= 8; ++t)
      for (int s = 1; s <= 2; ++s) {
        VectorXd S = m.eval_survivor_curve(st, t, s);
        for (int d = 1; d < S.size(); ++d) CHECK(S(d) >= S(d - 1));
        VectorXd ps = m.psi(st, s);
        for (int d = 1; d < ps.size(); ++d) CHECK(ps(d) > ps(d - 1));
      }
  }
}

TEST_CASE("survivor_to_relative_means hand values") {
  VectorXd S(2);
  S << 0.25, 0.5;
  VectorXd nu = survivor_to_relative_means(S);
  CHECK(nu(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(nu(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("uniform stick gives nu_d = 1/(D-d+1)") {
  const int D = 6;
  VectorXd S(D - 1);
  for (int d = 1; d < D; ++d) S(d - 1) = static_cast<double>(d) / D;
  VectorXd nu = survivor_to_relative_means(S);
  for (int d = 1; d < D; ++d)
    CHECK(nu(d - 1) == doctest::Approx(1.0 / (D - d + 1)).epsilon(1e-12));
}

TEST_CASE("stick-breaking reconstruction inverts the transform") {
  Rng rng(13);
  for (int rep = 0; rep < 500; ++rep) {
    int D = 2 + static_cast<int>(rng.uniform_int(6));
    VectorXd S(D);
    double cur = 0.0;
    for (int d = 0; d < D; ++d) {
      cur += (1.0 - cur) * (0.05 + 0.9 * rng.uniform());
      S(d) = std::min(cur, 1.0 - 1e-6);
    }
    VectorXd nu = survivor_to_relative_means(S);
    // Reconstruct S by stick-breaking.
    double prev = 0.0;
    for (int d = 0; d < D; ++d) {
      double s_d = prev + nu(d) * (1.0 - prev);
      CHECK(s_d == doctest::Approx(S(d)).epsilon(1e-12));
      prev = s_d;
    }
  }
  VectorXd bad(2);
  bad << 0.5, 0.4;
  CHECK_THROWS_AS(survivor_to_relative_means(bad), std::invalid_argument);
}

TEST_CASE("hazard link: zero state gives nu = 0.5, saturation gives nu near 0") {
  auto tri = tiny_triangle(6, 1, 4, 6);
  auto ct = censor_at(tri, 6);
  auto spec = basic_spec(4, 3, true, false, false);
  spec.link = LinkVariant::hazard_logit;
  GdmModel m(spec, ct);
  auto st = zero_state(m);
  VectorXd nu = m.relative_means(st, 1, 1);
  for (int d = 0; d < 3; ++d) CHECK(nu(d) == doctest::Approx(0.5).epsilon(1e-12));

  set_block(m, st, "psi_raw", VectorXd::Constant(4, -30.0));
  nu = m.relative_means(st, 1, 1);
  for (int d = 0; d < 3; ++d) CHECK(nu(d) <= 1e-12);
}

TEST_CASE("two-delay case: survivor and hazard parametrize the same split") {
  // With D = 2 both variants model one Binomial split; matched link values
  // give identical relative means.
  auto tri = tiny_triangle(5, 1, 2, 8);
  auto ct = censor_at(tri, 5);
  auto spec_s = basic_spec(2, 1, true, false, false);
  auto spec_h = spec_s;
  spec_h.link = LinkVariant::hazard_logit;
  GdmModel ms(spec_s, ct), mh(spec_h, ct);

  for (double target : {0.1, 0.35, 0.5, 0.82}) {
    auto sts = zero_state(ms);
    auto sth = zero_state(mh);
    VectorXd raw_s(2), raw_h(2);
    raw_s << probit(target), 0.0;
    raw_h << logit(target), 0.0;
    set_block(ms, sts, "psi_raw", raw_s);
    set_block(mh, sth, "psi_raw", raw_h);
    CHECK(ms.relative_means(sts, 3, 1)(0) == doctest::Approx(target).epsilon(1e-10));
    CHECK(mh.relative_means(sth, 3, 1)(0) == doctest::Approx(target).epsilon(1e-10));
  }
}

TEST_CASE("degenerate delay dimension reduces the likelihood to the NB term") {
  std::vector<std::string> regions{"A"};
  ReportingTriangle tri(1, 1, 1, parse_date("2020-01-01"), regions);
  tri.set_z(1, 1, 1, 9);
  auto ct = censor_at(tri, 1);
  ModelSpec spec = basic_spec(1, 1, false, false, false);
  GdmModel m(spec, ct);
  CHECK(m.n_model_delays() == 0);
  auto st = zero_state(m);
  set_block(m, st, "iota", VectorXd::Constant(1, std::log(4.0)));
  set_block(m, st, "log_theta", VectorXd::Constant(1, std::log(3.0)));
  CHECK(m.log_likelihood(st) ==
        doctest::Approx(negbin_logpmf(9, NegBinParams{4.0, 3.0})).epsilon(1e-12));
}

TEST_CASE("likelihood matches a direct-sum oracle on a fully observed dataset") {
  std::vector<std::string> regions{"A"};
  ReportingTriangle tri(3, 1, 3, parse_date("2020-01-01"), regions);
  long zs[3][3] = {{5, 3, 1}, {2, 2, 2}, {7, 0, 1}};
  for (int t = 1; t <= 3; ++t)
    for (int d = 1; d <= 3; ++d) tri.set_z(t, 1, d, zs[t - 1][d - 1]);
  auto ct = censor_at(tri, 3);

  // t0 = T leaves rows 2 and 3 partially observed; use latents equal to
  // the true totals so the oracle can be written directly.
  GdmModel m(basic_spec(3, 2), ct);
  Rng rng(3);
  auto st = m.init_state(rng);
  for (std::size_t i = 0; i < m.latent_rows().size(); ++i) {
    auto [t, s] = m.latent_rows()[i];
    st.latent_y[i] = tri.y(t, s);
  }

  double oracle = 0.0;
  for (int t = 1; t <= 3; ++t) {
    long y = tri.y(t, 1);
    double lambda = std::exp(m.eval_f(st, t, 1));
    oracle += negbin_logpmf(y, NegBinParams{lambda, m.theta(st, 1)});
    VectorXd nu = m.relative_means(st, t, 1);
    long remaining = y;
    int observed = std::min(ct.observed_delays(t), 2);  // D' = 2
    for (int d = 1; d <= observed; ++d) {
      oracle += betabin_logpmf(tri.z(t, 1, d),
                               BetaBinParams{nu(d - 1), m.phi(st, 1, d), remaining});
      remaining -= tri.z(t, 1, d);
    }
  }
  CHECK(m.log_likelihood(st) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("doubling theta changes only the NB part of the likelihood") {
  auto tri = tiny_triangle(8, 2, 4, 21);
  auto ct = censor_at(tri, 8);
  GdmModel m(basic_spec(4, 3), ct);
  Rng rng(5);
  auto st = m.init_state(rng);
  auto st2 = st;
  const auto& b = m.layout().block("log_theta");
  st2.params.segment(b.offset, b.size).array() += std::log(2.0);

  auto nb_sum = [&](const ParameterState& state) {
    double out = 0.0;
    for (int t = 1; t <= 8; ++t)
      for (int s = 1; s <= 2; ++s)
        out += negbin_logpmf(m.effective_y(state, t, s),
                             NegBinParams{std::exp(m.eval_f(state, t, s)),
                                          m.theta(state, s)});
    return out;
  };
  double delay1 = m.log_likelihood(st) - nb_sum(st);
  double delay2 = m.log_likelihood(st2) - nb_sum(st2);
  CHECK(delay1 == doctest::Approx(delay2).epsilon(1e-10));
}

TEST_CASE("likelihood ignores z values at delays beyond D' given the total") {
  auto tri = tiny_triangle(6, 1, 5, 33, 30.0);
  // Move mass between two observed cells beyond D' = 2, keeping y fixed.
  tri.set_z(2, 1, 4, tri.z(2, 1, 4) + 3);
  auto tri2 = tri;
  tri2.set_z(2, 1, 4, tri.z(2, 1, 4) - 3);
  tri2.set_z(2, 1, 5, tri2.z(2, 1, 5) + 3);
  REQUIRE(tri.y(2, 1) == tri2.y(2, 1));

  auto spec = basic_spec(5, 2);
  auto ct1 = censor_at(tri, 6);
  auto ct2 = censor_at(tri2, 6);
  GdmModel m1(spec, ct1), m2(spec, ct2);
  Rng rng(6);
  auto st = m1.init_state(rng);
  auto st2 = st;  // identical parameters and latents on both datasets
  CHECK(m1.log_likelihood(st) == doctest::Approx(m2.log_likelihood(st2)).epsilon(1e-13));
}

TEST_CASE("Gamma(2, 0.02) prior has the paper's central 95% interval") {
  // Integrate the density over [12.1, 279] by fine trapezoid quadrature.
  auto pdf = [](double x) {
    return 0.02 * 0.02 * x * std::exp(-0.02 * x);  // shape 2, rate 0.02
  };
  auto integrate = [&](double lo, double hi) {
    const int n = 400000;
    double h = (hi - lo) / n, acc = 0.5 * (pdf(lo) + pdf(hi));
    for (int i = 1; i < n; ++i) acc += pdf(lo + i * h);
    return acc * h;
  };
  CHECK(integrate(0.0, 12.1) == doctest::Approx(0.025).epsilon(0.02));
  CHECK(integrate(0.0, 279.0) == doctest::Approx(0.975).epsilon(0.001));
}

TEST_CASE("log_prior matches a term-by-term oracle") {
  auto tri = tiny_triangle(10, 2, 4, 40);
  auto ct = censor_at(tri, 10);
  auto spec = basic_spec(4, 3);
  GdmModel m(spec, ct);
  Rng rng(17);
  auto st = m.init_state(rng, 1.5);

  const double log2pi = std::log(2.0 * M_PI);
  auto mvn = [&](const VectorXd& x, const VectorXd& mean, const Eigen::MatrixXd& B,
                 double sigma, double logdetB) {
    VectorXd diff = x - mean;
    int K = static_cast<int>(x.size());
    return 0.5 * (logdetB - 2.0 * K * std::log(sigma)) - 0.5 * K * log2pi -
           0.5 * diff.dot(B * diff) / (sigma * sigma);
  };
  auto gamma_lp = [](double x, double shape, double rate) {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
           rate * x;
  };

  double oracle = 0.0;
  for (int s = 1; s <= 2; ++s) oracle += norm_logpdf(m.iota(st, s), 0.0, 10.0);
  auto add_term = [&](const NestedTerm& term) {
    double sig_o = std::exp(st.params(term.off_lsig_overall));
    VectorXd ko = st.params.segment(term.off_overall, term.K);
    oracle += mvn(ko, VectorXd::Zero(term.K), term.B, sig_o, term.logdetB);
    oracle += std::log(2.0) + norm_logpdf(sig_o, 0.0, 1.0) + std::log(sig_o);
    for (int s = 0; s < 2; ++s) {
      double sig_s = std::exp(st.params(term.off_lsig_region + s));
      VectorXd ks = st.params.segment(term.off_region + s * term.K, term.K);
      oracle += mvn(ks, ko, term.B, sig_s, term.logdetB);
      oracle += std::log(2.0) + norm_logpdf(sig_s, 0.0, 1.0) + std::log(sig_s);
    }
  };
  for (const auto& term : m.f_terms()) add_term(term);
  for (const auto& term : m.g_terms()) add_term(term);

  const auto& psi_block = m.layout().block("psi_raw");
  for (int s = 1; s <= 2; ++s) {
    VectorXd ps = m.psi(st, s);
    oracle += norm_logpdf(ps(0), 0.0, 10.0);
    for (int d = 1; d < 4; ++d)
      oracle += norm_logpdf(ps(d), ps(d - 1), 10.0) + std::log(2.0) +
                st.params(psi_block.offset + (s - 1) * 4 + d);
  }
  for (int s = 1; s <= 2; ++s) {
    oracle += gamma_lp(m.theta(st, s), 2.0, 0.02) + std::log(m.theta(st, s));
    for (int d = 1; d <= 3; ++d)
      oracle += gamma_lp(m.phi(st, s, d), 2.0, 0.02) + std::log(m.phi(st, s, d));
  }
  CHECK(m.log_prior(st) == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("log_posterior is finite for valid random states") {
  auto tri = tiny_triangle(12, 3, 4, 50);
  auto ct = censor_at(tri, 10);
  GdmModel m(basic_spec(4, 3), ct);
  Rng rng(23);
  for (int rep = 0; rep < 50; ++rep) {
    auto st = m.init_state(rng, 1.0);
    CHECK(std::isfinite(m.log_posterior(st)));
  }
}

TEST_CASE("MAP of the mean model separates from a frozen delay block") {
  // Single fully observed series, intercept-only mean model: the MAP of
  // iota must match a standalone NB regression oracle because the delay
  // terms do not involve lambda.
  std::vector<std::string> regions{"A"};
  ReportingTriangle tri(12, 1, 3, parse_date("2020-02-01"), regions);
  Rng gen(99);
  for (int t = 1; t <= 12; ++t) {
    long y = negbin_sample(NegBinParams{25.0, 10.0}, gen);
    long z1 = gen.binomial(y, 0.4);
    long z2 = gen.binomial(y - z1, 0.6);
    tri.set_z(t, 1, 1, z1);
    tri.set_z(t, 1, 2, z2);
    tri.set_z(t, 1, 3, y - z1 - z2);
  }
  // Censor nothing: every row has all delays observable.
  auto full = censor_at(tri, 12);
  auto spec = basic_spec(3, 2, false, false, false);
  spec.fixed_theta = 10.0;
  GdmModel m(spec, full);
  Rng rng(1);
  auto st = m.init_state(rng);
  // Pin the latent totals of the trailing partially observed rows to the
  // truth so the oracle below sees the same y values.
  for (std::size_t i = 0; i < m.latent_rows().size(); ++i) {
    auto [t, s] = m.latent_rows()[i];
    st.latent_y[i] = tri.y(t, s);
  }

  auto golden_max = [](auto f, double lo, double hi) {
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    while (b - a > 1e-10) {
      double c = b - gr * (b - a), d = a + gr * (b - a);
      if (f(c) > f(d))
        b = d;
      else
        a = c;
    }
    return 0.5 * (a + b);
  };

  const int iota_off = m.layout().block("iota").offset;
  double map_model = golden_max(
      [&](double iota) {
        auto trial = st;
        trial.params(iota_off) = iota;
        return m.log_posterior(trial);
      },
      0.0, 6.0);
  double map_oracle = golden_max(
      [&](double iota) {
        double lp = norm_logpdf(iota, 0.0, 10.0);
        for (int t = 1; t <= 12; ++t)
          lp += negbin_logpmf(tri.y(t, 1), NegBinParams{std::exp(iota), 10.0});
        return lp;
      },
      0.0, 6.0);
  CHECK(map_model == doctest::Approx(map_oracle).epsilon(1e-6));
}

TEST_CASE("under-reporting layer requires an informative prior") {
  ModelSpec spec = basic_spec(3, 2);
  spec.underreporting.enabled = true;
  spec.underreporting.prior_sd = 50.0;  // flat: not identifiable
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("non-identifiable"),
                       std::invalid_argument);
  spec.underreporting.prior_sd = 0.5;
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("under-reporting Binomial term matches the direct pmf oracle") {
  for (long y : {0L, 3L, 9L}) {
    long x = y;
    CHECK(binomial_logpmf(y, x, 0.5) ==
          doctest::Approx(log_choose(x, y) + x * std::log(0.5)).epsilon(1e-12));
  }
  CHECK(binomial_logpmf(4, 10, 0.5) ==
        doctest::Approx(log_choose(10, 4) + 10 * std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("under-reporting likelihood augments the NB with a thinning term") {
  auto tri = tiny_triangle(4, 1, 3, 61);
  auto ct = censor_at(tri, 4);
  auto spec = basic_spec(3, 2);
  spec.underreporting.enabled = true;
  spec.underreporting.prior_mean = 1.0;
  spec.underreporting.prior_sd = 0.5;
  GdmModel m(spec, ct);
  Rng rng(8);
  auto st = m.init_state(rng);
  REQUIRE(st.latent_x.size() == 4);
  CHECK(std::isfinite(m.log_posterior(st)));

  auto [loglam, logit_pi] = m.underreporting_terms(st, 2, 1);
  CHECK(loglam == doctest::Approx(m.eval_f(st, 2, 1)));
  CHECK(logit_pi == doctest::Approx(st.params(m.layout().block("ur_intercept").offset)));

  // x below y is impossible.
  auto bad = st;
  bad.latent_x[0] = m.effective_y(st, 1, 1) - 1;
  CHECK(m.log_likelihood(bad) == -INFINITY);
}

TEST_CASE("ModelSpec JSON round trip") {
  ModelSpec spec = basic_spec(7, 4);
  spec.link = LinkVariant::hazard_logit;
  spec.priors.theta_rate = 0.05;
  spec.underreporting = {true, -0.3, 0.7};
  spec.fixed_theta = 12.5;
  auto spec2 = ModelSpec::from_json(spec.to_json());
  CHECK(spec2.d_max == 7);
  CHECK(spec2.d_prime == 4);
  CHECK(spec2.link == LinkVariant::hazard_logit);
  CHECK(spec2.priors.theta_rate == doctest::Approx(0.05));
  CHECK(spec2.underreporting.enabled);
  CHECK(spec2.underreporting.prior_mean == doctest::Approx(-0.3));
  CHECK(*spec2.fixed_theta == doctest::Approx(12.5));
  CHECK(spec2.f_temporal.enabled);
  CHECK(spec2.f_temporal.K == 6);

  CHECK_THROWS_AS(ModelSpec::from_json("{not json"), std::invalid_argument);
  CHECK_THROWS_AS(ModelSpec::from_json("{\"d_max\": 3, \"d_prime\": 9}"),
                  std::invalid_argument);
}
