#pragma once

#include <cstdint>
#include <random>

namespace nowcast {

// Per-chain random number source. Each MCMC chain owns exactly one of
// these; nothing here is shared across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  double uniform() {  // (0,1)
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    std::normal_distribution<double> d(mean, sd);
    return d(gen_);
  }

  double gamma(double shape, double scale) {
    std::gamma_distribution<double> d(shape, scale);
    return d(gen_);
  }

  double beta(double a, double b) {
    double x = gamma(a, 1.0);
    double y = gamma(b, 1.0);
    return x / (x + y);
  }

  long poisson(double mean) {
    std::poisson_distribution<long> d(mean);
    return d(gen_);
  }

  long binomial(long n, double p) {
    if (n <= 0) return 0;
    std::binomial_distribution<long> d(n, p);
    return d(gen_);
  }

  // Uniform integer in [0, n).
  long uniform_int(long n) {
    std::uniform_int_distribution<long> d(0, n - 1);
    return d(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace nowcast
