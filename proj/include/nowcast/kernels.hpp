#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "nowcast/mcmc.hpp"
#include "nowcast/rng.hpp"

namespace nowcast {

// Random-walk Metropolis step size adapted toward a target acceptance
// rate by Robbins-Monro updates on the log scale; frozen when `adapting`
// is false.
class ScalarKernel {
 public:
  ScalarKernel(std::string name, double target, double init_step = 0.3)
      : target_(target), step_(init_step) {
    stats_.name = std::move(name);
    stats_.step_trace.emplace_back(0, step_);
  }

  double step() const { return step_; }
  void mark_accept() { accepted_ = true; }

  void record(double alpha, bool adapting, long iter) {
    ++stats_.proposals;
    if (accepted_) ++stats_.accepts;
    accepted_ = false;
    if (adapting) {
      ++n_adapt_;
      double gamma = std::pow(static_cast<double>(n_adapt_), -0.7);
      step_ = std::exp(std::log(step_) + gamma * (std::min(alpha, 1.0) - target_));
      step_ = std::min(std::max(step_, 1e-6), 50.0);
    }
    if (stats_.proposals % 500 == 0) stats_.step_trace.emplace_back(iter, step_);
    stats_.final_step = step_;
  }

  BlockStats stats_;

 private:
  double target_;
  double step_;
  long n_adapt_ = 0;
  bool accepted_ = false;
};

// Multivariate random-walk Metropolis with an empirical-covariance
// proposal once `cov_start` adaptation samples have accumulated.
class MvKernel {
 public:
  MvKernel(std::string name, int dim, double target, long cov_start)
      : dim_(dim),
        target_(target),
        cov_start_(cov_start),
        step_(0.3 / std::sqrt(static_cast<double>(dim))),
        mean_(Eigen::VectorXd::Zero(dim)),
        m2_(Eigen::MatrixXd::Zero(dim, dim)),
        chol_(Eigen::MatrixXd::Identity(dim, dim)) {
    stats_.name = std::move(name);
    stats_.step_trace.emplace_back(0, step_);
  }

  Eigen::VectorXd propose(const Eigen::VectorXd& cur, Rng& rng) {
    Eigen::VectorXd z(dim_);
    for (int i = 0; i < dim_; ++i) z(i) = rng.normal();
    if (use_cov_) return cur + step_ * (chol_ * z);
    return cur + step_ * z;
  }

  void record(double alpha, bool accepted, bool adapting, long iter,
              const Eigen::VectorXd& value) {
    ++stats_.proposals;
    if (accepted) ++stats_.accepts;
    if (adapting) {
      ++n_;
      Eigen::VectorXd delta = value - mean_;
      mean_ += delta / static_cast<double>(n_);
      m2_ += delta * (value - mean_).transpose();
      if (n_ >= cov_start_ && n_ % 250 == 0) refresh_chol();
      ++n_adapt_;
      double gamma = std::pow(static_cast<double>(n_adapt_), -0.7);
      step_ = std::exp(std::log(step_) + gamma * (std::min(alpha, 1.0) - target_));
      step_ = std::min(std::max(step_, 1e-7), 20.0);
    }
    if (stats_.proposals % 500 == 0) stats_.step_trace.emplace_back(iter, step_);
    stats_.final_step = step_;
  }

  BlockStats stats_;

 private:
  void refresh_chol() {
    Eigen::MatrixXd cov = m2_ / static_cast<double>(n_ - 1);
    cov.diagonal().array() += 1e-8;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) {
      chol_ = llt.matrixL();
      use_cov_ = true;
    }
  }

  int dim_;
  double target_;
  long cov_start_;
  double step_;
  long n_ = 0, n_adapt_ = 0;
  bool use_cov_ = false;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  Eigen::MatrixXd chol_;
};

}  // namespace nowcast
