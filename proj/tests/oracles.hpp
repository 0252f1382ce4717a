// Independent oracles used to freeze expected values. These deliberately
// avoid the library's implementation paths: brute-force series, direct
// enumeration, closed forms, and Monte-Carlo simulation only.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

namespace oracles {

/// Plain truncated Taylor series, no scaling/squaring.
inline Eigen::MatrixXd taylor_expm(const Eigen::MatrixXd& a, int terms = 30) {
  Eigen::MatrixXd sum = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (int k = 1; k <= terms; ++k) {
    term = term * a / static_cast<double>(k);
    sum += term;
  }
  return sum;
}

/// Closed-form KL(N(mu, sigma^2) || N(0,1)) summed over dimensions.
inline double gaussian_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var) {
  double kl = 0;
  for (int i = 0; i < mu.size(); ++i)
    kl += 0.5 * (mu[i] * mu[i] + std::exp(log_var[i]) - log_var[i] - 1.0);
  return kl;
}

/// Binary cross-entropy from a 2-class logit pair against class t.
inline double two_class_ce(double logit0, double logit1, int t) {
  double m = std::max(logit0, logit1);
  double lse = m + std::log(std::exp(logit0 - m) + std::exp(logit1 - m));
  return lse - (t == 0 ? logit0 : logit1);
}

/// Central finite difference d f / d x_i with step h.
template <typename F>
double central_diff(F f, std::vector<double>& x, size_t i, double h = 1e-4) {
  double orig = x[i];
  x[i] = orig + h;
  double fp = f();
  x[i] = orig - h;
  double fm = f();
  x[i] = orig;
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double got, double want) {
  double denom = std::max({std::abs(got), std::abs(want), 1e-8});
  return std::abs(got - want) / denom;
}

/// Scales a random matrix to the requested spectral norm.
inline Eigen::MatrixXd random_with_spectral_norm(int n, double target, std::mt19937_64& eng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = nd(eng);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  double sn = svd.singularValues()(0);
  return a * (target / sn);
}

}  // namespace oracles
